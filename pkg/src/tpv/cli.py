"""Command-line front end.

    tpv <command> --spec problem.json --out results/

Commands: simulate, envelope, validate, verify, l2gain, incremental,
lowerbound.  Exit status 0 means certified / completed, 2 means no
certificate was found at the chosen degrees (inconclusive, not a proof of
the opposite), 1 means an error.  Outputs are written only after a stage
succeeds; run times go to ``meta.json`` so the other files are reproducible
byte for byte.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import datapipe as dp
from .dissipativity import (
    CertificationError,
    MultiplierDegrees,
    OperationSet,
    Partition,
    StorageTemplate,
    SupplyRate,
    assemble_psi,
    assemble_psi_partitioned,
    certificate_bundle,
    check_supply,
    data_hash,
    l2_gain_bisect,
    poly_from_list,
)
from .incremental import (
    DifferentialSupply,
    MetricTemplate,
    assemble_psi_incremental,
    incremental_from_differential,
    incremental_l2_gain_bisect,
    metric_value,
)
from .polyalg import Polynomial
from .setmem import CoefficientEllipsoid, EllipsoidError, Envelope, Sample, fit_envelope, rank_check
from .taylor import (
    DerivativeBounds,
    OutputStructure,
    SharedTaylor,
    StructureSpec,
    TaylorBasis,
    joint_model,
    sector_bound,
    structured_sector,
)
from . import validation as vd

log = logging.getLogger("tpv")

EXIT_OK, EXIT_ERROR, EXIT_NO_CERT = 0, 1, 2
NO_CERT_MSG = "no certificate at these degrees (inconclusive)"


class SpecError(ValueError):
    pass


class StageError(RuntimeError):
    def __init__(self, stage: str, msg: str):
        super().__init__(f"[{stage}] {msg}")
        self.stage = stage


# ---------------------------------------------------------------------------
# spec parsing
# ---------------------------------------------------------------------------


def load_spec(path) -> dict:
    p = Path(path)
    if not p.is_file():
        raise StageError("spec", f"spec file not found: {path}")
    try:
        spec = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise StageError("spec", f"invalid JSON: {exc}") from exc
    if not isinstance(spec, dict):
        raise StageError("spec", "top level must be an object")
    spec["_dir"] = str(p.parent)
    return spec


def _path(spec, rel) -> Path:
    p = Path(rel)
    return p if p.is_absolute() else Path(spec.get("_dir", ".")) / p


def _need(d: dict, key: str, where: str):
    if key not in d:
        raise SpecError(f"{where}: missing field {key!r}")
    return d[key]


def _dims(spec):
    nx = int(_need(spec, "nx", "spec"))
    nu = int(spec.get("nu", 0))
    return nx, nu


def _poly(spec, data) -> Polynomial:
    nx, nu = _dims(spec)
    return poly_from_list(nx + nu, data)


def read_samples(spec, key: str = "fit") -> list[Sample]:
    data = _need(spec, "data", "spec")
    rel = _need(data, key, "data")
    p = _path(spec, rel)
    if not p.is_file():
        raise StageError("data", f"data file not found: {p}")
    samples, nx = dp.read_samples_csv(p)
    if nx != _dims(spec)[0]:
        raise SpecError(f"{p}: file has {nx} states, spec says {_dims(spec)[0]}")
    noise = spec.get("noise")
    if noise is not None and key == "fit":
        nm = dp.NoiseModel(noise.get("kind", "amplitude"), float(noise.get("level", 0.0)), bool(noise.get("per_component", False)))
        Y = np.array([s.y_tilde for s in samples])
        E = nm.bound_measured(Y)
        samples = [Sample(s.x_tilde, s.y_tilde, E[i]) for i, s in enumerate(samples)]
    return samples


def _bounds_for(basis: TaylorBasis, ny: int, bspec: dict, M: float | np.ndarray | None, support=None):
    if "values" in bspec and M is None:
        vals = {(int(i), tuple(a)): float(m) for i, a, m in bspec["values"]}
        return DerivativeBounds(ny, basis.n, basis.k + 1, vals)
    m = float(bspec.get("M", 0.0)) if M is None else M
    if support is None and "support" in bspec:
        support = [(int(i), tuple(a)) for i, a in bspec["support"]]
    if np.ndim(m) > 0:
        m = np.asarray(m, dtype=float)
        base = DerivativeBounds.uniform(ny, basis.n, basis.k, 1.0) if support is None else DerivativeBounds.on_support(ny, basis.n, basis.k, support, 1.0)
        return DerivativeBounds(ny, basis.n, basis.k + 1, {key: float(m[key[0]]) for key in base.values})
    if support is None:
        return DerivativeBounds.uniform(ny, basis.n, basis.k, m)
    return DerivativeBounds.on_support(ny, basis.n, basis.k, support, m)


def build_models(spec, M=None, k=None) -> list:
    """One sector model per expansion point (``basis.centers``)."""
    nx, nu = _dims(spec)
    n = nx + nu
    bspec = spec.get("bounds", {})
    if "structure" in spec:
        st = spec["structure"]
        outs = []
        for o in st["outputs"]:
            outs.append(OutputStructure(
                _poly(spec, o.get("offset", [])),
                [(name, _poly(spec, p)) for name, p in o.get("params", [])],
                [(sid, float(c), tuple(v)) for sid, c, v in o.get("shared", [])],
            ))
        sspec = StructureSpec(n, outs)
        ncent = len(next(iter(st["shared"].values()))["centers"]) if st.get("shared") else 1
        models = []
        for ci in range(ncent):
            sub = {}
            for sid, sd in st.get("shared", {}).items():
                kk = int(sd.get("k", 1) if k is None else k)
                b = TaylorBasis(sd["centers"][ci], kk, int(sd.get("min_order", 0)))
                mval = float(sd.get("M", 0.0))
                if M is not None:
                    mval = float(M) * float(sd.get("M_rel", 1.0))
                sub[sid] = SharedTaylor(b, DerivativeBounds.uniform(1, b.n, kk, mval))
            models.append(structured_sector(sspec, sub))
        return models
    basis = _need(spec, "basis", "spec")
    kk = int(basis.get("k", 1) if k is None else k)
    models = []
    for w in _need(basis, "centers", "basis"):
        if len(w) != n:
            raise SpecError(f"center {w} has dimension {len(w)}, expected {n}")
        b = TaylorBasis(w, kk, int(basis.get("min_order", 0)))
        models.append(joint_model(sector_bound(b, _bounds_for(b, nx, bspec, M))))
    return models


def operation_set(spec) -> OperationSet:
    nx, nu = _dims(spec)
    ops = _need(spec, "operation_set", "spec")
    ineqs = []
    witness = None
    if "box" in ops:
        box = OperationSet.box(ops["box"]["lo"], ops["box"]["hi"], nx)
        ineqs += box.ineqs
        witness = box.witness
    ineqs += [_poly(spec, p) for p in ops.get("ineqs", [])]
    if not ineqs:
        raise SpecError("operation_set: no constraints")
    return OperationSet(nx, nu, ineqs, witness)


def supply_rate(spec) -> SupplyRate:
    nx, nu = _dims(spec)
    s = spec.get("supply", {"type": "l2gain"})
    kind = s.get("type", "l2gain")
    if kind == "l2gain":
        return SupplyRate.l2_gain(nx, nu)
    if kind == "quadratic":
        return SupplyRate.quadratic(np.array(s["Q"]), np.array(s["S"]), np.array(s["R"]), nx, nu)
    if kind == "polynomial":
        return SupplyRate.polynomial(_poly(spec, s["poly"]))
    raise SpecError(f"unknown supply type {kind!r}")


def storage_template(spec) -> StorageTemplate:
    nx, nu = _dims(spec)
    st = spec.get("storage", {})
    return StorageTemplate.default(nx, nu, int(st.get("dmin", 1)), int(st.get("dmax", 2)))


def multiplier_degrees(spec) -> MultiplierDegrees:
    d = spec.get("multipliers", {})
    return MultiplierDegrees(**{k: int(v) for k, v in d.items()})


def gamma_settings(spec, args) -> tuple[float, float, float]:
    g = spec.get("gamma", {})
    lo = args.gamma_min if args.gamma_min is not None else float(g.get("min", 1e-3))
    hi = args.gamma_max if args.gamma_max is not None else float(g.get("max", 100.0))
    tol = args.gamma_tol if args.gamma_tol is not None else float(g.get("tol", 1e-2))
    return lo, hi, tol


def envelopes(spec, M=None, k=None, samples=None) -> list[Envelope]:
    models = build_models(spec, M, k)
    known = spec.get("known_coefficients")
    if known is not None:
        mats = known if isinstance(known[0][0], list) else [known]
        return [Envelope(m, CoefficientEllipsoid.point(np.array(A))) for m, A in zip(models, mats)]
    samples = read_samples(spec) if samples is None else samples
    out = []
    for m in models:
        rc = rank_check(samples, m)
        if not rc:
            raise StageError("rank-check", f"regressor matrix not full row rank (sigma_min={rc.sigma_min:.3g})")
        try:
            out.append(fit_envelope(m, samples))
        except EllipsoidError as exc:
            raise StageError("ellipsoid", str(exc)) from exc
    return out


# ---------------------------------------------------------------------------
# output helpers
# ---------------------------------------------------------------------------


def _jsonable(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, Path):
        return str(o)
    raise TypeError(type(o))


def write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=1, sort_keys=True, default=_jsonable) + "\n")


class Outputs:
    """Collects files and writes them only once the command has finished."""

    def __init__(self, out: Path):
        self.out = Path(out)
        self.files: dict[str, object] = {}
        self.meta: dict = {}

    def json(self, name, obj):
        self.files[name] = ("json", obj)

    def csv(self, name, rows: list[dict]):
        self.files[name] = ("csv", rows)

    def raw(self, name, writer):
        self.files[name] = ("raw", writer)

    def flush(self):
        self.out.mkdir(parents=True, exist_ok=True)
        import csv

        for name, (kind, obj) in self.files.items():
            p = self.out / name
            if kind == "json":
                write_json(p, obj)
            elif kind == "csv":
                with open(p, "w", newline="") as fh:
                    keys = list(obj[0]) if obj else []
                    w = csv.DictWriter(fh, fieldnames=keys)
                    w.writeheader()
                    w.writerows(obj)
            else:
                obj(p)
        write_json(self.out / "meta.json", self.meta)


def _bundle(res, extra) -> dict:
    b = certificate_bundle(res, extra)
    b.pop("runtime_s", None)
    return b


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def _input_fn(ispec: dict, rng):
    kind = ispec.get("type", "chirp")
    if kind == "chirp":
        return dp.chirp_input(float(ispec.get("amp", 0.8)), float(ispec.get("a", 0.03)), float(ispec.get("b", 0.2)), float(ispec.get("offset", 0.0)))
    if kind == "constant":
        v = np.atleast_1d(np.asarray(ispec["value"], dtype=float))
        return lambda t: v
    if kind == "multisine":
        amps = np.asarray(ispec["amps"], float)
        freqs = np.asarray(ispec["freqs"], float)
        ph = np.asarray(ispec.get("phases", np.zeros_like(amps)), float)
        off = float(ispec.get("offset", 0.0))
        return lambda t: np.array([off + float(np.sum(amps * np.sin(2 * np.pi * freqs * t + ph)))])
    raise SpecError(f"unknown input type {kind!r}")


def _system(sspec: dict, nx: int, nu: int):
    name = _need(sspec, "system", "simulate")
    params = sspec.get("params", {})
    if name in dp.SYSTEMS:
        return dp.SYSTEMS[name](**params)
    if name == "polynomial":
        polys = [poly_from_list(nx + nu, p) for p in sspec["polys"]]
        return dp.polynomial_system(polys, nx, nu, sspec.get("box_lo"), sspec.get("box_hi"))
    if name == "lti":
        return dp.lti_system(params["A"], params["B"])
    raise SpecError(f"unknown system {name!r}")


def cmd_simulate(spec, args, out: Outputs) -> int:
    nx, nu = _dims(spec)
    s = _need(spec, "simulate", "spec")
    system = _system(s, nx, nu)
    rng = np.random.default_rng(args.seed)
    noise = s.get("noise")
    nm = dp.NoiseModel(noise.get("kind", "amplitude"), float(noise.get("level", 0.0)), bool(noise.get("per_component", False))) if noise else None
    runs = s.get("runs", [s])
    W = s.get("smoothing")
    all_samples = []
    summary = []
    for r, rs in enumerate(runs):
        rs = {**s, **rs}
        tr, Yn = dp.simulate(
            system, rs["x0"], _input_fn(rs.get("input", {}), rng), float(rs["duration"]), float(rs["h"]),
            noise=nm, state_noise=float(rs.get("state_noise", 0.0)), rng=rng,
        )
        out.raw(f"traj{r}.csv", lambda p, _t=tr: dp.write_trajectory_csv(p, _t))
        if W:
            vel = dp.central_diff6(dp.smooth(tr, dp.SmoothingConfig(int(W))))
        elif Yn is not None:
            vel = dp.Velocities(np.arange(len(tr)), tr.t, tr.x, tr.u, Yn, tr.xdot_true)
        else:
            vel = dp.central_diff6(tr)
        count = int(rs.get("snapshots", min(50, vel.idx.size)))
        eps = nm if nm is not None else float(rs.get("eps", 0.0))
        smp = dp.snapshots(vel, count, eps)
        all_samples += smp
        summary.append({"run": r, "length": len(tr), "snapshots": count, "truncated": tr.meta.get("truncated")})
    out.raw("samples.csv", lambda p: dp.write_samples_csv(p, all_samples, nx))
    out.json("simulate.json", {"runs": summary, "seed": args.seed})
    return EXIT_OK


def cmd_envelope(spec, args, out: Outputs) -> int:
    envs = envelopes(spec, k=args.degrees)
    out.json("envelope.json", {
        "envelopes": [{"omega": e.omega, "layout": e.model.layout, "ellipsoid": e.ellipsoid.to_dict()} for e in envs],
    })
    return EXIT_OK


def cmd_validate(spec, args, out: Outputs) -> int:
    fit = read_samples(spec, "fit")
    val = read_samples(spec, "validation")
    bspec = spec.get("bounds", {})
    vs = bspec.get("validate", {})
    cfg = vd.SvpConfig(
        eps_stop=float(vs.get("eps_stop", 1e-2)), c=float(vs.get("c", 0.05)), mu_bar=float(vs.get("mu_bar", 0.05)),
        m_init=float(vs.get("m_init", 1.0)), m_cap=float(vs.get("m_cap", 2.0**30)), iid=bool(vs.get("iid", True)),
    )
    mode = vs.get("mode", "M")
    k = args.degrees
    if mode == "M":
        res = vd.svp_bisect(fit, val, cfg, lambda m: build_models(spec, m, k))
    elif mode == "multidim":
        ny = _dims(spec)[0]
        res = vd.svp_multidim(fit, val, cfg, lambda m: build_models(spec, m, k), ny)
    elif mode == "eps":
        res = vd.eps_bisect(fit, val, cfg, build_models(spec, None, k))
    else:
        raise SpecError(f"unknown validate mode {mode!r}")
    out.csv("risk_trail.csv", res.trail_rows())
    out.json("validate.json", {
        "mode": mode,
        "value": res.M,
        "lower": res.lower,
        "iterations": res.iterations,
        "risk": None if res.risk is None else res.risk.to_dict(),
        "iid": cfg.iid,
        "note": "" if cfg.iid else "validation data not iid: empirical consistency only, no Hoeffding bound",
    })
    return EXIT_OK


def _dissipativity_program(spec, envs, supply):
    op = operation_set(spec)
    storage = storage_template(spec)
    md = multiplier_degrees(spec)
    part = spec.get("partition")
    if part:
        nx, nu = _dims(spec)
        n = nx + nu
        partition = Partition.intervals(n, int(part["coord"]), part["breaks"], float(part["lo"]), float(part["hi"]))
        extra = [_poly(spec, p) for p in part.get("other_ineqs", [])]
        return assemble_psi_partitioned(envs, partition, extra, supply, nx, nu, storage, md, shared_storage=bool(part.get("shared_storage", True)))
    return assemble_psi(envs, op, supply, storage, md)


def _gain_run(spec, args, out: Outputs, envs, label: str) -> tuple[int, dict]:
    supply = supply_rate(spec)
    pp = _dissipativity_program(spec, envs, supply)
    lo, hi, tol = gamma_settings(spec, args)
    if supply.gain_part is None:
        res = check_supply(pp)
    else:
        res = l2_gain_bisect(pp, (lo, hi), tol)
    out.meta[f"{label}_runtime_s"] = res.runtime
    return (EXIT_OK if res.certified else EXIT_NO_CERT), _bundle(res, {"stage": label})


def _data_extra(spec, samples):
    if samples is None:
        return {}
    X = np.array([s.x_tilde for s in samples])
    Y = np.array([s.y_tilde for s in samples])
    return {"data_hash": data_hash(X, Y), "S": len(samples)}


def cmd_verify(spec, args, out: Outputs) -> int:
    samples = None if spec.get("known_coefficients") else read_samples(spec)
    envs = envelopes(spec, k=args.degrees, samples=samples)
    if spec.get("supply", {}).get("type", "l2gain") == "l2gain" and "gamma" in spec.get("supply", {}):
        g = float(spec["supply"]["gamma"])
        args.gamma_min = args.gamma_max = g
    code, b = _gain_run(spec, args, out, envs, "verify")
    b.update(_data_extra(spec, samples))
    if code != EXIT_OK:
        b["message"] = NO_CERT_MSG
    out.json("certificate.json", b)
    return code


def cmd_l2gain(spec, args, out: Outputs) -> int:
    spec = {**spec, "supply": {"type": "l2gain"}}
    samples = None if spec.get("known_coefficients") else read_samples(spec)
    envs = envelopes(spec, k=args.degrees, samples=samples)
    code, b = _gain_run(spec, args, out, envs, "l2gain")
    b.update(_data_extra(spec, samples))
    if code != EXIT_OK:
        b["message"] = NO_CERT_MSG
    out.json("certificate.json", b)
    if args.emit_plots:
        rows = []
        for beta in spec.get("betas", [0.0, 0.5, 1.0]):
            M = float(beta) * float(spec.get("bounds", {}).get("M", 1.0))
            try:
                e = envelopes(spec, M=M, k=args.degrees, samples=samples)
                c, bb = _gain_run(spec, args, out, e, f"beta{beta}")
                rows.append({"beta": beta, "gamma": bb["gamma"] if c == EXIT_OK else ""})
            except (StageError, CertificationError) as exc:
                rows.append({"beta": beta, "gamma": "", "note": str(exc)})
        out.csv("gamma_vs_beta.csv", rows)
    return code


def cmd_incremental(spec, args, out: Outputs) -> int:
    nx, nu = _dims(spec)
    samples = None if spec.get("known_coefficients") else read_samples(spec)
    envs = envelopes(spec, k=args.degrees, samples=samples)
    op = operation_set(spec)
    mt = spec.get("metric", {})
    metric = MetricTemplate(int(mt.get("degree", 0)))
    supply = DifferentialSupply.gain(nx, nu)
    md = multiplier_degrees(spec)
    pp = assemble_psi_incremental(envs, op, supply, metric, md, full_T=bool(spec.get("full_T", False)))
    lo, hi, tol = gamma_settings(spec, args)
    res = incremental_l2_gain_bisect(pp, (lo, hi), tol)
    out.meta["incremental_runtime_s"] = res.runtime
    b = _bundle(res, {"stage": "incremental"})
    b.update(_data_extra(spec, samples))
    if res.certified:
        b["claim"] = incremental_from_differential(res, supply).to_dict()
        if metric.constant:
            b["metric"] = metric_value(res)
        code = EXIT_OK
    else:
        b["message"] = NO_CERT_MSG
        code = EXIT_NO_CERT
    out.json("certificate.json", b)
    return code


def cmd_lowerbound(spec, args, out: Outputs) -> int:
    lb = spec.get("lowerbound", {})
    files = _need(lb, "trajectories", "lowerbound")
    W = lb.get("smoothing")
    vals = []
    for f in files:
        p = _path(spec, f)
        if not p.is_file():
            raise StageError("data", f"trajectory file not found: {p}")
        tr = dp.read_trajectory_csv(p)
        if W:
            tr = dp.smooth(tr, dp.SmoothingConfig(int(W), inputs=bool(lb.get("smooth_inputs", False))))
        vals.append(dp.l2_lower_bound(tr, int(lb.get("Tmin", 4)), lb.get("Tmax")))
    out.json("lowerbound.json", {"per_trajectory": vals, "lower_bound": max(vals)})
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate,
    "envelope": cmd_envelope,
    "validate": cmd_validate,
    "verify": cmd_verify,
    "l2gain": cmd_l2gain,
    "incremental": cmd_incremental,
    "lowerbound": cmd_lowerbound,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="tpv", description="Data-driven dissipativity verification with Taylor-polynomial envelopes.")
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--spec", required=True, help="problem spec (JSON)")
    ap.add_argument("--out", default="out", help="output directory")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--gamma-min", type=float, default=None)
    ap.add_argument("--gamma-max", type=float, default=None)
    ap.add_argument("--gamma-tol", type=float, default=None)
    ap.add_argument("--degrees", type=int, default=None, help="Taylor order k (overrides the spec)")
    ap.add_argument("--emit-plots", action="store_true", help="write gamma-vs-beta CSV")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    out = Outputs(Path(args.out))
    t0 = time.time()
    try:
        spec = load_spec(args.spec)
        if "solver" in spec and "tol" in spec["solver"] and "TPV_SOLVER_TOL" not in os.environ:
            os.environ["TPV_SOLVER_TOL"] = str(spec["solver"]["tol"])
        code = COMMANDS[args.command](spec, args, out)
    except (StageError, CertificationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except vd.SearchError as exc:
        print(f"error: [validate] {exc}", file=sys.stderr)
        return EXIT_ERROR
    except (SpecError, KeyError, ValueError, TypeError) as exc:
        print(f"error: [spec] {exc}", file=sys.stderr)
        return EXIT_ERROR
    out.meta.update({"command": args.command, "wall_time_s": time.time() - t0, "exit": code})
    out.flush()
    if code == EXIT_NO_CERT:
        print(NO_CERT_MSG)
    return code


if __name__ == "__main__":
    sys.exit(main())
