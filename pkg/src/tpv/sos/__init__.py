"""Sum-of-squares programming: polynomial-matrix SOS constraints lowered to SDPs."""

from .affine import PARAM, AffPoly, AffPolyMatrix, congruence
from .backends import ClarabelBackend, CvxpyBackend, get_backend
from .certificate import GramCertificate, VerificationReport, gram_reconstruction, verify_certificate
from .export import export_sdp, import_sdp
from .program import (
    DegreeError,
    MultiplierTemplate,
    SosConstraint,
    SosProgram,
    compile_sos,
    free_poly,
    monomials_in,
    sos_multiplier,
)
from .sdp import PsdBlock, SdpProblem, SdpSolution, instantiate

__all__ = [
    "PARAM", "AffPoly", "AffPolyMatrix", "congruence",
    "ClarabelBackend", "CvxpyBackend", "get_backend",
    "GramCertificate", "VerificationReport", "gram_reconstruction", "verify_certificate",
    "export_sdp", "import_sdp",
    "DegreeError", "MultiplierTemplate", "SosConstraint", "SosProgram", "compile_sos",
    "free_poly", "monomials_in", "sos_multiplier",
    "PsdBlock", "SdpProblem", "SdpSolution", "instantiate",
]
