"""Taylor-polynomial set-membership envelopes and SOS dissipativity certificates."""
