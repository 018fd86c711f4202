"""Package-wide exception types."""


class DataFormatError(ValueError):
    """Malformed external input: data CSVs, truth sidecars, state files."""


class NumericalError(ArithmeticError):
    """Numerical failure: non-finite intermediates, singular systems,
    unreachable alignment lattice corners."""
