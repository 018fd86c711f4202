"""Shared test configuration.

Property-based tests run derandomized so the suite is reproducible run to
run; deadlines are disabled because several properties drive numerical
kernels whose first call pays a JIT-compilation cost.
"""

from hypothesis import HealthCheck, settings

settings.register_profile(
    "suite",
    derandomize=True,
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("suite")
