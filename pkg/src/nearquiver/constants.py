"""Numerical tolerances shared by every module.

The CLI echoes ``TOLERANCES.as_dict()`` into each result file so a run can be
reproduced against the exact thresholds it used.
"""

from dataclasses import asdict, dataclass


@dataclass(frozen=True)
class Tolerances:
    # gauge elements with a larger condition number are treated as singular
    gauge_condition_max: float = 1e12
    # Gram matrices with min eigenvalue below this fraction of the trace fail
    gram_relative_floor: float = 1e-10
    unit_norm: float = 1e-12
    unitarity: float = 1e-10
    probability_sum: float = 1e-10
    # default ridge is ridge_scale * trace(G) / dim(G)
    ridge_scale: float = 1e-8
    max_step_halvings: int = 20
    max_exact_measurements: int = 12
    alpha_min: float = -1.0
    alpha_max: float = 1.0
    alpha_fd_step: float = 1e-6

    def as_dict(self):
        return asdict(self)


TOLERANCES = Tolerances()
