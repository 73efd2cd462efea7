"""Mean average accuracy over integer rotation-error thresholds."""
from __future__ import annotations

import numpy as np


def maa(errors_deg, theta_max=10) -> float:
    """Fraction of (threshold, trial) pairs with error below the threshold.

    Thresholds are 1, 2, ..., ``theta_max`` degrees; failed trials should be
    passed as ``inf``. ``theta_max`` may also be an object with a
    ``theta_max`` attribute, such as ``bench.MetricConfig``.
    """
    theta_max = getattr(theta_max, "theta_max", theta_max)
    e = np.asarray(errors_deg, dtype=float).ravel()
    if e.size == 0:
        raise ValueError("maa of an empty error list")
    if theta_max < 1:
        raise ValueError("theta_max must be >= 1")
    e = np.where(np.isnan(e), np.inf, e)
    thresholds = np.arange(1, int(theta_max) + 1, dtype=float)
    return float(np.mean(e[None, :] < thresholds[:, None]))
