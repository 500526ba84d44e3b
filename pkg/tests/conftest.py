import numpy as np
import pytest

from shb import rng as shbrng
from shb.globalfit import RateDataset, RatePoint
from shb.model import (
    Condition,
    rate_breakdown,
    reference_high_temp_model,
    reference_low_temp_model,
)


@pytest.fixture(scope="session")
def low_model():
    return reference_low_temp_model()


@pytest.fixture(scope="session")
def high_model():
    return reference_high_temp_model()


def reference_grid_specs(low, high, points_per_sweep=16, b_lo=0.002):
    """The measurement layout: one B sweep at 7 mK for the three-class model,
    B sweeps at 80/800 mK plus a T sweep at 50 mT for the two-class model."""
    b_grid = np.geomspace(b_lo, 0.2, points_per_sweep)
    t_grid = np.geomspace(0.044, 2.4, points_per_sweep)
    specs = []
    for cid in "ABC":
        specs.append((low, cid, [Condition(0.007, b) for b in b_grid], "low-temperature"))
    for cid in "AB":
        specs.append((high, cid, [Condition(0.080, b) for b in b_grid], "high-temperature"))
        specs.append((high, cid, [Condition(0.800, b) for b in b_grid], "high-temperature"))
        specs.append((high, cid, [Condition(t, 0.050) for t in t_grid], "high-temperature"))
    return specs


def reference_rate_datasets(low, high, points_per_sweep=16, noise_frac=0.0, seed=0):
    """Rates on the reference grids, optionally with multiplicative noise.

    Noisy rates report sigma = noise_frac * measured rate, the convention an
    experiment would use; noiseless rates carry a nominal 5% sigma.
    """
    datasets = []
    for k, (model, cid, conds, regime) in enumerate(
        reference_grid_specs(low, high, points_per_sweep)
    ):
        if noise_frac > 0:
            eps = shbrng.normal_stream(shbrng.derive_seed(seed, k), 0, len(conds))
        else:
            eps = np.zeros(len(conds))
        points = []
        for cond, e in zip(conds, eps):
            true = rate_breakdown(model, cid, cond).total
            measured = true * (1.0 + noise_frac * e)
            sigma = (noise_frac if noise_frac > 0 else 0.05) * measured
            points.append(RatePoint(cond, measured, sigma))
        datasets.append(RateDataset(class_id=cid, points=tuple(points), regime_label=regime))
    return datasets
