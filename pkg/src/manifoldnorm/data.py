"""Synthetic labeled datasets of manifold-valued grids.

Each class owns a mean point placed along its own direction from the
origin, with the common radius calibrated so all pairwise geodesic
separations reach the requested value.  A sample is a grid of draws
around a per-sample center: the dispersion budget is split evenly
between the shared center offset and independent per-cell noise, so
cells within one sample are spatially correlated.
"""

from __future__ import annotations

import numpy as np

from .config import ExperimentConfig
from .errors import ConfigError, GeometryError
from .geometry import Manifold, ManifoldPoint
from .normalization import FeatureGrid
from .stats import LieGaussian, sample_gaussian

__all__ = ["class_means", "generate_synthetic", "split_dataset"]

# Means may not sit farther out than this fraction of the injectivity
# radius on bounded manifolds; the sampler truncates at 0.9 of it.
_MEAN_RADIUS_FRACTION = 0.9


def _exp_coords(m: Manifold, coords: np.ndarray) -> np.ndarray:
    base = np.broadcast_to(m.origin(), coords.shape[:-1] + m.point_shape)
    return m.exp(base, m.tangent_from_coords(coords))


def _min_pairwise(m: Manifold, pts: np.ndarray) -> float:
    k = pts.shape[0]
    best = np.inf
    for i in range(k):
        for j in range(i + 1, k):
            best = min(best, float(m.dist(pts[i], pts[j])))
    return best


def class_means(m: Manifold, classes: int, delta: float) -> np.ndarray:
    """Class mean points with pairwise distance >= delta.

    Two classes sit at +-delta/2 along the first basis direction, so
    their separation is exactly delta.  More classes take mutually
    orthogonal directions at a bisected common radius.
    """
    if classes < 2:
        raise ConfigError("need at least two classes")
    if classes > 2 and classes > m.intrinsic_dim:
        raise ConfigError(
            f"{classes} classes need {classes} orthogonal directions;"
            f" the manifold offers {m.intrinsic_dim}"
        )
    bound = None
    if m.truncation_radius is not None:
        bound = _MEAN_RADIUS_FRACTION * m.truncation_radius

    if classes == 2:
        r = delta / 2.0
        if bound is not None and r > bound:
            raise GeometryError(
                f"separation {delta} puts the means outside the usable ball"
                f" (radius limit {2 * bound:.4g})"
            )
        coords = np.zeros((2, m.intrinsic_dim))
        coords[0, 0] = r
        coords[1, 0] = -r
        means = _exp_coords(m, coords)
    else:
        directions = np.eye(m.intrinsic_dim)[:classes]
        hi = bound if bound is not None else delta
        while _min_pairwise(m, _exp_coords(m, hi * directions)) < delta:
            if bound is not None:
                raise GeometryError(
                    f"separation {delta} is unreachable inside the usable ball"
                )
            hi *= 2.0
            if hi > 1e6 * delta:
                raise GeometryError("mean placement failed to bracket the separation")
        lo = 0.0
        for _ in range(80):
            mid = 0.5 * (lo + hi)
            if _min_pairwise(m, _exp_coords(m, mid * directions)) < delta:
                lo = mid
            else:
                hi = mid
        means = _exp_coords(m, hi * directions)

    got = _min_pairwise(m, means)
    if got < delta * (1.0 - 1e-6):
        raise GeometryError(
            f"mean separation check failed: {got:.6g} < {delta} within tolerance"
        )
    return means


def _stack_points(points: list[ManifoldPoint]) -> np.ndarray:
    return np.stack([p.data for p in points])


def generate_synthetic(cfg: ExperimentConfig, seed: int):
    """Labeled dataset: (FeatureGrid, int64 labels).

    Samples are grouped by class, and within each class the first
    train_per_class samples form the training split.  Deterministic
    per seed down to the byte.
    """
    m = cfg.manifold()
    d1, d2, d3 = cfg.dims
    channels = cfg.channels
    cells = d1 * d2 * d3 * channels
    per_class = cfg.train_per_class + cfg.test_per_class
    total = per_class * cfg.classes
    sigma2 = cfg.dispersion**2

    means = class_means(m, cfg.classes, cfg.separation)
    rng = np.random.default_rng(seed)

    data = np.empty((d1, d2, d3, total, channels) + m.point_shape)
    labels = np.empty(total, dtype=np.int64)
    idx = 0
    for k in range(cfg.classes):
        mean_pt = ManifoldPoint(m, means[k])
        for _ in range(per_class):
            center_seed, cell_seed = rng.integers(0, 2**63, size=2)
            center = sample_gaussian(
                LieGaussian(mean_pt, sigma2 / 2.0), 1, int(center_seed)
            )[0]
            drawn = sample_gaussian(
                LieGaussian(center, sigma2 / 2.0), cells, int(cell_seed)
            )
            sample = _stack_points(drawn).reshape((d1, d2, d3, channels) + m.point_shape)
            data[:, :, :, idx] = sample
            labels[idx] = k
            idx += 1
    return FeatureGrid(m, data), labels


def split_dataset(grid: FeatureGrid, labels: np.ndarray, cfg: ExperimentConfig):
    """Per-class head/tail split into (train_grid, train_y, test_grid, test_y)."""
    labels = np.asarray(labels)
    train_idx, test_idx = [], []
    for k in range(cfg.classes):
        where = np.flatnonzero(labels == k)
        need = cfg.train_per_class + cfg.test_per_class
        if where.size < need:
            raise ConfigError(
                f"class {k} has {where.size} samples, config needs {need}"
            )
        train_idx.extend(where[: cfg.train_per_class])
        test_idx.extend(where[cfg.train_per_class : need])
    train_idx = np.array(train_idx, dtype=np.int64)
    test_idx = np.array(test_idx, dtype=np.int64)
    train = FeatureGrid(grid.manifold, grid.data[:, :, :, train_idx])
    test = FeatureGrid(grid.manifold, grid.data[:, :, :, test_idx])
    return train, labels[train_idx], test, labels[test_idx]
