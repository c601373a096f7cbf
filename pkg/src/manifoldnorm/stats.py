"""Weighted Fréchet means, Riemannian Gaussian families, and sampling.

Two mean estimators with different contracts:

* ``incremental_wfm`` is the cheap streaming recursion used in forward
  passes.  It is order-dependent for finite inputs; determinism comes
  from fixing the input order.
* ``oracle_fm`` is the brute-force fixed-point iteration used as the
  reference in tests.  It iterates M <- Exp_M(sum_i w_i Log_M(X_i)) with
  step halving until the weighted tangent residual is below tol.

``wfm_stack`` is the batched raw-array form of the recursion; every
normalization set and convolution window goes through it.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ConvergenceError, GeometryError
from .geometry import Manifold, ManifoldPoint, is_lie_group
from .linalg import PD_EIGENVALUE_FLOOR, sym_eig

_SUM_TOL = 1e-12


@dataclass(frozen=True)
class WeightVector:
    """Convex weights: every entry in (0, 1], summing to one."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 1 or v.size == 0:
            raise ConfigError("weights must form a nonempty vector")
        if not np.all(np.isfinite(v)):
            raise ConfigError("weights contain non-finite entries")
        if np.any(v <= 0.0) or np.any(v > 1.0):
            raise ConfigError("each weight must lie in (0, 1]")
        if abs(float(np.sum(v)) - 1.0) > _SUM_TOL:
            raise ConfigError("weights must sum to one")
        object.__setattr__(self, "values", v)

    @classmethod
    def uniform(cls, n: int) -> "WeightVector":
        if n < 1:
            raise ConfigError("need at least one weight")
        return cls(np.full(n, 1.0 / n))

    def __len__(self) -> int:
        return self.values.size


@dataclass(frozen=True)
class LieGaussian:
    """Isotropic Gaussian (M, sigma^2) in the sense of the group distance."""

    mean: ManifoldPoint
    sigma2: float

    def __post_init__(self):
        if not (np.isfinite(self.sigma2) and self.sigma2 > 0.0):
            raise ConfigError("sigma2 must be positive")


@dataclass(frozen=True)
class HomogGaussian:
    """Anisotropic Gaussian with concentration matrix Delta.

    Delta acts on iota coordinates of tangents transported from the mean
    to the origin, where the coordinate basis lives.
    """

    mean: ManifoldPoint
    concentration: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.concentration, dtype=np.float64)
        m = self.mean.manifold.intrinsic_dim
        if d.shape != (m, m):
            raise ConfigError(f"concentration must be {m}x{m}")
        if not np.all(np.isfinite(d)):
            raise ConfigError("concentration contains non-finite entries")
        if np.linalg.norm(d - d.T) > 1e-10:
            raise ConfigError("concentration must be symmetric")
        vals, _ = sym_eig(d)
        if np.any(vals <= PD_EIGENVALUE_FLOOR):
            raise ConfigError("concentration must be positive definite")
        object.__setattr__(self, "concentration", d)


def _common_manifold(points) -> Manifold:
    if len(points) == 0:
        raise ConfigError("need at least one point")
    m = points[0].manifold
    for p in points[1:]:
        if p.manifold != m:
            raise GeometryError("points live on different manifolds")
    return m


def _stack(points) -> np.ndarray:
    return np.stack([p.data for p in points])


def weighted_variance(points, w: WeightVector, m_point: ManifoldPoint) -> float:
    """Weighted sum of squared geodesic distances to m_point."""
    m = _common_manifold(points)
    if m_point.manifold != m:
        raise GeometryError("evaluation point lives on a different manifold")
    if len(points) != len(w):
        raise ConfigError("weights and points have different lengths")
    d = m.dist(m_point.data, _stack(points))
    return float(np.dot(w.values, np.square(d)))


def wfm_stack(manifold: Manifold, stack: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Streaming weighted-mean recursion over the leading axis.

    stack has shape (K,) + batch + point_shape; weights has shape (K,)
    or (K,) + batch, normalized along axis 0.  Each step moves the
    running mean along the geodesic toward the next point by the
    fraction w_k / (w_1 + ... + w_k).
    """
    weights = np.asarray(weights, dtype=np.float64)
    k = stack.shape[0]
    if weights.shape[0] != k:
        raise ConfigError("weights and points have different lengths")
    mean = stack[0]
    cum = np.broadcast_to(weights[0], weights.shape[1:]).copy() if weights.ndim > 1 else weights[0]
    for i in range(1, k):
        cum = cum + weights[i]
        mean = manifold.geodesic(mean, stack[i], weights[i] / cum)
    return mean


def incremental_wfm(points, w: WeightVector | None = None) -> ManifoldPoint:
    """Order-dependent streaming estimate of the weighted Fréchet mean."""
    m = _common_manifold(points)
    if w is None:
        w = WeightVector.uniform(len(points))
    if len(points) != len(w):
        raise ConfigError("weights and points have different lengths")
    if len(points) == 1:
        return points[0]
    return ManifoldPoint(m, wfm_stack(m, _stack(points), w.values))


def oracle_fm_stack(
    manifold: Manifold,
    data: np.ndarray,
    weights: np.ndarray | None = None,
    tol: float = 1e-9,
    max_iter: int = 1000,
) -> np.ndarray:
    """Raw-array Fréchet mean of a (K,) + point_shape stack.

    Fixed-point iteration M <- Exp_M(step * sum_i w_i Log_M(X_i)) with
    unit step, halved on objective increase.
    """
    if data.shape[0] < 1:
        raise ConfigError("need at least one point")
    if weights is None:
        weights = np.full(data.shape[0], 1.0 / data.shape[0])
    if weights.shape[0] != data.shape[0]:
        raise ConfigError("weights and points have different lengths")
    total = float(np.sum(weights))
    if not total > 0.0:
        raise ConfigError("weights must have positive total mass")
    wv = weights.reshape((-1,) + (1,) * len(manifold.point_shape))

    mean = data[0]
    obj = float(np.dot(weights, np.square(manifold.dist(mean, data))))
    for _ in range(max_iter):
        # Dividing by the total mass makes the update invariant to weight
        # scaling and keeps the unit step from overshooting.
        grad = np.sum(wv * manifold.log(mean, data), axis=0) / total
        residual = float(manifold.tangent_norm(mean, grad))
        if residual < tol:
            return mean
        step = 1.0
        for _ in range(30):
            candidate = manifold.exp(mean, step * grad)
            cand_obj = float(np.dot(weights, np.square(manifold.dist(candidate, data))))
            if cand_obj <= obj + 1e-15:
                break
            step *= 0.5
        mean, obj = candidate, cand_obj
    raise ConvergenceError(f"Fréchet mean did not reach tol={tol} in {max_iter} iterations")


def oracle_fm(
    points,
    w: WeightVector | None = None,
    tol: float = 1e-9,
    max_iter: int = 1000,
) -> ManifoldPoint:
    """Reference Fréchet mean by Riemannian fixed-point iteration.

    Independent of input order up to tol.  Raises ConvergenceError when
    the residual fails to reach tol within max_iter steps.
    """
    m = _common_manifold(points)
    if w is None:
        w = WeightVector.uniform(len(points))
    if len(points) != len(w):
        raise ConfigError("weights and points have different lengths")
    return ManifoldPoint(m, oracle_fm_stack(m, _stack(points), w.values, tol, max_iter))


def density_lie(x: ManifoldPoint, dist: LieGaussian, normalized: bool = False) -> float:
    """Unnormalized Gaussian density exp(-d(X, M)^2 / (2 sigma^2))."""
    if normalized:
        raise ConfigError("normalizing constant is not computed; use normalized=False")
    m = dist.mean.manifold
    if not is_lie_group(m):
        raise GeometryError("density_lie requires a Lie-group manifold")
    if x.manifold != m:
        raise GeometryError("point lives on a different manifold")
    d = float(m.dist(x.data, dist.mean.data))
    return float(np.exp(-d * d / (2.0 * dist.sigma2)))


def density_homog(x: ManifoldPoint, dist: HomogGaussian) -> float:
    """Unnormalized anisotropic density exp(-c^T Delta c / 2).

    c is the iota coordinate vector of Log_M(X) transported from M to
    the origin.
    """
    m = dist.mean.manifold
    if x.manifold != m:
        raise GeometryError("point lives on a different manifold")
    v = m.log(dist.mean.data, x.data)
    c = m.coords_from_tangent(m.transport(dist.mean.data, m.origin(), v))
    return float(np.exp(-0.5 * c @ dist.concentration @ c))


def _draw_coords(dist, count: int, rng: np.random.Generator) -> np.ndarray:
    m = dist.mean.manifold.intrinsic_dim
    if isinstance(dist, LieGaussian):
        return np.sqrt(dist.sigma2) * rng.standard_normal((count, m))
    chol = np.linalg.cholesky(dist.concentration)
    z = rng.standard_normal((count, m))
    # Covariance Delta^-1: solve L^T c = z with Delta = L L^T.
    return np.linalg.solve(chol.T, z.T).T


def sample_gaussian(dist, count: int, seed: int) -> list:
    """Draw points from a truncated tangent-space Gaussian around the mean.

    Coordinates are drawn at the origin, rejection-truncated to 90% of
    the injectivity radius on bounded manifolds, transported to the mean
    and exponentiated.  Deterministic per seed.
    """
    if count < 1:
        raise ConfigError("count must be at least 1")
    m = dist.mean.manifold
    rng = np.random.default_rng(seed)
    coords = _draw_coords(dist, count, rng)
    radius = m.truncation_radius
    if radius is not None:
        cap = 0.9 * radius
        for _ in range(1000):
            bad = np.linalg.norm(coords, axis=-1) >= cap
            if not np.any(bad):
                break
            coords[bad] = _draw_coords(dist, int(np.sum(bad)), rng)
        else:
            raise ConvergenceError("truncated sampling kept rejecting; sigma too large")
    v0 = m.tangent_from_coords(coords)
    vm = m.transport(m.origin(), dist.mean.data, v0)
    data = m.exp(dist.mean.data, vm)
    return [ManifoldPoint(m, data[i]) for i in range(count)]
