"""Checked point constructors and the Lie-group structure layer.

Two of the four geometries are matrix Lie groups: SPD under the
log-Euclidean metric (commutative, composition through the matrix log)
and SO(n) (matrix product).  The functions here expose composition,
inversion, the algebra coordinate maps, and branch-guarded scaling from
the identity for exactly those two; everything else raises.
"""

from dataclasses import dataclass

import numpy as np

from .errors import GeometryError
from .geometry import (
    Manifold,
    ManifoldPoint,
    is_lie_group,
)


def make_point(manifold: Manifold, raw, repair: bool = False) -> ManifoldPoint:
    """Validated point constructor.

    With repair=False the raw array must already satisfy the manifold's
    validity checks.  With repair=True a nearby invalid array is projected
    first: SPD inputs are symmetrized with eigenvalues floored at 1e-10,
    sphere inputs normalized, rotations replaced by the nearest orthogonal
    matrix.  Irreparable input (a zero vector for the sphere, a singular
    matrix for SO) still raises.
    """
    raw = np.asarray(raw, dtype=np.float64)
    if raw.shape != manifold.point_shape:
        raise GeometryError(
            f"expected shape {manifold.point_shape}, got {raw.shape}"
        )
    if repair:
        raw = manifold.project_point(raw)
    manifold.check_point(raw)
    return ManifoldPoint(manifold, raw)


@dataclass(frozen=True)
class LieAlgebraVector:
    """Algebra element in iota coordinates at the identity."""

    manifold: Manifold
    coords: np.ndarray

    def __post_init__(self):
        _require_lie(self.manifold)
        coords = np.asarray(self.coords, dtype=np.float64)
        if coords.shape != (self.manifold.intrinsic_dim,):
            raise GeometryError(
                f"expected {self.manifold.intrinsic_dim} coordinates, got shape {coords.shape}"
            )
        if not np.all(np.isfinite(coords)):
            raise GeometryError("algebra coordinates contain non-finite entries")
        object.__setattr__(self, "coords", coords)

    def norm(self) -> float:
        return float(np.linalg.norm(self.coords))


def _require_lie(manifold: Manifold) -> Manifold:
    if not is_lie_group(manifold):
        raise GeometryError(f"{manifold!r} does not carry a Lie-group structure")
    return manifold


def _same_lie(x: ManifoldPoint, y: ManifoldPoint) -> Manifold:
    m = _require_lie(x.manifold)
    if y.manifold != m:
        raise GeometryError(f"operands live on {x.manifold!r} and {y.manifold!r}")
    return m


def lie_compose(x: ManifoldPoint, y: ManifoldPoint) -> ManifoldPoint:
    """Group composition x * y."""
    m = _same_lie(x, y)
    return ManifoldPoint(m, m.compose(x.data, y.data))


def lie_inverse(x: ManifoldPoint) -> ManifoldPoint:
    """Group inverse."""
    m = _require_lie(x.manifold)
    return ManifoldPoint(m, m.inverse(x.data))


def lie_logm(x: ManifoldPoint) -> LieAlgebraVector:
    """Principal-branch group logarithm in iota coordinates."""
    m = _require_lie(x.manifold)
    return LieAlgebraVector(m, m.algebra_log(x.data))


def lie_expm(v: LieAlgebraVector) -> ManifoldPoint:
    """Group exponential of algebra coordinates."""
    return ManifoldPoint(v.manifold, v.manifold.algebra_exp(v.coords))


def lie_identity(manifold: Manifold) -> ManifoldPoint:
    _require_lie(manifold)
    return ManifoldPoint(manifold, manifold.group_identity())


def scale_from_identity(x: ManifoldPoint, s: float) -> ManifoldPoint:
    """expm(s * logm(x)): scales the distance from the identity by s.

    For rotations the scaled generator must stay inside the principal
    branch; violations raise CutLocusError.
    """
    m = _require_lie(x.manifold)
    s = float(s)
    if s <= 0.0:
        raise GeometryError("scale factor must be positive")
    return ManifoldPoint(m, m.scale_identity(x.data, np.asarray(s)))
