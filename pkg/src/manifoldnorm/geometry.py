"""Four matrix-manifold geometries behind one operation contract.

Concrete spaces:

* ``SpdAffine(n)``       symmetric positive-definite matrices with the
  affine-invariant metric  g_X(U, V) = tr(X^-1 U X^-1 V).
* ``SpdLogEuclidean(n)`` the same point set made a flat commutative group
  through the matrix logarithm.
* ``Sphere(n)``          unit vectors in R^(n+1) with the round metric.
* ``SpecialOrthogonal(n)`` rotation matrices with the bi-invariant
  Frobenius metric.

Every raw operation accepts stacked arrays: a point argument of shape
``batch + point_shape`` is processed as a batch, and binary operations
broadcast their batch axes.  The typed wrappers (``ManifoldPoint``,
``TangentVector``, ``GroupElement`` and the module-level functions) carry
single points and enforce the cross-operand checks.

Tangent conventions, chosen so the tangent-coordinate map ``iota`` at the
origin is a linear isometry onto R^m:

* SPD (both metrics): symmetric ambient matrices; for the log-Euclidean
  metric the stored matrix is the additive increment of log X.
* Sphere: ambient vectors orthogonal to the base point.
* SO(n): ambient matrices X W with W skew; the metric reads W directly.
"""

import abc
from dataclasses import dataclass
from enum import Enum
from typing import Sequence

import numpy as np

from .errors import CutLocusError, GeometryError, ManifoldMismatchError
from .linalg import (
    PD_EIGENVALUE_FLOOR,
    rotation_logm,
    skew,
    skew_expm,
    sym,
    sym_eig,
)

# Default validation tolerances.  Callers may pass their own.
SYMMETRY_ATOL = 1e-10
UNIT_NORM_ATOL = 1e-10
ORTHOGONALITY_ATOL = 1e-10
TANGENCY_ATOL = 1e-10
ANTIPODAL_GUARD = 1e-10
SMALL_ANGLE = 1e-8
DET_FLOOR = 1e-12


class ManifoldKind(Enum):
    SPD_AFFINE = "spd_affine"
    SPD_LOG_EUCLIDEAN = "spd_log_euclidean"
    SPHERE = "sphere"
    SPECIAL_ORTHOGONAL = "special_orthogonal"


def _tr(a) -> np.ndarray:
    return np.swapaxes(a, -1, -2)


def _matvec(a, v) -> np.ndarray:
    return np.einsum("...ij,...j->...i", a, v)


def _apply_spectral(vals, vecs, fvals) -> np.ndarray:
    return sym((vecs * fvals[..., None, :]) @ _tr(vecs))


def _require_pd(vals, what: str) -> None:
    if np.any(vals <= PD_EIGENVALUE_FLOOR):
        raise GeometryError(f"{what} is not positive definite")


class Manifold(abc.ABC):
    """Shared contract: batched geometry kernels plus validity checks."""

    kind: ManifoldKind

    def __init__(self, n: int):
        if n < self._min_n():
            raise GeometryError(f"{type(self).__name__} needs n >= {self._min_n()}")
        self.n = int(n)

    @staticmethod
    def _min_n() -> int:
        return 1

    def __eq__(self, other) -> bool:
        return isinstance(other, Manifold) and (self.kind, self.n) == (other.kind, other.n)

    def __hash__(self) -> int:
        return hash((self.kind, self.n))

    def __repr__(self) -> str:
        return f"{type(self).__name__}({self.n})"

    # Structure ----------------------------------------------------------

    @property
    @abc.abstractmethod
    def intrinsic_dim(self) -> int:
        """Dimension m of the tangent spaces."""

    @property
    @abc.abstractmethod
    def point_shape(self) -> tuple:
        """Trailing shape of a single point array."""

    @property
    @abc.abstractmethod
    def group_shape(self) -> tuple:
        """Trailing shape of an acting group element."""

    @abc.abstractmethod
    def origin(self) -> np.ndarray:
        """The distinguished base point where iota is defined."""

    def group_identity(self) -> np.ndarray:
        return np.eye(self.group_shape[-1])

    @property
    def truncation_radius(self) -> float | None:
        """Sampling truncation radius; None when unbounded."""
        return None

    # Validity -----------------------------------------------------------

    @abc.abstractmethod
    def check_point(self, x, atol: float | None = None) -> None:
        """Raise GeometryError unless every stacked entry is a valid point."""

    @abc.abstractmethod
    def check_tangent(self, base, v, atol: float | None = None) -> None:
        """Raise GeometryError unless v is a valid ambient tangent at base."""

    @abc.abstractmethod
    def check_group(self, g, atol: float | None = None) -> None:
        """Raise GeometryError unless g is a valid acting group element."""

    @abc.abstractmethod
    def project_point(self, raw) -> np.ndarray:
        """Repair a nearby ambient array to a valid point."""

    # Geometry -----------------------------------------------------------

    @abc.abstractmethod
    def dist(self, x, y) -> np.ndarray:
        """Geodesic distance."""

    @abc.abstractmethod
    def inner(self, base, u, v) -> np.ndarray:
        """Riemannian inner product of tangents at base."""

    @abc.abstractmethod
    def exp(self, x, v) -> np.ndarray:
        """Exponential map."""

    @abc.abstractmethod
    def log(self, x, y) -> np.ndarray:
        """Logarithm map, inverse of exp within the injectivity radius."""

    @abc.abstractmethod
    def transport(self, x, y, v) -> np.ndarray:
        """Isometric transport of tangent v from x to y."""

    @abc.abstractmethod
    def geodesic(self, x, y, t) -> np.ndarray:
        """Point at parameter t along the geodesic from x to y; t in [0, 1]
        broadcastable over the batch."""

    @abc.abstractmethod
    def act(self, g, x) -> np.ndarray:
        """Isometric action of group element g on point x."""

    def tangent_norm(self, base, v) -> np.ndarray:
        return np.sqrt(np.maximum(self.inner(base, v, v), 0.0))

    # iota: tangent coordinates at the origin ------------------------------

    @abc.abstractmethod
    def coords_from_tangent(self, v) -> np.ndarray:
        """Linear isometry from ambient tangents at the origin to R^m."""

    @abc.abstractmethod
    def tangent_from_coords(self, c) -> np.ndarray:
        """Inverse of coords_from_tangent."""

    def _check_t(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=np.float64)
        if np.any(t < -1e-12) or np.any(t > 1.0 + 1e-12):
            raise GeometryError("geodesic parameter t must lie in [0, 1]")
        return t


class _SpdBase(Manifold):
    """Shared SPD plumbing: shapes, validity, sym-vec coordinates."""

    @property
    def intrinsic_dim(self) -> int:
        return self.n * (self.n + 1) // 2

    @property
    def point_shape(self) -> tuple:
        return (self.n, self.n)

    def origin(self) -> np.ndarray:
        return np.eye(self.n)

    def check_point(self, x, atol: float | None = None) -> None:
        atol = SYMMETRY_ATOL if atol is None else atol
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-2:] != self.point_shape:
            raise GeometryError(f"expected trailing shape {self.point_shape}")
        if not np.all(np.isfinite(x)):
            raise GeometryError("point contains non-finite entries")
        if np.any(np.linalg.norm(x - _tr(x), axis=(-2, -1)) > atol):
            raise GeometryError("SPD point is not symmetric to tolerance")
        vals, _ = sym_eig(x)
        if np.any(vals <= PD_EIGENVALUE_FLOOR):
            raise GeometryError("SPD point has eigenvalues at or below 1e-12")

    def check_tangent(self, base, v, atol: float | None = None) -> None:
        atol = SYMMETRY_ATOL if atol is None else atol
        v = np.asarray(v, dtype=np.float64)
        if v.shape[-2:] != self.point_shape:
            raise GeometryError(f"expected trailing shape {self.point_shape}")
        if not np.all(np.isfinite(v)):
            raise GeometryError("tangent contains non-finite entries")
        if np.any(np.linalg.norm(v - _tr(v), axis=(-2, -1)) > atol):
            raise GeometryError("SPD tangent is not symmetric to tolerance")

    def project_point(self, raw) -> np.ndarray:
        # Symmetrize, then lift any eigenvalue below 1e-10 up to the floor.
        raw = np.asarray(raw, dtype=np.float64)
        if not np.all(np.isfinite(raw)):
            raise GeometryError("cannot repair non-finite input")
        vals, vecs = sym_eig(sym(raw))
        return _apply_spectral(vals, vecs, np.maximum(vals, 1e-10))

    def _eig(self, x):
        vals, vecs = sym_eig(x)
        _require_pd(vals, "SPD point")
        return vals, vecs

    def _logm(self, x) -> np.ndarray:
        vals, vecs = self._eig(x)
        return _apply_spectral(vals, vecs, np.log(vals))

    def _expm_sym(self, v) -> np.ndarray:
        vals, vecs = sym_eig(v)
        return _apply_spectral(vals, vecs, np.exp(vals))

    def coords_from_tangent(self, v) -> np.ndarray:
        v = np.asarray(v, dtype=np.float64)
        n = self.n
        iu, ju = np.triu_indices(n, 1)
        diag = v[..., np.arange(n), np.arange(n)]
        off = v[..., iu, ju] * np.sqrt(2.0)
        return np.concatenate([diag, off], axis=-1)

    def tangent_from_coords(self, c) -> np.ndarray:
        c = np.asarray(c, dtype=np.float64)
        n = self.n
        if c.shape[-1] != self.intrinsic_dim:
            raise GeometryError(f"expected {self.intrinsic_dim} coordinates")
        iu, ju = np.triu_indices(n, 1)
        v = np.zeros(c.shape[:-1] + (n, n))
        v[..., np.arange(n), np.arange(n)] = c[..., :n]
        off = c[..., n:] / np.sqrt(2.0)
        v[..., iu, ju] = off
        v[..., ju, iu] = off
        return v


class SpdAffine(_SpdBase):
    """SPD matrices with the affine-invariant (GL-invariant) metric."""

    kind = ManifoldKind.SPD_AFFINE

    @property
    def group_shape(self) -> tuple:
        return (self.n, self.n)

    def check_group(self, g, atol: float | None = None) -> None:
        g = np.asarray(g, dtype=np.float64)
        if g.shape[-2:] != self.group_shape:
            raise GeometryError(f"expected trailing shape {self.group_shape}")
        if not np.all(np.isfinite(g)):
            raise GeometryError("group element contains non-finite entries")
        if np.any(np.abs(np.linalg.det(g)) <= DET_FLOOR):
            raise GeometryError("group element is numerically singular")

    def _sqrt_pair(self, x):
        vals, vecs = self._eig(x)
        s = np.sqrt(vals)
        return _apply_spectral(vals, vecs, s), _apply_spectral(vals, vecs, 1.0 / s)

    def _whiten(self, x, y) -> np.ndarray:
        _, isq = self._sqrt_pair(x)
        return sym(isq @ y @ isq)

    def dist(self, x, y) -> np.ndarray:
        vals, _ = sym_eig(self._whiten(x, y))
        _require_pd(vals, "whitened operand")
        return np.sqrt(np.sum(np.log(vals) ** 2, axis=-1))

    def inner(self, base, u, v) -> np.ndarray:
        a = np.linalg.solve(base, u)
        b = np.linalg.solve(base, v)
        return np.einsum("...ij,...ji->...", a, b)

    def exp(self, x, v) -> np.ndarray:
        sq, isq = self._sqrt_pair(x)
        w = sym(isq @ v @ isq)
        return sym(sq @ self._expm_sym(w) @ sq)

    def log(self, x, y) -> np.ndarray:
        sq, isq = self._sqrt_pair(x)
        w = sym(isq @ y @ isq)
        vals, vecs = sym_eig(w)
        _require_pd(vals, "whitened operand")
        return sym(sq @ _apply_spectral(vals, vecs, np.log(vals)) @ sq)

    def transport(self, x, y, v) -> np.ndarray:
        _, isqx = self._sqrt_pair(x)
        sqy, _ = self._sqrt_pair(y)
        return sym(sqy @ (isqx @ v @ isqx) @ sqy)

    def geodesic(self, x, y, t) -> np.ndarray:
        t = self._check_t(t)
        sq, isq = self._sqrt_pair(x)
        w = sym(isq @ y @ isq)
        vals, vecs = sym_eig(w)
        _require_pd(vals, "whitened operand")
        powed = _apply_spectral(vals, vecs, np.exp(t[..., None] * np.log(vals)))
        return sym(sq @ powed @ sq)

    def act(self, g, x) -> np.ndarray:
        return sym(g @ x @ _tr(g))


class SpdLogEuclidean(_SpdBase):
    """SPD matrices under the flat log-Euclidean group metric.

    Composition is exp(log X + log Y); tangents are represented by their
    additive increment in the log domain, so transport is the identity.
    """

    kind = ManifoldKind.SPD_LOG_EUCLIDEAN

    @property
    def group_shape(self) -> tuple:
        return (self.n, self.n)

    def check_group(self, g, atol: float | None = None) -> None:
        # Rotations act by congruence; conjugation commutes with the log.
        atol = ORTHOGONALITY_ATOL if atol is None else atol
        g = np.asarray(g, dtype=np.float64)
        if g.shape[-2:] != self.group_shape:
            raise GeometryError(f"expected trailing shape {self.group_shape}")
        if not np.all(np.isfinite(g)):
            raise GeometryError("group element contains non-finite entries")
        defect = np.linalg.norm(_tr(g) @ g - np.eye(self.n), axis=(-2, -1))
        if np.any(defect > atol):
            raise GeometryError("group element is not orthogonal to tolerance")
        if np.any(np.linalg.det(g) <= 0.0):
            raise GeometryError("group element has non-positive determinant")

    def dist(self, x, y) -> np.ndarray:
        d = self._logm(x) - self._logm(y)
        return np.linalg.norm(d, axis=(-2, -1))

    def inner(self, base, u, v) -> np.ndarray:
        return np.sum(u * v, axis=(-2, -1))

    def exp(self, x, v) -> np.ndarray:
        return self._expm_sym(self._logm(x) + v)

    def log(self, x, y) -> np.ndarray:
        return self._logm(y) - self._logm(x)

    def transport(self, x, y, v) -> np.ndarray:
        x, y, v = np.broadcast_arrays(np.asarray(x, float), np.asarray(y, float), np.asarray(v, float))
        return np.array(v, dtype=np.float64, copy=True)

    def geodesic(self, x, y, t) -> np.ndarray:
        t = self._check_t(t)
        tt = t[..., None, None]
        return self._expm_sym((1.0 - tt) * self._logm(x) + tt * self._logm(y))

    def act(self, g, x) -> np.ndarray:
        return sym(g @ x @ _tr(g))

    # Group structure ------------------------------------------------------

    def compose(self, x, y) -> np.ndarray:
        return self._expm_sym(self._logm(x) + self._logm(y))

    def inverse(self, x) -> np.ndarray:
        vals, vecs = self._eig(x)
        return _apply_spectral(vals, vecs, 1.0 / vals)

    def algebra_log(self, x) -> np.ndarray:
        """iota coordinates of the group log at the identity."""
        return self.coords_from_tangent(self._logm(x))

    def algebra_exp(self, c) -> np.ndarray:
        return self._expm_sym(self.tangent_from_coords(c))

    def scale_identity(self, x, s) -> np.ndarray:
        vals, vecs = self._eig(x)
        s = np.asarray(s, dtype=np.float64)
        return _apply_spectral(vals, vecs, np.exp(s[..., None] * np.log(vals)))


class Sphere(Manifold):
    """Unit sphere S^n embedded in R^(n+1)."""

    kind = ManifoldKind.SPHERE

    @property
    def intrinsic_dim(self) -> int:
        return self.n

    @property
    def point_shape(self) -> tuple:
        return (self.n + 1,)

    @property
    def group_shape(self) -> tuple:
        return (self.n + 1, self.n + 1)

    def origin(self) -> np.ndarray:
        e = np.zeros(self.n + 1)
        e[0] = 1.0
        return e

    @property
    def truncation_radius(self) -> float | None:
        return np.pi

    def check_point(self, x, atol: float | None = None) -> None:
        atol = UNIT_NORM_ATOL if atol is None else atol
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1:] != self.point_shape:
            raise GeometryError(f"expected trailing shape {self.point_shape}")
        if not np.all(np.isfinite(x)):
            raise GeometryError("point contains non-finite entries")
        if np.any(np.abs(np.linalg.norm(x, axis=-1) - 1.0) > atol):
            raise GeometryError("sphere point is not unit norm to tolerance")

    def check_tangent(self, base, v, atol: float | None = None) -> None:
        atol = TANGENCY_ATOL if atol is None else atol
        v = np.asarray(v, dtype=np.float64)
        base = np.asarray(base, dtype=np.float64)
        if v.shape[-1:] != self.point_shape:
            raise GeometryError(f"expected trailing shape {self.point_shape}")
        if not np.all(np.isfinite(v)):
            raise GeometryError("tangent contains non-finite entries")
        if np.any(np.abs(np.sum(base * v, axis=-1)) > atol):
            raise GeometryError("sphere tangent is not orthogonal to its base")

    def check_group(self, g, atol: float | None = None) -> None:
        atol = ORTHOGONALITY_ATOL if atol is None else atol
        g = np.asarray(g, dtype=np.float64)
        if g.shape[-2:] != self.group_shape:
            raise GeometryError(f"expected trailing shape {self.group_shape}")
        if not np.all(np.isfinite(g)):
            raise GeometryError("group element contains non-finite entries")
        defect = np.linalg.norm(_tr(g) @ g - np.eye(self.n + 1), axis=(-2, -1))
        if np.any(defect > atol):
            raise GeometryError("group element is not orthogonal to tolerance")
        if np.any(np.linalg.det(g) <= 0.0):
            raise GeometryError("group element has non-positive determinant")

    def project_point(self, raw) -> np.ndarray:
        raw = np.asarray(raw, dtype=np.float64)
        if not np.all(np.isfinite(raw)):
            raise GeometryError("cannot repair non-finite input")
        norm = np.linalg.norm(raw, axis=-1, keepdims=True)
        if np.any(norm <= 1e-12):
            raise GeometryError("cannot project a near-zero vector to the sphere")
        return raw / norm

    def _cos_angle(self, x, y) -> np.ndarray:
        c = np.sum(np.asarray(x, float) * np.asarray(y, float), axis=-1)
        if np.any(c <= -1.0 + ANTIPODAL_GUARD):
            raise CutLocusError("sphere operation undefined for antipodal points")
        return np.clip(c, -1.0, 1.0)

    def dist(self, x, y) -> np.ndarray:
        # arctan2 keeps full precision near theta = 0 where arccos loses
        # half the significant digits.
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        c = self._cos_angle(x, y)
        s = np.linalg.norm(y - c[..., None] * x, axis=-1)
        return np.arctan2(s, c)

    def inner(self, base, u, v) -> np.ndarray:
        return np.sum(u * v, axis=-1)

    def exp(self, x, v) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        v = np.asarray(v, dtype=np.float64)
        theta = np.linalg.norm(np.broadcast_to(v, np.broadcast_shapes(x.shape, v.shape)), axis=-1)
        if np.any(theta > np.pi + 1e-9):
            raise CutLocusError("tangent norm exceeds the injectivity radius pi")
        small = theta < SMALL_ANGLE
        with np.errstate(divide="ignore", invalid="ignore"):
            sinc = np.where(small, 1.0 - theta**2 / 6.0, np.sin(theta) / np.where(small, 1.0, theta))
        y = np.cos(theta)[..., None] * x + sinc[..., None] * v
        return y / np.linalg.norm(y, axis=-1, keepdims=True)

    def log(self, x, y) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        c = self._cos_angle(x, y)
        residual = y - c[..., None] * x
        s = np.linalg.norm(residual, axis=-1)
        theta = np.arctan2(s, c)
        small = s < SMALL_ANGLE
        with np.errstate(divide="ignore", invalid="ignore"):
            factor = np.where(small, 1.0 + theta**2 / 6.0, theta / np.where(small, 1.0, s))
        v = factor[..., None] * residual
        # Remove the rounding component along x so tangency holds exactly.
        return v - np.sum(v * x, axis=-1, keepdims=True) * x

    def transport(self, x, y, v) -> np.ndarray:
        # Decompose v along the connecting geodesic direction; rotate that
        # component in the (x, u) plane, keep the orthogonal remainder.
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        v = np.asarray(v, dtype=np.float64)
        w = self.log(x, y)
        theta = np.linalg.norm(w, axis=-1)
        small = theta < SMALL_ANGLE
        safe = np.where(small, 1.0, theta)
        u = w / safe[..., None]
        comp = np.sum(u * v, axis=-1)
        rotated = (
            v
            - comp[..., None] * u
            + comp[..., None] * (np.cos(theta)[..., None] * u - np.sin(theta)[..., None] * x)
        )
        out = np.where(small[..., None], np.broadcast_to(v, rotated.shape), rotated)
        return out - np.sum(out * y, axis=-1, keepdims=True) * y

    def geodesic(self, x, y, t) -> np.ndarray:
        t = self._check_t(t)
        return self.exp(x, t[..., None] * self.log(x, y))

    def act(self, g, x) -> np.ndarray:
        return _matvec(g, x)

    def coords_from_tangent(self, v) -> np.ndarray:
        v = np.asarray(v, dtype=np.float64)
        return v[..., 1:].copy()

    def tangent_from_coords(self, c) -> np.ndarray:
        c = np.asarray(c, dtype=np.float64)
        if c.shape[-1] != self.n:
            raise GeometryError(f"expected {self.n} coordinates")
        v = np.zeros(c.shape[:-1] + (self.n + 1,))
        v[..., 1:] = c
        return v


class SpecialOrthogonal(Manifold):
    """Rotation group SO(n) with the bi-invariant Frobenius metric."""

    kind = ManifoldKind.SPECIAL_ORTHOGONAL

    @staticmethod
    def _min_n() -> int:
        return 2

    @property
    def intrinsic_dim(self) -> int:
        return self.n * (self.n - 1) // 2

    @property
    def point_shape(self) -> tuple:
        return (self.n, self.n)

    @property
    def group_shape(self) -> tuple:
        return (self.n, self.n)

    def origin(self) -> np.ndarray:
        return np.eye(self.n)

    @property
    def truncation_radius(self) -> float | None:
        return np.pi

    def check_point(self, x, atol: float | None = None) -> None:
        atol = ORTHOGONALITY_ATOL if atol is None else atol
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-2:] != self.point_shape:
            raise GeometryError(f"expected trailing shape {self.point_shape}")
        if not np.all(np.isfinite(x)):
            raise GeometryError("point contains non-finite entries")
        defect = np.linalg.norm(_tr(x) @ x - np.eye(self.n), axis=(-2, -1))
        if np.any(defect > atol):
            raise GeometryError("rotation is not orthogonal to tolerance")
        if np.any(np.linalg.det(x) <= 0.0):
            raise GeometryError("matrix has non-positive determinant")

    def check_tangent(self, base, v, atol: float | None = None) -> None:
        atol = SYMMETRY_ATOL if atol is None else atol
        base = np.asarray(base, dtype=np.float64)
        v = np.asarray(v, dtype=np.float64)
        if v.shape[-2:] != self.point_shape:
            raise GeometryError(f"expected trailing shape {self.point_shape}")
        if not np.all(np.isfinite(v)):
            raise GeometryError("tangent contains non-finite entries")
        w = _tr(base) @ v
        if np.any(np.linalg.norm(w + _tr(w), axis=(-2, -1)) > atol):
            raise GeometryError("rotation tangent generator is not skew")

    def check_group(self, g, atol: float | None = None) -> None:
        self.check_point(g, atol)

    def project_point(self, raw) -> np.ndarray:
        # Newton iteration toward the orthogonal polar factor:
        # Y <- (Y + Y^-T) / 2, capped at 20 steps.
        y = np.array(raw, dtype=np.float64, copy=True)
        if not np.all(np.isfinite(y)):
            raise GeometryError("cannot repair non-finite input")
        if y.shape[-2:] != self.point_shape:
            raise GeometryError(f"expected trailing shape {self.point_shape}")
        if np.any(np.abs(np.linalg.det(y)) <= DET_FLOOR):
            raise GeometryError("cannot repair a singular matrix to a rotation")
        for _ in range(20):
            defect = np.linalg.norm(_tr(y) @ y - np.eye(self.n), axis=(-2, -1))
            if np.all(defect <= 1e-13):
                break
            y = 0.5 * (y + np.linalg.inv(_tr(y)))
        if np.any(np.linalg.det(y) <= 0.0):
            raise GeometryError("nearest orthogonal matrix is a reflection")
        return y

    def _generator(self, x, y) -> np.ndarray:
        return rotation_logm(_tr(x) @ y)

    def dist(self, x, y) -> np.ndarray:
        x, y = np.asarray(x, float), np.asarray(y, float)
        return np.linalg.norm(self._generator(x, y), axis=(-2, -1))

    def inner(self, base, u, v) -> np.ndarray:
        return np.sum(u * v, axis=(-2, -1))

    def exp(self, x, v) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        return x @ skew_expm(skew(_tr(x) @ v))

    def log(self, x, y) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        return x @ self._generator(x, y)

    def transport(self, x, y, v) -> np.ndarray:
        return np.asarray(y, float) @ _tr(np.asarray(x, float)) @ v

    def geodesic(self, x, y, t) -> np.ndarray:
        t = self._check_t(t)
        x = np.asarray(x, dtype=np.float64)
        w = self._generator(x, y)
        return x @ skew_expm(t[..., None, None] * w)

    def act(self, g, x) -> np.ndarray:
        return np.asarray(g, float) @ x

    # Group structure ------------------------------------------------------

    def compose(self, x, y) -> np.ndarray:
        return np.asarray(x, float) @ y

    def inverse(self, x) -> np.ndarray:
        return _tr(np.asarray(x, float)).copy()

    def algebra_log(self, x) -> np.ndarray:
        return self.coords_from_tangent(rotation_logm(x))

    def algebra_exp(self, c) -> np.ndarray:
        return skew_expm(self.tangent_from_coords(c))

    def max_plane_angle(self, w) -> np.ndarray:
        """Largest invariant-plane angle of a skew generator."""
        w = np.asarray(w, dtype=np.float64)
        if self.n <= 3:
            return np.linalg.norm(w, axis=(-2, -1)) / np.sqrt(2.0)
        vals, _ = sym_eig(_tr(w) @ w)
        return np.sqrt(np.maximum(vals[..., -1], 0.0))

    def scale_identity(self, x, s) -> np.ndarray:
        w = rotation_logm(x)
        s = np.asarray(s, dtype=np.float64)
        scaled = s[..., None, None] * w
        if np.any(self.max_plane_angle(scaled) >= np.pi - SMALL_ANGLE):
            raise CutLocusError("scaled rotation leaves the principal branch")
        return skew_expm(scaled)

    def coords_from_tangent(self, v) -> np.ndarray:
        v = np.asarray(v, dtype=np.float64)
        iu, ju = np.triu_indices(self.n, 1)
        return v[..., iu, ju] * np.sqrt(2.0)

    def tangent_from_coords(self, c) -> np.ndarray:
        c = np.asarray(c, dtype=np.float64)
        if c.shape[-1] != self.intrinsic_dim:
            raise GeometryError(f"expected {self.intrinsic_dim} coordinates")
        iu, ju = np.triu_indices(self.n, 1)
        w = np.zeros(c.shape[:-1] + (self.n, self.n))
        w[..., iu, ju] = c / np.sqrt(2.0)
        w[..., ju, iu] = -c / np.sqrt(2.0)
        return w


_LIE_KINDS = (ManifoldKind.SPD_LOG_EUCLIDEAN, ManifoldKind.SPECIAL_ORTHOGONAL)


def is_lie_group(manifold: Manifold) -> bool:
    return manifold.kind in _LIE_KINDS


def make_manifold(kind: ManifoldKind | str, n: int) -> Manifold:
    kind = ManifoldKind(kind)
    cls = {
        ManifoldKind.SPD_AFFINE: SpdAffine,
        ManifoldKind.SPD_LOG_EUCLIDEAN: SpdLogEuclidean,
        ManifoldKind.SPHERE: Sphere,
        ManifoldKind.SPECIAL_ORTHOGONAL: SpecialOrthogonal,
    }[kind]
    return cls(n)


# ---------------------------------------------------------------------------
# Typed single-point layer.


@dataclass(frozen=True)
class ManifoldPoint:
    """A single point tagged with its manifold.

    Constructing one does not validate; use ``manifolds.make_point`` for the
    checked (and optionally repairing) constructor, or call ``validate``.
    """

    manifold: Manifold
    data: np.ndarray

    def validate(self, atol: float | None = None) -> "ManifoldPoint":
        self.manifold.check_point(self.data, atol)
        return self


@dataclass(frozen=True)
class TangentVector:
    """An ambient tangent vector at a specific base point."""

    base: ManifoldPoint
    ambient: np.ndarray

    @property
    def manifold(self) -> Manifold:
        return self.base.manifold

    def validate(self, atol: float | None = None) -> "TangentVector":
        self.manifold.check_tangent(self.base.data, self.ambient, atol)
        return self


@dataclass(frozen=True)
class GroupElement:
    """An element of the isometry group acting on a manifold."""

    manifold: Manifold
    data: np.ndarray

    def validate(self, atol: float | None = None) -> "GroupElement":
        self.manifold.check_group(self.data, atol)
        return self


def origin_point(manifold: Manifold) -> ManifoldPoint:
    return ManifoldPoint(manifold, manifold.origin())


def group_identity(manifold: Manifold) -> GroupElement:
    return GroupElement(manifold, manifold.group_identity())


def _same_manifold(a, b) -> Manifold:
    if a.manifold != b.manifold:
        raise ManifoldMismatchError(
            f"operands live on {a.manifold!r} and {b.manifold!r}"
        )
    return a.manifold


def _same_base(u: TangentVector, v: TangentVector) -> None:
    if not np.allclose(u.base.data, v.base.data, rtol=0.0, atol=1e-12):
        raise GeometryError("tangent vectors are based at different points")


def distance(x: ManifoldPoint, y: ManifoldPoint) -> float:
    """Geodesic distance between two points on the same manifold."""
    m = _same_manifold(x, y)
    return float(m.dist(x.data, y.data))


def inner_product(u: TangentVector, v: TangentVector) -> float:
    """Riemannian inner product of two tangents at a common base."""
    m = _same_manifold(u, v)
    _same_base(u, v)
    return float(m.inner(u.base.data, u.ambient, v.ambient))


def exp_map(x: ManifoldPoint, v: TangentVector) -> ManifoldPoint:
    """Follow the geodesic with initial velocity v for unit time."""
    m = _same_manifold(x, v)
    if not np.allclose(x.data, v.base.data, rtol=0.0, atol=1e-12):
        raise GeometryError("tangent vector is not based at x")
    return ManifoldPoint(m, m.exp(x.data, v.ambient))


def log_map(x: ManifoldPoint, y: ManifoldPoint) -> TangentVector:
    """Initial velocity of the geodesic from x reaching y at unit time."""
    m = _same_manifold(x, y)
    return TangentVector(x, m.log(x.data, y.data))


def parallel_transport(x: ManifoldPoint, y: ManifoldPoint, v: TangentVector) -> TangentVector:
    """Transport tangent v from x to y, preserving the metric."""
    m = _same_manifold(x, y)
    if v.manifold != m:
        raise ManifoldMismatchError("tangent lives on a different manifold")
    if not np.allclose(x.data, v.base.data, rtol=0.0, atol=1e-12):
        raise GeometryError("tangent vector is not based at x")
    return TangentVector(y, m.transport(x.data, y.data, v.ambient))


def geodesic_point(x: ManifoldPoint, y: ManifoldPoint, t: float) -> ManifoldPoint:
    """Point at parameter t in [0, 1] on the geodesic from x to y."""
    m = _same_manifold(x, y)
    return ManifoldPoint(m, m.geodesic(x.data, y.data, float(t)))


def group_action(g: GroupElement, x: ManifoldPoint) -> ManifoldPoint:
    """Apply an isometry to a point."""
    m = _same_manifold(g, x)
    return ManifoldPoint(m, m.act(g.data, x.data))


def tangent_coords(v: TangentVector) -> np.ndarray:
    """iota coordinates of a tangent based at the origin."""
    m = v.manifold
    if not np.allclose(v.base.data, m.origin(), rtol=0.0, atol=1e-12):
        raise GeometryError("tangent coordinates are defined at the origin only")
    return m.coords_from_tangent(v.ambient)


def coords_to_tangent(x: ManifoldPoint, c) -> TangentVector:
    """Inverse of tangent_coords; x must be the origin."""
    m = x.manifold
    if not np.allclose(x.data, m.origin(), rtol=0.0, atol=1e-12):
        raise GeometryError("tangent coordinates are defined at the origin only")
    return TangentVector(x, m.tangent_from_coords(np.asarray(c, dtype=np.float64)))


def validate_ball(points: Sequence[ManifoldPoint], radius: float) -> bool:
    """True when every point lies within radius of the first point.

    Advisory check that a family is concentrated enough for mean
    computations to be well posed.
    """
    if len(points) == 0:
        raise GeometryError("validate_ball needs at least one point")
    pivot = points[0]
    m = pivot.manifold
    for p in points[1:]:
        _same_manifold(pivot, p)
    if len(points) == 1:
        return True
    stacked = np.stack([p.data for p in points[1:]])
    return bool(np.all(m.dist(pivot.data, stacked) <= radius))
