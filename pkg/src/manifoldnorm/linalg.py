"""Dense kernels for small symmetric and orthogonal matrices.

All functions accept stacked operands: an array of shape ``(..., n, n)``
is treated as a batch of matrices and the kernels vectorize over the
leading axes.  Everything is float64.
"""

from typing import NamedTuple

import numpy as np

from .errors import ConvergenceError, CutLocusError, GeometryError

# Relative off-diagonal mass at which the Jacobi sweep stops.  Well below
# the 1e-9 reconstruction contract, comfortably above float64 roundoff.
_JACOBI_TOL = 1e-13
_JACOBI_MAX_SWEEPS = 100

# Eigenvalues at or below this floor make log/sqrt/inv_sqrt/power ill-posed.
PD_EIGENVALUE_FLOOR = 1e-12


class SymmetricEig(NamedTuple):
    """Eigendecomposition of a symmetric matrix batch.

    ``eigenvalues`` has shape ``(..., n)`` in ascending order and
    ``eigenvectors`` has shape ``(..., n, n)`` with orthonormal columns,
    column ``i`` paired with eigenvalue ``i``.  The sign of each column is
    fixed so its first component of magnitude above 1e-12 is positive.
    """

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray


def _as_square_batch(a, name: str) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim < 2 or a.shape[-1] != a.shape[-2]:
        raise GeometryError(f"{name} must be square, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise GeometryError(f"{name} contains non-finite entries")
    return a


def _frob(a) -> np.ndarray:
    return np.sqrt(np.sum(np.square(a), axis=(-2, -1)))


def _transpose(a) -> np.ndarray:
    return np.swapaxes(a, -1, -2)


def sym(a) -> np.ndarray:
    """Symmetric part ``(A + A^T)/2``."""
    return 0.5 * (a + _transpose(a))


def skew(a) -> np.ndarray:
    """Skew part ``(A - A^T)/2``."""
    return 0.5 * (a - _transpose(a))


def _check_symmetric(a, name: str, tol: float = 1e-8) -> np.ndarray:
    scale = np.maximum(1.0, _frob(a))
    asym = _frob(a - _transpose(a))
    if np.any(asym > tol * scale):
        raise GeometryError(f"{name} is not symmetric to tolerance {tol}")
    return sym(a)


def sym_eig(a, max_sweeps: int = _JACOBI_MAX_SWEEPS) -> SymmetricEig:
    """Eigendecomposition of symmetric matrices by cyclic Jacobi sweeps.

    Parameters
    ----------
    a : array, shape (..., n, n)
        Symmetric to within 1e-8 of its Frobenius norm; the symmetric part
        is decomposed.
    max_sweeps : int
        Iteration cap; a full cycle over all index pairs counts as one sweep.

    Returns
    -------
    SymmetricEig
        Ascending eigenvalues and orthonormal, sign-fixed eigenvectors.
    """
    a = _as_square_batch(a, "matrix")
    a = _check_symmetric(a, "matrix")
    n = a.shape[-1]
    if n == 1:
        return SymmetricEig(a[..., 0].copy(), np.ones_like(a))

    d = a.copy()
    q = np.zeros_like(d)
    q[...] = np.eye(n)
    scale = np.maximum(1.0, _frob(a))

    pairs = [(p, r) for p in range(n - 1) for r in range(p + 1, n)]
    off_mask = ~np.eye(n, dtype=bool)
    for _ in range(max_sweeps):
        off = np.sqrt(np.sum(np.square(d * off_mask), axis=(-2, -1)))
        if np.all(off <= _JACOBI_TOL * scale):
            break
        for p, r in pairs:
            app = d[..., p, p]
            arr = d[..., r, r]
            apr = d[..., p, r]
            # Classical small-angle rotation: |phi| <= pi/4 keeps the cyclic
            # method convergent.
            with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
                tau = (arr - app) / (2.0 * apr)
                sgn = np.where(tau >= 0.0, 1.0, -1.0)
                t = np.where(
                    np.isfinite(tau),
                    sgn / (np.abs(tau) + np.sqrt(tau * tau + 1.0)),
                    0.0,
                )
            t = np.where(apr == 0.0, 0.0, t)
            c = 1.0 / np.sqrt(t * t + 1.0)
            s = t * c
            cc = c[..., None]
            ss = s[..., None]

            rp = d[..., p, :].copy()
            rr = d[..., r, :].copy()
            d[..., p, :] = cc * rp - ss * rr
            d[..., r, :] = ss * rp + cc * rr
            cp = d[..., :, p].copy()
            cr = d[..., :, r].copy()
            d[..., :, p] = cc * cp - ss * cr
            d[..., :, r] = ss * cp + cc * cr
            d[..., p, r] = 0.0
            d[..., r, p] = 0.0

            qp = q[..., :, p].copy()
            qr = q[..., :, r].copy()
            q[..., :, p] = cc * qp - ss * qr
            q[..., :, r] = ss * qp + cc * qr
    else:
        raise ConvergenceError(
            f"Jacobi eigensolver did not converge in {max_sweeps} sweeps"
        )

    vals = d[..., range(n), range(n)]
    order = np.argsort(vals, axis=-1, kind="stable")
    vals = np.take_along_axis(vals, order, axis=-1)
    vecs = np.take_along_axis(q, order[..., None, :], axis=-1)

    # Deterministic sign: first component of magnitude > 1e-12 is positive.
    lead_idx = np.argmax(np.abs(vecs) > 1e-12, axis=-2)
    lead = np.take_along_axis(vecs, lead_idx[..., None, :], axis=-2)[..., 0, :]
    vecs = vecs * np.where(lead < 0.0, -1.0, 1.0)[..., None, :]
    return SymmetricEig(vals, vecs)


def _rebuild(vals, vecs) -> np.ndarray:
    return sym((vecs * vals[..., None, :]) @ _transpose(vecs))


_SPECTRAL_FUNCS = ("log", "exp", "sqrt", "inv_sqrt", "power")


def sym_matrix_function(a, func: str, power: float | None = None) -> np.ndarray:
    """Apply a scalar function to a symmetric matrix through its spectrum.

    ``func`` is one of ``log``, ``exp``, ``sqrt``, ``inv_sqrt``, ``power``;
    ``power`` supplies the exponent ``s`` for the last and computes
    ``exp(s * log(lambda))`` per eigenvalue.  Everything except ``exp``
    requires eigenvalues above 1e-12.
    """
    if func not in _SPECTRAL_FUNCS:
        raise GeometryError(f"unknown spectral function {func!r}")
    if func == "power" and power is None:
        raise GeometryError("power exponent required")
    vals, vecs = sym_eig(a)
    if func != "exp" and np.any(vals <= PD_EIGENVALUE_FLOOR):
        raise GeometryError(
            f"spectral {func} needs eigenvalues above {PD_EIGENVALUE_FLOOR}"
        )
    if func == "log":
        fvals = np.log(vals)
    elif func == "exp":
        fvals = np.exp(vals)
    elif func == "sqrt":
        fvals = np.sqrt(vals)
    elif func == "inv_sqrt":
        fvals = 1.0 / np.sqrt(vals)
    else:
        fvals = np.exp(power * np.log(vals))
    return _rebuild(fvals, vecs)


def dense_expm(a) -> np.ndarray:
    """Matrix exponential by scaling-and-squaring with a Taylor core.

    Intended for small well-scaled matrices (group generators).  The input
    is scaled so its Frobenius norm is at most 1/2, expanded to 18 Taylor
    terms, and squared back up.
    """
    a = _as_square_batch(a, "matrix")
    n = a.shape[-1]
    norm = _frob(a)
    max_norm = float(np.max(norm)) if norm.size else 0.0
    squarings = max(0, int(np.ceil(np.log2(max(max_norm, 1e-300) / 0.5))))
    b = a / (2.0**squarings)
    eye = np.broadcast_to(np.eye(n), b.shape)
    result = eye.copy()
    term = eye.copy()
    for k in range(1, 19):
        term = term @ b / k
        result = result + term
    for _ in range(squarings):
        result = result @ result
    return result


def _check_rotation(r, tol: float = 1e-8) -> np.ndarray:
    r = _as_square_batch(r, "rotation")
    n = r.shape[-1]
    defect = _frob(_transpose(r) @ r - np.eye(n))
    if np.any(defect > tol):
        raise GeometryError("input is not orthogonal to tolerance")
    if np.any(np.linalg.det(r) <= 0.0):
        raise GeometryError("input has non-positive determinant")
    return r


def _vee3(w) -> np.ndarray:
    return np.stack([w[..., 2, 1], w[..., 0, 2], w[..., 1, 0]], axis=-1)


def _theta_over_sin(cos_vals) -> np.ndarray:
    """Spectral scalar theta/sin(theta) as a function of cos(theta).

    Near cos = 1 the two-term series 1 + (1-c)/3 is exact to O((1-c)^2);
    values at or below -1 + 1e-12 sit on the cut locus and are rejected
    by the caller.
    """
    c = np.clip(cos_vals, -1.0, 1.0)
    near_one = 1.0 - c < 1e-10
    safe = np.where(near_one, 0.0, c)
    theta = np.arccos(safe)
    sin = np.sqrt(np.maximum(1.0 - safe * safe, 0.0))
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = theta / sin
    return np.where(near_one, 1.0 + (1.0 - c) / 3.0, ratio)


def rotation_logm(r) -> np.ndarray:
    """Principal logarithm of a rotation matrix, returned skew-symmetric.

    Closed forms for n <= 3; for larger n the log is recovered spectrally
    from the symmetric part:  with S = (R + R^T)/2 and K = (R - R^T)/2,
    every invariant 2-plane of R contributes cos(theta) to S and
    sin(theta) to K, so W = f(S) K with f(cos t) = t/sin(t).  Rotations
    with a plane at angle pi have no principal log and are rejected.
    """
    r = _check_rotation(r)
    n = r.shape[-1]
    if n == 1:
        return np.zeros_like(r)
    if n == 2:
        theta = np.arctan2(r[..., 1, 0], r[..., 0, 0])
        if np.any(np.abs(theta) >= np.pi - 1e-8):
            raise CutLocusError(_PI_PLANE_MSG)
        w = np.zeros_like(r)
        w[..., 0, 1] = -theta
        w[..., 1, 0] = theta
        return w
    if n == 3:
        k = skew(r)
        kv = _vee3(k)
        s = np.sqrt(np.sum(kv * kv, axis=-1))
        c = 0.5 * (np.trace(r, axis1=-2, axis2=-1) - 1.0)
        theta = np.arctan2(s, c)
        if np.any(theta >= np.pi - 1e-8):
            raise CutLocusError(_PI_PLANE_MSG)
        small = s < 1e-7
        with np.errstate(divide="ignore", invalid="ignore"):
            factor = np.where(small, 1.0 + theta * theta / 6.0, theta / np.where(small, 1.0, s))
        return skew(factor[..., None, None] * k)

    s_part = sym(r)
    k_part = skew(r)
    vals, vecs = sym_eig(s_part)
    if np.any(vals <= -1.0 + 1e-12):
        raise CutLocusError(_PI_PLANE_MSG)
    f = _theta_over_sin(vals)
    w = _rebuild(f, vecs) @ k_part
    return skew(w)


_PI_PLANE_MSG = "rotation has a plane at angle pi; no principal log"


def skew_expm(w) -> np.ndarray:
    """Exponential of a skew-symmetric matrix, an exact rotation.

    Rodrigues forms for n <= 3, scaling-and-squaring otherwise.
    """
    w = _as_square_batch(w, "generator")
    n = w.shape[-1]
    defect = _frob(w + _transpose(w))
    if np.any(defect > 1e-10 * np.maximum(1.0, _frob(w))):
        raise GeometryError("generator is not skew-symmetric to tolerance")
    w = skew(w)
    if n == 1:
        return np.ones_like(w)
    if n == 2:
        theta = w[..., 1, 0]
        c, s = np.cos(theta), np.sin(theta)
        out = np.empty_like(w)
        out[..., 0, 0] = c
        out[..., 0, 1] = -s
        out[..., 1, 0] = s
        out[..., 1, 1] = c
        return out
    if n == 3:
        wv = _vee3(w)
        theta = np.sqrt(np.sum(wv * wv, axis=-1))
        small = theta < 1e-8
        t2 = theta * theta
        with np.errstate(divide="ignore", invalid="ignore"):
            a = np.where(small, 1.0 - t2 / 6.0, np.sin(theta) / np.where(small, 1.0, theta))
            b = np.where(small, 0.5 - t2 / 24.0, (1.0 - np.cos(theta)) / np.where(small, 1.0, t2))
        eye = np.broadcast_to(np.eye(3), w.shape)
        return eye + a[..., None, None] * w + b[..., None, None] * (w @ w)
    return dense_expm(w)
