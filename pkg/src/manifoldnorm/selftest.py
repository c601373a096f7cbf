"""Reduced-scale property suite behind ``manifoldnorm selftest``.

Each check prints one [PASS]/[FAIL] line with the measured error and its
tolerance.  The suite is a curated mirror of the full pytest battery,
sized to finish in seconds.
"""

from __future__ import annotations

import sys
import tempfile

import numpy as np

from .config import parse_config
from .geometry import (
    Manifold,
    SpdAffine,
    SpdLogEuclidean,
    Sphere,
    SpecialOrthogonal,
    is_lie_group,
)
from .manifolds import lie_compose, lie_identity, scale_from_identity
from .normalization import (
    Algorithm,
    FeatureGrid,
    NormKind,
    NormMode,
    NormState,
    homog_norm_infer,
    homog_norm_train,
    lie_norm_train,
    partition_indices,
)
from .stats import (
    HomogGaussian,
    LieGaussian,
    WeightVector,
    density_homog,
    density_lie,
    incremental_wfm,
    oracle_fm,
    oracle_fm_stack,
    weighted_variance,
)
from .geometry import ManifoldPoint
from .tensorio import read_grid, write_grid
from .train import train_model

__all__ = ["run_selftest", "main"]

FAMILIES: tuple[Manifold, ...] = (
    SpdAffine(3),
    SpdLogEuclidean(3),
    Sphere(3),
    SpecialOrthogonal(3),
)

BATCH = NormMode(NormKind.BATCH)
LAYER = NormMode(NormKind.LAYER)
INSTANCE = NormMode(NormKind.INSTANCE)


def group(gs: int) -> NormMode:
    return NormMode(NormKind.GROUP, gs)


def _random_group_element(m: Manifold, rng: np.random.Generator) -> np.ndarray:
    if isinstance(m, SpdAffine):
        return rng.normal(size=m.group_shape)
    k = m.group_shape[-1]
    q, r = np.linalg.qr(rng.normal(size=(k, k)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


def _cloud(m: Manifold, rng: np.random.Generator, count: int, spread: float = 0.4):
    c = spread * rng.standard_normal((count, m.intrinsic_dim))
    origin = np.broadcast_to(m.origin(), (count,) + m.point_shape)
    return m.exp(origin, m.tangent_from_coords(c))


def _points(m: Manifold, rng: np.random.Generator, count: int, spread: float = 0.4):
    return [ManifoldPoint(m, p) for p in _cloud(m, rng, count, spread)]


def _grid(m: Manifold, rng: np.random.Generator, dims, spread: float = 0.4):
    pts = _cloud(m, rng, int(np.prod(dims)), spread)
    return FeatureGrid(m, pts.reshape(tuple(dims) + m.point_shape))


def check_exp_log_roundtrip() -> float:
    worst = 0.0
    for m in FAMILIES:
        rng = np.random.default_rng(101)
        x = _cloud(m, rng, 12)
        y = _cloud(m, rng, 12)
        back = m.exp(x, m.log(x, y))
        worst = max(worst, float(np.max(m.dist(back, y))))
    return worst


def check_transport_metric() -> float:
    worst = 0.0
    for m in FAMILIES:
        rng = np.random.default_rng(102)
        x = _cloud(m, rng, 10)
        y = _cloud(m, rng, 10)
        # Logs of nearby points give tangents based at x.
        u = m.log(x, _cloud(m, rng, 10))
        v = m.log(x, _cloud(m, rng, 10))
        before = m.inner(x, u, v)
        after = m.inner(y, m.transport(x, y, u), m.transport(x, y, v))
        worst = max(worst, float(np.max(np.abs(before - after))))
    return worst


def check_action_isometry() -> float:
    worst = 0.0
    for m in FAMILIES:
        rng = np.random.default_rng(103)
        x = _cloud(m, rng, 10)
        y = _cloud(m, rng, 10)
        g = _random_group_element(m, rng)
        d0 = m.dist(x, y)
        d1 = m.dist(m.act(g, x), m.act(g, y))
        worst = max(worst, float(np.max(np.abs(d0 - d1))))
    return worst


def check_geodesic_speed() -> float:
    worst = 0.0
    for m in FAMILIES:
        rng = np.random.default_rng(104)
        x = _cloud(m, rng, 8)
        y = _cloud(m, rng, 8)
        full = m.dist(x, y)
        for t in (0.25, 0.7):
            part = m.dist(x, m.geodesic(x, y, t))
            worst = max(worst, float(np.max(np.abs(part - t * full))))
    return worst


def check_density_peak_agreement() -> float:
    # Log-likelihood argmax over a candidate set must match the variance
    # argmin; returns 0.0 on agreement and 1.0 otherwise.
    m = SpecialOrthogonal(3)
    rng = np.random.default_rng(105)
    samples = _points(m, rng, 12, spread=0.3)
    candidates = _points(m, rng, 6, spread=0.3)
    w = WeightVector.uniform(len(samples))
    for sigma2 in (0.2, 1.5):
        loglik = [
            sum(np.log(density_lie(x, LieGaussian(c, sigma2))) for x in samples)
            for c in candidates
        ]
        variances = [weighted_variance(samples, w, c) for c in candidates]
        if int(np.argmax(loglik)) != int(np.argmin(variances)):
            return 1.0
    return 0.0


def check_isotropic_density_match() -> float:
    m = SpdLogEuclidean(3)
    rng = np.random.default_rng(106)
    x, mu = _points(m, rng, 2)
    sigma2 = 0.8
    iso = density_homog(x, HomogGaussian(mu, np.eye(m.intrinsic_dim) / sigma2))
    ref = density_lie(x, LieGaussian(mu, sigma2))
    return abs(iso - ref)


def check_concentration_power_law() -> float:
    m = Sphere(3)
    rng = np.random.default_rng(107)
    x, mu = _points(m, rng, 2)
    c = rng.standard_normal((3, 3))
    delta = c @ c.T + 3.0 * np.eye(3)
    alpha = 2.7
    p1 = density_homog(x, HomogGaussian(mu, delta))
    p2 = density_homog(x, HomogGaussian(mu, alpha * delta))
    return abs(np.log(p2) - alpha * np.log(p1))


def check_variance_scaling_at_identity() -> float:
    worst = 0.0
    for m in (SpdLogEuclidean(3), SpecialOrthogonal(3)):
        rng = np.random.default_rng(108)
        points = _points(m, rng, 6)
        w = WeightVector(np.array([0.1, 0.2, 0.05, 0.15, 0.3, 0.2]))
        e = lie_identity(m)
        base = weighted_variance(points, w, e)
        for s in (0.5, 1.3):
            scaled = [scale_from_identity(p, s) for p in points]
            got = weighted_variance(scaled, w, e)
            worst = max(worst, abs(got - s * s * base) / max(1.0, base))
    return worst


def check_streaming_mean_accuracy() -> float:
    worst = 0.0
    for m in FAMILIES:
        rng = np.random.default_rng(109)
        pts = _points(m, rng, 100, spread=0.1)
        inc = incremental_wfm(pts)
        ora = oracle_fm(pts)
        worst = max(worst, float(m.dist(inc.data, ora.data)))
    return worst


def check_streaming_mean_equivariance() -> float:
    worst = 0.0
    for m in FAMILIES:
        if not is_lie_group(m):
            continue
        rng = np.random.default_rng(110)
        pts = _points(m, rng, 20, spread=0.3)
        g = _points(m, rng, 1, spread=0.5)[0]
        lhs = incremental_wfm([lie_compose(g, p) for p in pts])
        rhs = lie_compose(g, incremental_wfm(pts))
        worst = max(worst, float(m.dist(lhs.data, rhs.data)))
    return worst


def check_oracle_stationarity() -> float:
    worst = 0.0
    for m in FAMILIES:
        rng = np.random.default_rng(111)
        pts = _cloud(m, rng, 25, spread=0.3)
        fm = oracle_fm_stack(m, pts)
        logs = m.log(np.broadcast_to(fm, pts.shape), pts)
        resid = np.linalg.norm(m.coords_from_tangent(logs).mean(axis=0))
        worst = max(worst, float(resid))
    return worst


def check_partition_exactness() -> float:
    # Every mode must tile the cell lattice exactly; 0.0 when all modes
    # cover each index once, 1.0 otherwise.
    rng = np.random.default_rng(112)
    for _ in range(10):
        dims = (
            int(rng.integers(1, 4)),
            int(rng.integers(1, 4)),
            1,
            int(rng.integers(1, 5)),
            int(rng.integers(1, 5)) * 2,
        )
        total = int(np.prod(dims))
        for mode in (BATCH, LAYER, INSTANCE, group(2)):
            sets = partition_indices(mode, dims)
            flat = []
            for s in sets:
                flat.extend(int(np.ravel_multi_index(c, dims)) for c in s.cells())
            if sorted(flat) != list(range(total)):
                return 1.0
    return 0.0


def check_centering_zero_sum() -> float:
    worst = 0.0
    for m in (SpdAffine(3), Sphere(3), SpecialOrthogonal(3)):
        rng = np.random.default_rng(113)
        grid = _grid(m, rng, (2, 2, 1, 4, 2), spread=0.3)
        st = NormState.fresh(m, Algorithm.HOMOGENEOUS, BATCH, channels=2)
        out, _ = homog_norm_train(grid, st, mean_estimator="oracle")
        for s in partition_indices(BATCH, grid.dims):
            pts = s.gather(out.data)
            coords = m.coords_from_tangent(
                m.log(np.broadcast_to(m.origin(), pts.shape), pts)
            )
            worst = max(worst, float(np.linalg.norm(coords.mean(axis=0))))
    return worst


def check_centering_preserves_distance() -> float:
    worst = 0.0
    for m in (SpdAffine(3), Sphere(3), SpecialOrthogonal(3)):
        rng = np.random.default_rng(114)
        grid = _grid(m, rng, (2, 1, 1, 3, 2), spread=0.3)
        st = NormState.fresh(m, Algorithm.HOMOGENEOUS, BATCH, channels=2)
        out, _ = homog_norm_train(grid, st, mean_estimator="oracle")
        for s in partition_indices(BATCH, grid.dims):
            pts_in = s.gather(grid.data)
            pts_out = s.gather(out.data)
            center = oracle_fm_stack(m, pts_in)
            d_out = m.dist(np.broadcast_to(m.origin(), pts_out.shape), pts_out)
            d_in = m.dist(center, pts_in)
            worst = max(worst, float(np.max(np.abs(d_out - d_in))))
    return worst


def check_lie_output_mean_is_bias() -> float:
    from .normalization import bias_from_coords, bias_param_dim

    worst = 0.0
    for m in (SpdLogEuclidean(3), SpecialOrthogonal(3)):
        rng = np.random.default_rng(115)
        grid = _grid(m, rng, (2, 1, 1, 4, 2), spread=0.3)
        st = NormState.fresh(m, Algorithm.LIE, BATCH, channels=2)
        coords = 0.3 * rng.standard_normal((2, bias_param_dim(m, Algorithm.LIE)))
        st = st.with_params(bias=bias_from_coords(m, Algorithm.LIE, coords))
        out, _ = lie_norm_train(grid, st, mean_estimator="oracle")
        for ci, s in enumerate(partition_indices(BATCH, grid.dims)):
            fm = oracle_fm_stack(m, s.gather(out.data))
            worst = max(worst, float(m.dist(fm, st.bias[ci])))
    return worst


def check_momentum_one_consistency() -> float:
    m = SpdAffine(3)
    rng = np.random.default_rng(116)
    grid = _grid(m, rng, (2, 2, 1, 3, 2), spread=0.3)
    st = NormState.fresh(m, Algorithm.HOMOGENEOUS, BATCH, channels=2, momentum=1.0)
    trained, st2 = homog_norm_train(grid, st)
    inferred = homog_norm_infer(grid, st2)
    return float(np.max(np.abs(trained.data - inferred.data)))


def check_tensor_roundtrip() -> float:
    m = SpdAffine(3)
    rng = np.random.default_rng(117)
    grid = _grid(m, rng, (2, 2, 1, 3, 2))
    labels = rng.integers(0, 2, size=3).astype(np.int64)
    with tempfile.NamedTemporaryFile(suffix=".mnrm") as fh:
        write_grid(fh.name, grid, labels)
        back, lab = read_grid(fh.name)
    same = (
        back.data.tobytes() == grid.data.tobytes()
        and lab is not None
        and np.array_equal(lab, labels)
    )
    return 0.0 if same else 1.0


def check_end_to_end_determinism() -> float:
    from .data import generate_synthetic, split_dataset

    text = (
        "dims = 2x2x1\nchannels = 2\ntrain_per_class = 4\ntest_per_class = 2\n"
        "epochs = 1\nbatch_size = 4\nnorm = group\n"
        "arch = conv:2x2x1:s:2x2x1:c:2, trelu, norm, fc\nseed = 5\n"
    )
    prints = []
    for _ in range(2):
        cfg = parse_config(text)
        grid, labels = generate_synthetic(cfg, cfg.seed)
        tr, try_, _, _ = split_dataset(grid, labels, cfg)
        _, rep = train_model(cfg, tr, try_)
        prints.append(rep.fingerprint())
    return 0.0 if prints[0] == prints[1] else 1.0


CHECKS = (
    ("exp/log roundtrip, four manifold families", 1e-9, check_exp_log_roundtrip),
    ("parallel transport preserves the metric", 1e-9, check_transport_metric),
    ("group action is isometric", 1e-9, check_action_isometry),
    ("geodesic speed law d(x, gamma(t)) = t d(x, y)", 1e-9, check_geodesic_speed),
    ("density peak coincides with the variance argmin", 0.0, check_density_peak_agreement),
    ("isotropic concentration equals scalar density", 1e-12, check_isotropic_density_match),
    ("density concentration power law", 1e-12, check_concentration_power_law),
    ("variance scaling law at the identity", 1e-12, check_variance_scaling_at_identity),
    ("streaming mean tracks fixed-point mean", 1e-2, check_streaming_mean_accuracy),
    ("streaming mean left-equivariance", 1e-9, check_streaming_mean_equivariance),
    ("fixed-point mean stationarity residual", 1e-8, check_oracle_stationarity),
    ("partition modes tile the lattice exactly", 0.0, check_partition_exactness),
    ("centered tangent coordinates sum to zero", 1e-6, check_centering_zero_sum),
    ("centering preserves distance to the mean", 1e-9, check_centering_preserves_distance),
    ("group-path output mean lands on the bias", 1e-6, check_lie_output_mean_is_bias),
    ("momentum-1 training equals inference", 0.0, check_momentum_one_consistency),
    ("tensor file roundtrip is bit-exact", 0.0, check_tensor_roundtrip),
    ("one-epoch training run is deterministic", 0.0, check_end_to_end_determinism),
)


def run_selftest(stream=None) -> int:
    """Run every check; return 0 if all pass, 2 otherwise."""
    stream = stream if stream is not None else sys.stdout
    failures = 0
    for name, tol, fn in CHECKS:
        try:
            err = fn()
            ok = err <= tol
            detail = f"err {err:.3g}, tol {tol:g}"
        except Exception as exc:  # pragma: no cover - defensive reporting
            ok = False
            detail = f"raised {type(exc).__name__}: {exc}"
        failures += 0 if ok else 1
        stream.write(f"[{'PASS' if ok else 'FAIL'}] {name} ({detail})\n")
    stream.write(f"{len(CHECKS) - failures}/{len(CHECKS)} checks passed\n")
    return 0 if failures == 0 else 2


def main() -> int:
    return run_selftest()


if __name__ == "__main__":
    sys.exit(main())
