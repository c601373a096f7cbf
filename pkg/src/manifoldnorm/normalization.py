"""Intrinsic normalization over manifold-valued feature grids.

A feature grid is a dense 5-axis array of points, indexed
(i1, i2, i3, sample, channel).  A normalization mode partitions the grid
into index sets; each set is re-centered at its own mean, rescaled in
origin tangent coordinates, and re-biased by a learned group element.

Two algorithm families share this machinery:

* homogeneous: center through Exp/Log and parallel transport to the
  origin, scale by a positive diagonal matrix in iota coordinates, bias
  by an acting group element.
* lie: center by left translation with the inverse mean, scale through
  the group exponential (expm(s logm X)), bias by left translation.

Learnable parameters and the running means are keyed by the
sample-independent part of a set's identity (channel, group index, or
nothing for layer mode), so statistics learned during training apply to
test batches of any size.  Sets sharing a key update the shared running
mean sequentially in set order.
"""

from dataclasses import dataclass, replace
from enum import Enum

import numpy as np

from .errors import ConfigError, GeometryError
from .geometry import Manifold, ManifoldKind, ManifoldPoint, is_lie_group
from .linalg import dense_expm, skew_expm
from .stats import oracle_fm_stack, wfm_stack

_ESTIMATORS = ("incremental", "oracle")


@dataclass(frozen=True)
class FeatureGrid:
    """Dense grid of points: shape (D1, D2, D3, N, C) + point_shape.

    The constructor checks shape and finiteness only; ``validate`` runs
    the full per-cell manifold checks.  Grids produced internally by
    geometric operations stay valid by construction, so the expensive
    check is reserved for external data.
    """

    manifold: Manifold
    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        ps = self.manifold.point_shape
        if data.ndim != 5 + len(ps) or data.shape[5:] != ps:
            raise ConfigError(
                f"grid data must have shape (D1,D2,D3,N,C)+{ps}, got {data.shape}"
            )
        if not np.all(np.isfinite(data)):
            raise GeometryError("grid contains non-finite entries")
        object.__setattr__(self, "data", data)

    @property
    def dims(self) -> tuple:
        return self.data.shape[:5]

    @property
    def num_cells(self) -> int:
        return int(np.prod(self.dims))

    def validate(self) -> "FeatureGrid":
        self.manifold.check_point(self.data)
        return self

    def cell(self, i1: int, i2: int, i3: int, n: int, c: int) -> ManifoldPoint:
        return ManifoldPoint(self.manifold, self.data[i1, i2, i3, n, c])


class NormKind(Enum):
    BATCH = "batch"
    LAYER = "layer"
    INSTANCE = "instance"
    GROUP = "group"


@dataclass(frozen=True)
class NormMode:
    kind: NormKind
    group_size: int | None = None

    def __post_init__(self):
        kind = NormKind(self.kind)
        object.__setattr__(self, "kind", kind)
        if kind is NormKind.GROUP:
            if self.group_size is None or self.group_size < 1:
                raise ConfigError("group mode needs a positive group_size")
        elif self.group_size is not None:
            raise ConfigError("group_size is meaningful only for group mode")

    def num_keys(self, channels: int) -> int:
        if self.kind is NormKind.LAYER:
            return 1
        if self.kind is NormKind.GROUP:
            if channels % self.group_size != 0:
                raise ConfigError(
                    f"group_size {self.group_size} does not divide {channels} channels"
                )
            return channels // self.group_size
        return channels


@dataclass(frozen=True)
class IndexSet:
    """One normalization set: a rectangular sub-block of the grid.

    ``key`` is the sample-independent identity shared with the state;
    ``selector`` is a 5-tuple of ints/slices addressing the block.
    """

    key: int
    selector: tuple
    dims: tuple

    @property
    def size(self) -> int:
        return int(np.prod([len(self._axis_values(a)) for a in range(5)]))

    def _axis_values(self, axis: int):
        sel = self.selector[axis]
        if isinstance(sel, int):
            return [sel]
        return list(range(*sel.indices(self.dims[axis])))

    def cells(self):
        """All (i1, i2, i3, n, c) multi-indices in the set, row-major."""
        from itertools import product

        return product(*(self._axis_values(a) for a in range(5)))

    def gather(self, data: np.ndarray) -> np.ndarray:
        """Extract the block as a flat (size,) + trailing stack."""
        block = data[self.selector]
        trailing = data.shape[5:]
        return block.reshape((-1,) + trailing)

    def scatter(self, data: np.ndarray, values: np.ndarray) -> None:
        block_shape = data[self.selector].shape
        data[self.selector] = values.reshape(block_shape)


def partition_indices(mode: NormMode, dims: tuple) -> list:
    """Split grid indices into disjoint covering normalization sets.

    batch: one set per channel over everything else; layer: one set per
    sample; instance: one per (sample, channel); group: one per
    (sample, channel group).
    """
    if len(dims) != 5:
        raise ConfigError("dims must be (D1, D2, D3, N, C)")
    if any(int(d) < 1 for d in dims):
        raise ConfigError("all grid dimensions must be positive")
    d1, d2, d3, n, c = (int(d) for d in dims)
    dims = (d1, d2, d3, n, c)
    full = slice(None)
    sets = []
    if mode.kind is NormKind.BATCH:
        for ci in range(c):
            sets.append(IndexSet(ci, (full, full, full, full, ci), dims))
    elif mode.kind is NormKind.LAYER:
        for ni in range(n):
            sets.append(IndexSet(0, (full, full, full, ni, full), dims))
    elif mode.kind is NormKind.INSTANCE:
        for ni in range(n):
            for ci in range(c):
                sets.append(IndexSet(ci, (full, full, full, ni, ci), dims))
    else:
        mode.num_keys(c)
        gs = mode.group_size
        for ni in range(n):
            for gi in range(c // gs):
                sel = (full, full, full, ni, slice(gi * gs, (gi + 1) * gs))
                sets.append(IndexSet(gi, sel, dims))
    return sets


class Algorithm(Enum):
    HOMOGENEOUS = "homogeneous"
    LIE = "lie"


@dataclass(frozen=True)
class NormState:
    """Per-key running means and learnable bias/scale parameters.

    momentum None selects the counting schedule 1/(updates+1), which
    reproduces the streaming-mean recursion exactly.
    """

    manifold: Manifold
    algorithm: Algorithm
    mode: NormMode
    running_mean: np.ndarray  # (num_keys,) + point_shape
    bias: np.ndarray          # (num_keys,) + group_shape, or + point_shape for lie
    scale: np.ndarray         # (num_keys, m) diagonals, or (num_keys,) scalars for lie
    momentum: float | None
    updates: np.ndarray       # (num_keys,) per-key running-mean update counts
    steps_seen: int

    def __post_init__(self):
        if self.algorithm is Algorithm.LIE and not is_lie_group(self.manifold):
            raise ConfigError(f"lie algorithm requires a Lie-group manifold, got {self.manifold!r}")
        if self.momentum is not None and not (0.0 <= self.momentum <= 1.0):
            raise ConfigError("momentum must lie in [0, 1]")
        if np.any(self.scale <= 0.0) or not np.all(np.isfinite(self.scale)):
            raise ConfigError("scale entries must be positive and finite")

    @property
    def num_keys(self) -> int:
        return self.running_mean.shape[0]

    @classmethod
    def fresh(
        cls,
        manifold: Manifold,
        algorithm: Algorithm,
        mode: NormMode,
        channels: int,
        momentum: float | None = 0.1,
    ) -> "NormState":
        keys = mode.num_keys(channels)
        rm = np.broadcast_to(manifold.origin(), (keys,) + manifold.point_shape).copy()
        if algorithm is Algorithm.LIE:
            bias = np.broadcast_to(manifold.origin(), (keys,) + manifold.point_shape).copy()
            scale = np.ones(keys)
        else:
            ident = manifold.group_identity()
            bias = np.broadcast_to(ident, (keys,) + ident.shape).copy()
            scale = np.ones((keys, manifold.intrinsic_dim))
        return cls(
            manifold=manifold,
            algorithm=algorithm,
            mode=mode,
            running_mean=rm,
            bias=bias,
            scale=scale,
            momentum=momentum,
            updates=np.zeros(keys, dtype=np.int64),
            steps_seen=0,
        )

    def with_params(self, bias: np.ndarray | None = None, scale: np.ndarray | None = None) -> "NormState":
        out = self
        if bias is not None:
            if bias.shape != self.bias.shape:
                raise ConfigError("bias shape mismatch")
            out = replace(out, bias=np.asarray(bias, dtype=np.float64))
        if scale is not None:
            if scale.shape != self.scale.shape:
                raise ConfigError("scale shape mismatch")
            out = replace(out, scale=np.asarray(scale, dtype=np.float64))
        return out


def _interp(m: Manifold, a: np.ndarray, b: np.ndarray, t: float) -> np.ndarray:
    # Exact at the endpoints so momentum 0/1 stores the operand bitwise.
    if t == 0.0:
        return a.copy()
    if t == 1.0:
        return b.copy()
    return m.geodesic(a, b, t)


def update_running_mean(m_run: ManifoldPoint, m_batch: ManifoldPoint, momentum: float) -> ManifoldPoint:
    """One geodesic interpolation step toward the batch mean."""
    if m_run.manifold != m_batch.manifold:
        raise GeometryError("running and batch means live on different manifolds")
    if not (0.0 <= momentum <= 1.0):
        raise ConfigError("momentum must lie in [0, 1]")
    return ManifoldPoint(
        m_run.manifold, _interp(m_run.manifold, m_run.data, m_batch.data, momentum)
    )


def _check_call(batch: FeatureGrid, state: NormState, mode: NormMode | None) -> NormMode:
    if mode is None:
        mode = state.mode
    elif mode != state.mode:
        raise ConfigError("mode disagrees with the state's mode")
    if batch.manifold != state.manifold:
        raise ConfigError("grid and state manifolds differ")
    if state.num_keys != mode.num_keys(batch.dims[4]):
        raise ConfigError("state was built for a different channel count")
    return mode


def _set_means(
    m: Manifold, stack: np.ndarray, mean_estimator: str
) -> np.ndarray:
    """Per-set means of an (S, K) + point_shape stack."""
    if mean_estimator not in _ESTIMATORS:
        raise ConfigError(f"unknown mean estimator {mean_estimator!r}")
    k = stack.shape[1]
    if mean_estimator == "incremental":
        return wfm_stack(m, np.moveaxis(stack, 1, 0), np.full(k, 1.0 / k))
    return np.stack([oracle_fm_stack(m, stack[j]) for j in range(stack.shape[0])])


def _advance_state(state: NormState, sets, means: np.ndarray) -> NormState:
    m = state.manifold
    rm = state.running_mean.copy()
    updates = state.updates.copy()
    for j, s in enumerate(sets):
        k = s.key
        eff = state.momentum if state.momentum is not None else 1.0 / (updates[k] + 1.0)
        rm[k] = _interp(m, rm[k], means[j], eff)
        updates[k] += 1
    return replace(state, running_mean=rm, updates=updates, steps_seen=state.steps_seen + 1)


def _apply_homog(
    m: Manifold,
    stack: np.ndarray,
    centers: np.ndarray,
    scale_rows: np.ndarray,
    bias_rows: np.ndarray,
) -> np.ndarray:
    """Steps 3-5 on an (S, K) stack centered at per-set points."""
    origin = m.origin()
    v = m.log(centers[:, None], stack)
    w = m.transport(centers[:, None], origin, v)
    c = m.coords_from_tangent(w)
    c = c * scale_rows[:, None, :]
    out = m.exp(origin, m.tangent_from_coords(c))
    return m.act(bias_rows[:, None], out)


def _apply_lie(
    m: Manifold,
    stack: np.ndarray,
    centers: np.ndarray,
    scale_rows: np.ndarray,
    bias_rows: np.ndarray,
) -> np.ndarray:
    centered = m.compose(m.inverse(centers)[:, None], stack)
    scaled = m.scale_identity(centered, scale_rows[:, None])
    return m.compose(bias_rows[:, None], scaled)


def _run(
    batch: FeatureGrid,
    state: NormState,
    mode: NormMode | None,
    mean_estimator: str,
    train: bool,
    apply_steps,
):
    mode = _check_call(batch, state, mode)
    sets = partition_indices(mode, batch.dims)
    m = state.manifold
    data = batch.data
    stack = np.stack([s.gather(data) for s in sets])
    keys = [s.key for s in sets]
    if train:
        means = _set_means(m, stack, mean_estimator)
        new_state = _advance_state(state, sets, means)
    elif mode.kind is NormKind.BATCH:
        # Only batch mode's sets span samples; its statistics must come
        # from the stored running means at inference.
        means = np.stack([state.running_mean[k] for k in keys])
        new_state = state
    else:
        # Sample-local modes recompute their set statistics, matching the
        # training transform exactly and staying batch-independent.
        means = _set_means(m, stack, mean_estimator)
        new_state = state
    out = apply_steps(
        m,
        stack,
        means,
        np.stack([state.scale[k] for k in keys]),
        np.stack([state.bias[k] for k in keys]),
    )
    result = np.empty_like(data)
    for j, s in enumerate(sets):
        s.scatter(result, out[j])
    return FeatureGrid(m, result), new_state


def homog_norm_train(
    batch: FeatureGrid,
    state: NormState,
    mode: NormMode | None = None,
    mean_estimator: str = "incremental",
):
    """Training transform on a homogeneous space; returns (grid, state).

    Per set: estimate the batch mean, advance the shared running mean,
    then center / scale / bias every point.  Purely functional: the
    input state is unchanged.
    """
    if state.algorithm is not Algorithm.HOMOGENEOUS:
        raise ConfigError("state was built for the lie algorithm")
    return _run(batch, state, mode, mean_estimator, True, _apply_homog)


def homog_norm_infer(
    batch: FeatureGrid,
    state: NormState,
    mode: NormMode | None = None,
    mean_estimator: str = "incremental",
) -> FeatureGrid:
    """Inference transform: center batch-mode sets at the stored running
    means; sample-local modes recompute their own statistics."""
    if state.algorithm is not Algorithm.HOMOGENEOUS:
        raise ConfigError("state was built for the lie algorithm")
    grid, _ = _run(batch, state, mode, mean_estimator, False, _apply_homog)
    return grid


def lie_norm_train(
    batch: FeatureGrid,
    state: NormState,
    mode: NormMode | None = None,
    mean_estimator: str = "incremental",
):
    """Training transform on a Lie group; returns (grid, state)."""
    if state.algorithm is not Algorithm.LIE:
        raise ConfigError("state was built for the homogeneous algorithm")
    return _run(batch, state, mode, mean_estimator, True, _apply_lie)


def lie_norm_infer(
    batch: FeatureGrid,
    state: NormState,
    mode: NormMode | None = None,
    mean_estimator: str = "incremental",
) -> FeatureGrid:
    """Inference transform: left-translate batch-mode sets by the inverse
    running means; sample-local modes recompute their own statistics."""
    if state.algorithm is not Algorithm.LIE:
        raise ConfigError("state was built for the homogeneous algorithm")
    grid, _ = _run(batch, state, mode, mean_estimator, False, _apply_lie)
    return grid


# Bias parameterization for gradient-free learning: an unconstrained
# coordinate vector mapped through a surjective-onto-a-neighborhood
# exponential, so every parameter setting is a valid group element.

def _skew_from_flat(k: int, c: np.ndarray) -> np.ndarray:
    iu, ju = np.triu_indices(k, 1)
    w = np.zeros(c.shape[:-1] + (k, k))
    w[..., iu, ju] = c / np.sqrt(2.0)
    w[..., ju, iu] = -c / np.sqrt(2.0)
    return w


def bias_param_dim(manifold: Manifold, algorithm: Algorithm) -> int:
    """Length of the unconstrained coordinate vector for one bias element."""
    if algorithm is Algorithm.LIE:
        return manifold.intrinsic_dim
    if manifold.kind is ManifoldKind.SPD_AFFINE:
        return manifold.n * manifold.n
    k = manifold.group_shape[-1]
    return k * (k - 1) // 2


def bias_from_coords(manifold: Manifold, algorithm: Algorithm, coords: np.ndarray) -> np.ndarray:
    """Map unconstrained coordinates (leading axes free) to group elements."""
    coords = np.asarray(coords, dtype=np.float64)
    if coords.shape[-1] != bias_param_dim(manifold, algorithm):
        raise ConfigError("bias coordinate vector has the wrong length")
    if algorithm is Algorithm.LIE:
        return manifold.algebra_exp(coords)
    if manifold.kind is ManifoldKind.SPD_AFFINE:
        n = manifold.n
        return dense_expm(coords.reshape(coords.shape[:-1] + (n, n)))
    return skew_expm(_skew_from_flat(manifold.group_shape[-1], coords))
