"""Network blocks that consume and produce manifold-valued feature grids.

Three building blocks: a convolution whose response is the weighted
Fréchet mean of each sliding window, a tangent-space ReLU applied in
the fixed orthonormal basis at the origin, and a fully-connected layer
that reads out distances to the mean of its inputs.

Convolution weights live in an unconstrained real tensor and pass
through a normalized-exponential map, so every output channel mixes
its window with strictly positive weights summing to one.  Padding is
"valid" only: there is no zero element to pad with off Euclidean
space.  A window is flattened in row-major (dx, dy, dz, channel)
order; weight rows use the same layout.
"""

from __future__ import annotations

import dataclasses
from typing import Sequence

import numpy as np

from .errors import ConfigError
from .geometry import (
    Manifold,
    ManifoldPoint,
    distance,
    exp_map,
    log_map,
    origin_point,
    tangent_coords,
    coords_to_tangent,
)
from .normalization import FeatureGrid
from .stats import WeightVector, incremental_wfm, oracle_fm, wfm_stack

__all__ = [
    "ConvKernel",
    "convexity_weights",
    "conv_output_dims",
    "manifold_conv",
    "trelu",
    "trelu_grid",
    "manifold_fc",
    "manifold_fc_grid",
]


def convexity_weights(raw: np.ndarray) -> WeightVector:
    """Map an unconstrained vector to convex-combination weights.

    Normalized exponentials with the max subtracted first; adding a
    constant to every entry leaves the result unchanged.
    """
    raw = np.asarray(raw, dtype=np.float64)
    if raw.ndim != 1 or raw.size == 0:
        raise ConfigError("raw weights must be a nonempty vector")
    if not np.all(np.isfinite(raw)):
        raise ConfigError("raw weights must be finite")
    shifted = raw - raw.max()
    e = np.exp(shifted)
    return WeightVector(e / e.sum())


def _softmax_rows(raw: np.ndarray) -> np.ndarray:
    shifted = raw - raw.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


@dataclasses.dataclass(frozen=True)
class ConvKernel:
    """Geometry and weights of one wFM convolution.

    raw_weights has one row per output channel with
    in_channels * w1 * w2 * w3 entries, laid out to match the
    flattened window.
    """

    window: tuple[int, int, int]
    in_channels: int
    out_channels: int
    raw_weights: np.ndarray
    stride: tuple[int, int, int] = (1, 1, 1)

    def __post_init__(self):
        window = tuple(int(w) for w in self.window)
        stride = tuple(int(s) for s in self.stride)
        if len(window) != 3 or any(w < 1 for w in window):
            raise ConfigError("window must be three positive integers")
        if len(stride) != 3 or any(s < 1 for s in stride):
            raise ConfigError("stride must be three positive integers")
        if self.in_channels < 1 or self.out_channels < 1:
            raise ConfigError("channel counts must be positive")
        raw = np.asarray(self.raw_weights, dtype=np.float64)
        if raw.shape != (self.out_channels, self.fan_in):
            raise ConfigError(
                f"raw_weights must have shape ({self.out_channels}, {self.fan_in}),"
                f" got {raw.shape}"
            )
        if not np.all(np.isfinite(raw)):
            raise ConfigError("raw_weights must be finite")
        object.__setattr__(self, "window", window)
        object.__setattr__(self, "stride", stride)
        object.__setattr__(self, "raw_weights", raw)

    @property
    def fan_in(self) -> int:
        w1, w2, w3 = self.window
        return self.in_channels * w1 * w2 * w3

    def weight_matrix(self) -> np.ndarray:
        """Convex weights, one row per output channel."""
        return _softmax_rows(self.raw_weights)


def conv_output_dims(dims: Sequence[int], kernel: ConvKernel) -> tuple[int, int, int]:
    """Spatial output extent for valid padding, or raise if the window
    does not fit."""
    for d, w in zip(dims[:3], kernel.window):
        if w > d:
            raise ConfigError(f"window {kernel.window} exceeds input extent {tuple(dims[:3])}")
    return tuple(
        (d - w) // s + 1 for d, w, s in zip(dims[:3], kernel.window, kernel.stride)
    )


def manifold_conv(grid: FeatureGrid, kernel: ConvKernel) -> FeatureGrid:
    """Slide the kernel over the grid, replacing each window with its
    weighted mean.

    Every output cell is the streaming weighted-mean recursion over the
    window's in_channels * w1 * w2 * w3 points; each output channel has
    its own weight row.
    """
    m = grid.manifold
    dims = grid.dims
    if kernel.in_channels != dims[4]:
        raise ConfigError(
            f"kernel expects {kernel.in_channels} input channels, grid has {dims[4]}"
        )
    out_sp = conv_output_dims(dims, kernel)
    w1, w2, w3 = kernel.window
    s1, s2, s3 = kernel.stride

    view = np.lib.stride_tricks.sliding_window_view(grid.data, (w1, w2, w3), axis=(0, 1, 2))
    view = view[::s1, ::s2, ::s3]
    # (O1, O2, O3, N, C) + point_shape + (w1, w2, w3) after the slice;
    # bring the window axes to the front and the channel in behind them
    # so the flattened order is (dx, dy, dz, channel).
    view = np.moveaxis(view, (-3, -2, -1), (0, 1, 2))
    view = np.moveaxis(view, 7, 3)
    stack = view.reshape((kernel.fan_in,) + out_sp + (dims[3],) + m.point_shape)

    wmat = kernel.weight_matrix()  # (out_channels, fan_in)
    stack = np.broadcast_to(
        np.expand_dims(stack, 5),
        (kernel.fan_in,) + out_sp + (dims[3], kernel.out_channels) + m.point_shape,
    )
    weights = wmat.T.reshape((kernel.fan_in, 1, 1, 1, 1, kernel.out_channels))
    out = wfm_stack(m, stack, weights)
    return FeatureGrid(m, np.ascontiguousarray(out))


def trelu(x: ManifoldPoint) -> ManifoldPoint:
    """Rectify the origin-chart coordinates of a point.

    Log at the origin, clamp negative basis coordinates to zero, Exp
    back.  The result depends on the fixed coordinate basis.
    """
    origin = origin_point(x.manifold)
    c = tangent_coords(log_map(origin, x))
    return exp_map(origin, coords_to_tangent(origin, np.maximum(c, 0.0)))


def trelu_grid(grid: FeatureGrid) -> FeatureGrid:
    """Apply trelu to every cell of a grid."""
    m = grid.manifold
    base = np.broadcast_to(m.origin(), grid.data.shape)
    c = m.coords_from_tangent(m.log(base, grid.data))
    out = m.exp(base, m.tangent_from_coords(np.maximum(c, 0.0)))
    return FeatureGrid(m, out)


def manifold_fc(
    points: Sequence[ManifoldPoint], mean_estimator: str = "incremental"
) -> np.ndarray:
    """Distances from each input to the mean of all inputs."""
    if len(points) == 0:
        raise ConfigError("manifold_fc needs at least one point")
    if mean_estimator == "incremental":
        center = incremental_wfm(list(points))
    elif mean_estimator == "oracle":
        center = oracle_fm(list(points))
    else:
        raise ConfigError(f"unknown mean estimator {mean_estimator!r}")
    return np.array([distance(p, center) for p in points])


def manifold_fc_grid(grid: FeatureGrid, mean_estimator: str = "incremental") -> np.ndarray:
    """Per-sample distance read-out over all cells of a grid.

    Returns an (N, D1*D2*D3*C) array: for each sample, the distances
    from its cells to the mean of those cells.
    """
    m = grid.manifold
    d1, d2, d3, n, c = grid.dims
    pts = np.moveaxis(grid.data, 3, 0)  # (N, D1, D2, D3, C) + ps
    pts = pts.reshape((n, d1 * d2 * d3 * c) + m.point_shape)
    stack = np.moveaxis(pts, 1, 0)
    k = stack.shape[0]
    if mean_estimator == "incremental":
        center = wfm_stack(m, stack, np.full(k, 1.0 / k))
    elif mean_estimator == "oracle":
        from .stats import oracle_fm_stack

        center = np.stack([oracle_fm_stack(m, pts[i]) for i in range(n)])
    else:
        raise ConfigError(f"unknown mean estimator {mean_estimator!r}")
    return m.dist(center[:, None], pts)
