"""The grid classifier and its flat parameter vector.

The network walks the configured layer list: wFM convolutions, the
tangent rectifier, optional normalization, then the distance read-out
feeding an affine head.  Every manifold-facing parameter (raw conv
weights, bias coordinates, log scales) lives in one flat vector so
the gradient-free optimizer can perturb all of them at once; the head
is kept separate because it is trained with exact gradients.
"""

from __future__ import annotations

import dataclasses

import numpy as np

from .config import ExperimentConfig, LayerSpec
from .errors import ConfigError
from .layers import ConvKernel, conv_output_dims, manifold_conv, manifold_fc_grid, trelu_grid
from .normalization import (
    Algorithm,
    FeatureGrid,
    NormState,
    bias_from_coords,
    bias_param_dim,
    homog_norm_infer,
    homog_norm_train,
    lie_norm_infer,
    lie_norm_train,
)

__all__ = [
    "Segment",
    "ModelPlan",
    "Model",
    "build_plan",
    "init_model",
    "forward",
    "save_model",
    "load_model",
]


@dataclasses.dataclass(frozen=True)
class Segment:
    """One slice of the flat parameter vector."""

    name: str  # conv | norm_bias | norm_scale
    layer: int  # index into config.layers
    offset: int
    shape: tuple[int, ...]

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))


@dataclasses.dataclass(frozen=True)
class ModelPlan:
    """Static shape information derived from a config."""

    segments: tuple[Segment, ...]
    theta_size: int
    feature_dim: int
    norm_layers: tuple[int, ...]  # layer indices carrying norm state
    norm_channels: tuple[int, ...]


def build_plan(cfg: ExperimentConfig) -> ModelPlan:
    m = cfg.manifold()
    d1, d2, d3 = cfg.dims
    channels = cfg.channels
    segments: list[Segment] = []
    norm_layers: list[int] = []
    norm_channels: list[int] = []
    offset = 0
    feature_dim = 0

    def add(name, layer, shape):
        nonlocal offset
        seg = Segment(name, layer, offset, shape)
        segments.append(seg)
        offset += seg.size
        return seg

    for li, spec in enumerate(cfg.layers):
        if spec.kind == "conv":
            fan = channels * spec.window[0] * spec.window[1] * spec.window[2]
            add("conv", li, (spec.channels, fan))
            kernel = ConvKernel(spec.window, channels, spec.channels, np.zeros((spec.channels, fan)), spec.stride)
            d1, d2, d3 = conv_output_dims((d1, d2, d3), kernel)
            channels = spec.channels
        elif spec.kind == "norm":
            if cfg.norm is None:
                continue
            mode = cfg.norm_mode()
            keys = mode.num_keys(channels)
            add("norm_bias", li, (keys, bias_param_dim(m, cfg.algorithm)))
            scale_dim = m.intrinsic_dim if cfg.algorithm is Algorithm.HOMOGENEOUS else 1
            add("norm_scale", li, (keys, scale_dim))
            norm_layers.append(li)
            norm_channels.append(channels)
        elif spec.kind == "fc":
            feature_dim = d1 * d2 * d3 * channels
        elif spec.kind != "trelu":
            raise ConfigError(f"unknown layer kind {spec.kind!r}")
    return ModelPlan(tuple(segments), offset, feature_dim, tuple(norm_layers), tuple(norm_channels))


@dataclasses.dataclass(frozen=True)
class Model:
    """Flat parameter vector plus the Euclidean head and frozen statistics.

    ``head_mu``/``head_sd`` are running feature statistics: the head takes
    standardised features, with batch statistics during training and the
    stored ones at inference, mirroring how the norm layers treat their
    running means.
    """

    config: ExperimentConfig
    plan: ModelPlan
    theta: np.ndarray
    head_w: np.ndarray
    head_b: np.ndarray
    head_mu: np.ndarray
    head_sd: np.ndarray
    head_updates: int
    norm_states: tuple[NormState, ...]

    @property
    def param_count(self) -> int:
        return self.theta.size + self.head_w.size + self.head_b.size

    def segment(self, name: str, layer: int, theta: np.ndarray | None = None) -> np.ndarray:
        theta = self.theta if theta is None else theta
        for seg in self.plan.segments:
            if seg.name == name and seg.layer == layer:
                return theta[seg.offset : seg.offset + seg.size].reshape(seg.shape)
        raise KeyError(f"no segment {name!r} for layer {layer}")


_CONV_INIT_SPREAD = 2.0


def init_model(cfg: ExperimentConfig, rng: np.random.Generator | None = None) -> Model:
    """Fresh model: random convex-weight logits, identity norm params,
    zero head."""
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    plan = build_plan(cfg)
    theta = np.zeros(plan.theta_size)
    for seg in plan.segments:
        if seg.name == "conv":
            theta[seg.offset : seg.offset + seg.size] = _CONV_INIT_SPREAD * rng.standard_normal(seg.size)
    states = []
    if cfg.norm is not None:
        m = cfg.manifold()
        mode = cfg.norm_mode()
        for channels in plan.norm_channels:
            states.append(
                NormState.fresh(m, cfg.algorithm, mode, channels, momentum=cfg.momentum)
            )
    head_w = np.zeros((plan.feature_dim, cfg.classes))
    head_b = np.zeros(cfg.classes)
    head_mu = np.zeros(plan.feature_dim)
    head_sd = np.ones(plan.feature_dim)
    return Model(cfg, plan, theta, head_w, head_b, head_mu, head_sd, 0, tuple(states))


def feature_stats(features: np.ndarray):
    """Per-feature mean and spread for head standardisation.

    The spread floor is relative: a feature whose variation collapses must
    stay small after standardisation rather than being amplified without
    bound."""
    mu = features.mean(axis=0)
    sd = features.std(axis=0)
    sd = np.maximum(sd, 0.05 * sd.max() + 1e-12)
    return mu, sd


def _materialized_state(model: Model, ni: int, theta: np.ndarray) -> NormState:
    m = model.config.manifold()
    li = model.plan.norm_layers[ni]
    coords = model.segment("norm_bias", li, theta)
    log_scale = model.segment("norm_scale", li, theta)
    bias = bias_from_coords(m, model.config.algorithm, coords)
    scale = np.exp(log_scale)
    if model.config.algorithm is Algorithm.LIE:
        scale = scale[:, 0]
    return model.norm_states[ni].with_params(bias=bias, scale=scale)


def forward(
    model: Model,
    grid: FeatureGrid,
    train_mode: bool,
    theta: np.ndarray | None = None,
):
    """Run the network; returns (logits, features, new_norm_states).

    In training mode, normalization centers on batch statistics and the
    returned states carry advanced running means; the model itself is
    never mutated.  In inference mode the stored running means are used
    and returned unchanged.
    """
    cfg = model.config
    if grid.manifold != cfg.manifold():
        raise ConfigError("grid manifold does not match the model config")
    if grid.dims[:3] != cfg.dims or grid.dims[4] != cfg.channels:
        raise ConfigError(
            f"grid dims {grid.dims} do not match config"
            f" {cfg.dims + ('N', cfg.channels)}"
        )
    theta = model.theta if theta is None else theta
    is_lie = cfg.algorithm is Algorithm.LIE
    new_states = list(model.norm_states)
    ni = 0
    features = None
    for li, spec in enumerate(cfg.layers):
        if spec.kind == "conv":
            raw = model.segment("conv", li, theta)
            in_ch = grid.dims[4]
            kernel = ConvKernel(spec.window, in_ch, spec.channels, raw, spec.stride)
            grid = manifold_conv(grid, kernel)
        elif spec.kind == "trelu":
            grid = trelu_grid(grid)
        elif spec.kind == "norm":
            if cfg.norm is None:
                continue
            state = _materialized_state(model, ni, theta)
            if train_mode:
                train_fn = lie_norm_train if is_lie else homog_norm_train
                grid, advanced = train_fn(grid, state, mean_estimator=cfg.mean_estimator)
                new_states[ni] = advanced
            else:
                infer_fn = lie_norm_infer if is_lie else homog_norm_infer
                grid = infer_fn(grid, state, mean_estimator=cfg.mean_estimator)
            ni += 1
        elif spec.kind == "fc":
            features = manifold_fc_grid(grid)
    if train_mode:
        mu, sd = feature_stats(features)
    else:
        mu, sd = model.head_mu, np.maximum(model.head_sd, 1e-12)
    logits = (features - mu) / sd @ model.head_w + model.head_b
    return logits, features, tuple(new_states)


def save_model(model: Model, dir_path) -> None:
    """Persist a model as config text plus one array archive."""
    import os

    from .config import format_config

    os.makedirs(dir_path, exist_ok=True)
    with open(os.path.join(dir_path, "config.txt"), "w", encoding="utf-8") as fh:
        fh.write(format_config(model.config))
    arrays = {
        "theta": model.theta,
        "head_w": model.head_w,
        "head_b": model.head_b,
        "head_mu": model.head_mu,
        "head_sd": model.head_sd,
        "head_updates": np.array(model.head_updates, dtype=np.int64),
    }
    for i, st in enumerate(model.norm_states):
        arrays[f"running_mean_{i}"] = st.running_mean
        arrays[f"updates_{i}"] = st.updates
        arrays[f"steps_seen_{i}"] = np.array(st.steps_seen, dtype=np.int64)
    np.savez(os.path.join(dir_path, "params.npz"), **arrays)


def load_model(dir_path) -> Model:
    import os

    from .config import load_config

    cfg = load_config(os.path.join(dir_path, "config.txt"))
    base = init_model(cfg)
    with np.load(os.path.join(dir_path, "params.npz")) as arch:
        theta = arch["theta"]
        head_w = arch["head_w"]
        head_b = arch["head_b"]
        head_mu = arch["head_mu"]
        head_sd = arch["head_sd"]
        head_updates = int(arch["head_updates"])
        states = []
        for i, st in enumerate(base.norm_states):
            states.append(
                dataclasses.replace(
                    st,
                    running_mean=arch[f"running_mean_{i}"],
                    updates=arch[f"updates_{i}"],
                    steps_seen=int(arch[f"steps_seen_{i}"]),
                )
            )
    if theta.shape != base.theta.shape or head_w.shape != base.head_w.shape:
        raise ConfigError("stored parameters do not match the stored config")
    return dataclasses.replace(
        base,
        theta=theta,
        head_w=head_w,
        head_b=head_b,
        head_mu=head_mu,
        head_sd=head_sd,
        head_updates=head_updates,
        norm_states=tuple(states),
    )
