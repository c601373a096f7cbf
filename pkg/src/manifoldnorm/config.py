"""Experiment configuration: flat key-value text, typed access, hashing.

A config file is UTF-8 text with one `key = value` pair per line;
blank lines and `#` comments are ignored.  Every key has a documented
default, unknown keys are rejected, and the canonical serialization
(sorted keys, normalized values) is what gets hashed, so two configs
with the same settings always share a hash.
"""

from __future__ import annotations

import dataclasses
import hashlib

from .errors import ConfigError
from .geometry import Manifold, ManifoldKind, is_lie_group, make_manifold
from .normalization import Algorithm, NormKind, NormMode

__all__ = [
    "LayerSpec",
    "ExperimentConfig",
    "parse_config",
    "format_config",
    "load_config",
    "config_hash",
    "DEFAULTS",
]

# One string per key; everything is parsed from and rendered to text.
DEFAULTS = {
    "manifold": "spd_affine",
    "n": "3",
    "norm": "batch",
    "group_size": "2",
    "algorithm": "homogeneous",
    "arch": "conv:2x2x1:s:2x2x1:c:4, trelu, norm, conv:1x1x1:s:1x1x1:c:4, fc",
    "classes": "2",
    "train_per_class": "100",
    "test_per_class": "50",
    "dims": "4x4x1",
    "channels": "4",
    "separation": "2.0",
    "dispersion": "0.3",
    "epochs": "12",
    "batch_size": "50",
    "spsa_a": "0.4",
    "spsa_c": "0.2",
    "spsa_stability": "10.0",
    "spsa_clip": "0.5",
    "head_lr": "0.5",
    "head_steps": "20",
    "momentum": "0.1",
    "mean_estimator": "incremental",
    "fm_tol": "1e-9",
    "seed": "0",
}

_NORM_NAMES = {
    "none": None,
    "batch": NormKind.BATCH,
    "layer": NormKind.LAYER,
    "instance": NormKind.INSTANCE,
    "group": NormKind.GROUP,
}


@dataclasses.dataclass(frozen=True)
class LayerSpec:
    """One entry of the architecture list."""

    kind: str  # conv | trelu | norm | fc
    window: tuple[int, int, int] | None = None
    stride: tuple[int, int, int] | None = None
    channels: int | None = None


@dataclasses.dataclass(frozen=True)
class ExperimentConfig:
    manifold_kind: ManifoldKind
    n: int
    norm: NormKind | None
    group_size: int
    algorithm: Algorithm
    layers: tuple[LayerSpec, ...]
    classes: int
    train_per_class: int
    test_per_class: int
    dims: tuple[int, int, int]
    channels: int
    separation: float
    dispersion: float
    epochs: int
    batch_size: int
    spsa_a: float
    spsa_c: float
    spsa_stability: float
    spsa_clip: float
    head_lr: float
    head_steps: int
    momentum: float | None
    mean_estimator: str
    fm_tol: float
    seed: int

    def manifold(self) -> Manifold:
        return make_manifold(self.manifold_kind, self.n)

    def norm_mode(self) -> NormMode | None:
        if self.norm is None:
            return None
        if self.norm is NormKind.GROUP:
            return NormMode(self.norm, self.group_size)
        return NormMode(self.norm)

    def variant_name(self) -> str:
        if self.norm is None:
            return "none"
        if self.norm is NormKind.GROUP:
            return f"group{self.group_size}"
        return self.norm.value


def _triple(text: str, what: str) -> tuple[int, int, int]:
    parts = text.split("x")
    if len(parts) != 3:
        raise ConfigError(f"{what} must look like AxBxC, got {text!r}")
    try:
        vals = tuple(int(p) for p in parts)
    except ValueError as exc:
        raise ConfigError(f"{what} must be integers, got {text!r}") from exc
    if any(v < 1 for v in vals):
        raise ConfigError(f"{what} entries must be positive, got {text!r}")
    return vals


def _parse_layer(token: str) -> LayerSpec:
    parts = [p.strip() for p in token.split(":")]
    kind = parts[0]
    if kind in ("trelu", "norm", "fc"):
        if len(parts) != 1:
            raise ConfigError(f"layer {kind!r} takes no arguments")
        return LayerSpec(kind)
    if kind != "conv":
        raise ConfigError(f"unknown layer kind {kind!r}")
    if len(parts) != 6 or parts[2] != "s" or parts[4] != "c":
        raise ConfigError(
            f"conv layer must look like conv:W1xW2xW3:s:S1xS2xS3:c:K, got {token!r}"
        )
    window = _triple(parts[1], "conv window")
    stride = _triple(parts[3], "conv stride")
    try:
        channels = int(parts[5])
    except ValueError as exc:
        raise ConfigError(f"conv channel count must be an integer, got {parts[5]!r}") from exc
    if channels < 1:
        raise ConfigError("conv channel count must be positive")
    return LayerSpec("conv", window, stride, channels)


def _parse_arch(text: str) -> tuple[LayerSpec, ...]:
    tokens = [t.strip() for t in text.split(",") if t.strip()]
    if not tokens:
        raise ConfigError("architecture must list at least one layer")
    layers = tuple(_parse_layer(t) for t in tokens)
    if sum(1 for s in layers if s.kind == "fc") != 1 or layers[-1].kind != "fc":
        raise ConfigError("architecture must end with exactly one fc layer")
    return layers


def _format_layer(spec: LayerSpec) -> str:
    if spec.kind != "conv":
        return spec.kind
    w = "x".join(str(v) for v in spec.window)
    s = "x".join(str(v) for v in spec.stride)
    return f"conv:{w}:s:{s}:c:{spec.channels}"


def _read_pairs(text: str) -> dict[str, str]:
    pairs = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key or not value:
            raise ConfigError(f"line {lineno}: empty key or value")
        if key in pairs:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        pairs[key] = value
    return pairs


def _get_int(pairs, key, minimum=None):
    try:
        value = int(pairs[key])
    except ValueError as exc:
        raise ConfigError(f"{key} must be an integer, got {pairs[key]!r}") from exc
    if minimum is not None and value < minimum:
        raise ConfigError(f"{key} must be >= {minimum}, got {value}")
    return value


def _get_float(pairs, key, positive=False):
    try:
        value = float(pairs[key])
    except ValueError as exc:
        raise ConfigError(f"{key} must be a number, got {pairs[key]!r}") from exc
    if positive and not value > 0:
        raise ConfigError(f"{key} must be positive, got {value}")
    return value


def parse_config(text: str, overrides: dict[str, str] | None = None) -> ExperimentConfig:
    """Parse config text on top of the defaults; overrides win over both."""
    pairs = dict(DEFAULTS)
    given = _read_pairs(text)
    unknown = sorted(set(given) - set(DEFAULTS))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    pairs.update(given)
    if overrides:
        bad = sorted(set(overrides) - set(DEFAULTS))
        if bad:
            raise ConfigError(f"unknown config keys: {', '.join(bad)}")
        pairs.update(overrides)

    try:
        kind = ManifoldKind(pairs["manifold"])
    except ValueError as exc:
        raise ConfigError(f"unknown manifold {pairs['manifold']!r}") from exc
    if pairs["norm"] not in _NORM_NAMES:
        raise ConfigError(f"unknown norm mode {pairs['norm']!r}")
    norm = _NORM_NAMES[pairs["norm"]]
    try:
        algorithm = Algorithm(pairs["algorithm"])
    except ValueError as exc:
        raise ConfigError(f"unknown algorithm {pairs['algorithm']!r}") from exc
    momentum: float | None
    if pairs["momentum"] == "none":
        momentum = None
    else:
        momentum = _get_float(pairs, "momentum")
        if not 0.0 <= momentum <= 1.0:
            raise ConfigError(f"momentum must be in [0, 1], got {momentum}")
    if pairs["mean_estimator"] not in ("incremental", "oracle"):
        raise ConfigError(f"unknown mean estimator {pairs['mean_estimator']!r}")

    cfg = ExperimentConfig(
        manifold_kind=kind,
        n=_get_int(pairs, "n", minimum=1),
        norm=norm,
        group_size=_get_int(pairs, "group_size", minimum=1),
        algorithm=algorithm,
        layers=_parse_arch(pairs["arch"]),
        classes=_get_int(pairs, "classes", minimum=2),
        train_per_class=_get_int(pairs, "train_per_class", minimum=1),
        test_per_class=_get_int(pairs, "test_per_class", minimum=0),
        dims=_triple(pairs["dims"], "dims"),
        channels=_get_int(pairs, "channels", minimum=1),
        separation=_get_float(pairs, "separation", positive=True),
        dispersion=_get_float(pairs, "dispersion", positive=True),
        epochs=_get_int(pairs, "epochs", minimum=0),
        batch_size=_get_int(pairs, "batch_size", minimum=1),
        spsa_a=_get_float(pairs, "spsa_a", positive=True),
        spsa_c=_get_float(pairs, "spsa_c", positive=True),
        spsa_stability=_get_float(pairs, "spsa_stability"),
        spsa_clip=_get_float(pairs, "spsa_clip", positive=True),
        head_lr=_get_float(pairs, "head_lr", positive=True),
        head_steps=_get_int(pairs, "head_steps", minimum=0),
        momentum=momentum,
        mean_estimator=pairs["mean_estimator"],
        fm_tol=_get_float(pairs, "fm_tol", positive=True),
        seed=_get_int(pairs, "seed"),
    )
    _validate(cfg)
    return cfg


def _validate(cfg: ExperimentConfig) -> None:
    manifold = cfg.manifold()  # raises ConfigError/GeometryError on bad n
    if cfg.algorithm is Algorithm.LIE and not is_lie_group(manifold):
        raise ConfigError(
            f"the lie algorithm needs a Lie-group manifold, not {manifold!r}"
        )
    mode = cfg.norm_mode()
    if mode is not None:
        # Channel counts at each norm layer must split into groups.
        for channels in _norm_channel_counts(cfg):
            mode.num_keys(channels)


def _norm_channel_counts(cfg: ExperimentConfig):
    channels = cfg.channels
    for spec in cfg.layers:
        if spec.kind == "conv":
            channels = spec.channels
        elif spec.kind == "norm":
            yield channels


def format_config(cfg: ExperimentConfig) -> str:
    """Canonical text form: sorted keys, normalized values."""
    pairs = {
        "manifold": cfg.manifold_kind.value,
        "n": str(cfg.n),
        "norm": "none" if cfg.norm is None else cfg.norm.value,
        "group_size": str(cfg.group_size),
        "algorithm": cfg.algorithm.value,
        "arch": ", ".join(_format_layer(s) for s in cfg.layers),
        "classes": str(cfg.classes),
        "train_per_class": str(cfg.train_per_class),
        "test_per_class": str(cfg.test_per_class),
        "dims": "x".join(str(v) for v in cfg.dims),
        "channels": str(cfg.channels),
        "separation": repr(cfg.separation),
        "dispersion": repr(cfg.dispersion),
        "epochs": str(cfg.epochs),
        "batch_size": str(cfg.batch_size),
        "spsa_a": repr(cfg.spsa_a),
        "spsa_c": repr(cfg.spsa_c),
        "spsa_stability": repr(cfg.spsa_stability),
        "spsa_clip": repr(cfg.spsa_clip),
        "head_lr": repr(cfg.head_lr),
        "head_steps": str(cfg.head_steps),
        "momentum": "none" if cfg.momentum is None else repr(cfg.momentum),
        "mean_estimator": cfg.mean_estimator,
        "fm_tol": repr(cfg.fm_tol),
        "seed": str(cfg.seed),
    }
    return "".join(f"{k} = {pairs[k]}\n" for k in sorted(pairs))


def load_config(path, overrides: dict[str, str] | None = None) -> ExperimentConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config(fh.read(), overrides)


def config_hash(cfg: ExperimentConfig) -> str:
    return hashlib.sha256(format_config(cfg).encode("utf-8")).hexdigest()[:16]
