"""Training loop, evaluation, and experiment orchestration.

Manifold-facing parameters are trained gradient-free: each step draws
one Rademacher direction, probes the loss at theta +- c_k * delta with
batch-statistics forwards whose running-mean updates are discarded,
and moves along the estimated gradient.  The affine head then takes
exact gradient steps on the features produced by the forward that does
update the running means.  Three forwards per batch, total.

Step sizes follow a_k = a / (k + 1 + A)^0.602 and
c_k = c / (k + 1)^0.101.
"""

from __future__ import annotations

import dataclasses
import os
import time

import numpy as np

from .config import ExperimentConfig, config_hash
from .data import generate_synthetic, split_dataset
from .errors import ConfigError, NumericalError
from .model import Model, feature_stats, forward, init_model
from .normalization import FeatureGrid

__all__ = [
    "Report",
    "softmax_cross_entropy",
    "accuracy_of",
    "train_model",
    "evaluate",
    "run_experiment",
    "RESULTS_HEADER",
]

RESULTS_HEADER = "variant\tparams\ttime_per_epoch\ttest_accuracy"


@dataclasses.dataclass(frozen=True)
class Report:
    """Run summary.  Wall time is informational and excluded from the
    determinism fingerprint."""

    variant: str
    config_hash: str
    seed: int
    param_count: int
    epochs: int
    accuracy: float
    loss_curve: tuple[float, ...]
    wall_per_epoch: float

    def fingerprint(self) -> str:
        curve = ",".join(repr(v) for v in self.loss_curve)
        return (
            f"variant={self.variant};hash={self.config_hash};seed={self.seed};"
            f"params={self.param_count};epochs={self.epochs};"
            f"accuracy={self.accuracy!r};loss_curve={curve}"
        )

    def to_text(self) -> str:
        lines = [
            f"variant = {self.variant}",
            f"config_hash = {self.config_hash}",
            f"seed = {self.seed}",
            f"param_count = {self.param_count}",
            f"epochs = {self.epochs}",
            f"accuracy = {self.accuracy!r}",
            f"loss_curve = {','.join(repr(v) for v in self.loss_curve)}",
            f"wall_per_epoch = {self.wall_per_epoch:.3f}",
        ]
        return "\n".join(lines) + "\n"


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray):
    """Mean cross-entropy and the softmax probabilities."""
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    probs = e / e.sum(axis=1, keepdims=True)
    picked = probs[np.arange(labels.size), labels]
    loss = float(-np.log(np.maximum(picked, 1e-300)).mean())
    return loss, probs


def accuracy_of(logits: np.ndarray, labels: np.ndarray) -> float:
    return float((logits.argmax(axis=1) == labels).mean())


def _slice_samples(grid: FeatureGrid, idx: np.ndarray) -> FeatureGrid:
    return FeatureGrid(grid.manifold, grid.data[:, :, :, idx])


def _loss_at(model: Model, theta: np.ndarray, batch: FeatureGrid, labels: np.ndarray) -> float:
    logits, _, _ = forward(model, batch, train_mode=True, theta=theta)
    loss, _ = softmax_cross_entropy(logits, labels)
    return loss


def _check_finite(loss: float, where: str) -> None:
    if not np.isfinite(loss):
        raise NumericalError(f"training diverged: non-finite loss during {where}")


def _fit_head(z, onehot, w, b, lr: float, steps: int, decay: float = 0.01):
    """Ridge-regularised gradient descent on the softmax head.

    ``z`` holds standardised features; the caller owns the statistics."""
    n = z.shape[0]
    labels = onehot.argmax(axis=1)
    loss, probs = softmax_cross_entropy(z @ w + b, labels)
    for _ in range(steps):
        resid = probs - onehot
        w = w - lr * ((z.T @ resid) / n + decay * w)
        b = b - lr * resid.mean(axis=0)
        loss, probs = softmax_cross_entropy(z @ w + b, labels)
    return w, b, loss


def _blend(old: np.ndarray, new: np.ndarray, t: float) -> np.ndarray:
    """Euclidean running-statistic update with exact endpoints."""
    if t <= 0.0:
        return old.copy()
    if t >= 1.0:
        return new.copy()
    return (1.0 - t) * old + t * new


def train_model(cfg: ExperimentConfig, train_grid: FeatureGrid, train_labels: np.ndarray):
    """Returns (model, Report); the Report's accuracy is the frozen-state
    training accuracy."""
    labels = np.asarray(train_labels)
    n = labels.size
    if n == 0 or train_grid.dims[3] != n:
        raise ConfigError("training set is empty or labels do not match samples")
    rng = np.random.default_rng(cfg.seed)
    model = init_model(cfg, rng)

    onehot = np.eye(cfg.classes)[labels]
    loss_curve: list[float] = []
    epoch_seconds: list[float] = []
    step = 0
    for _ in range(cfg.epochs):
        tic = time.perf_counter()
        perm = rng.permutation(n)
        epoch_losses = []
        for start in range(0, n, cfg.batch_size):
            idx = perm[start : start + cfg.batch_size]
            batch = _slice_samples(train_grid, idx)
            y, y1h = labels[idx], onehot[idx]

            a_k = cfg.spsa_a / (step + 1 + cfg.spsa_stability) ** 0.602
            c_k = cfg.spsa_c / (step + 1) ** 0.101
            delta = rng.integers(0, 2, size=model.theta.size) * 2.0 - 1.0
            loss_plus = _loss_at(model, model.theta + c_k * delta, batch, y)
            loss_minus = _loss_at(model, model.theta - c_k * delta, batch, y)
            _check_finite(loss_plus, "a perturbation probe")
            _check_finite(loss_minus, "a perturbation probe")
            grad = (loss_plus - loss_minus) / (2.0 * c_k) * delta
            # Bounded steps keep exp-parameterized scales from overflowing.
            step_vec = np.clip(a_k * grad, -cfg.spsa_clip, cfg.spsa_clip)
            theta = model.theta - step_vec

            model = dataclasses.replace(model, theta=theta)
            _, features, new_states = forward(model, batch, train_mode=True)
            mu_b, sd_b = feature_stats(features)
            z = (features - mu_b) / sd_b
            w, b, loss = _fit_head(
                z, y1h, model.head_w, model.head_b, cfg.head_lr, cfg.head_steps
            )
            _check_finite(loss, "the head update")
            t = cfg.momentum
            if t is None:
                t = 1.0 / (model.head_updates + 1)
            model = dataclasses.replace(
                model,
                head_w=w,
                head_b=b,
                head_mu=_blend(model.head_mu, mu_b, t),
                head_sd=_blend(model.head_sd, sd_b, t),
                head_updates=model.head_updates + 1,
                norm_states=new_states,
            )
            epoch_losses.append(loss)
            step += 1
        loss_curve.append(float(np.mean(epoch_losses)))
        epoch_seconds.append(time.perf_counter() - tic)

    model = _calibrate_statistics(model, train_grid)
    logits, _, _ = forward(model, train_grid, train_mode=False)
    report = Report(
        variant=cfg.variant_name(),
        config_hash=config_hash(cfg),
        seed=cfg.seed,
        param_count=model.param_count,
        epochs=cfg.epochs,
        accuracy=accuracy_of(logits, labels),
        loss_curve=tuple(loss_curve),
        wall_per_epoch=float(np.mean(epoch_seconds)) if epoch_seconds else 0.0,
    )
    return model, report


def _calibrate_statistics(model: Model, train_grid: FeatureGrid) -> Model:
    """Replace the running statistics with exact full-train values.

    Exponential averages lag while the parameters drift, so the stored
    statistics are refreshed once for the final parameters before they are
    frozen for evaluation."""
    if model.head_updates == 0:
        return model
    # Counting schedule from zero pools every set seen in the pass; batch
    # mode has one set per key, so this is an exact replacement there.
    pinned = tuple(
        dataclasses.replace(st, momentum=None, updates=np.zeros_like(st.updates))
        for st in model.norm_states
    )
    staged = dataclasses.replace(model, norm_states=pinned)
    _, features, advanced = forward(staged, train_grid, train_mode=True)
    mu, sd = feature_stats(features)
    restored = tuple(
        dataclasses.replace(st, momentum=old.momentum)
        for st, old in zip(advanced, model.norm_states)
    )
    return dataclasses.replace(
        model, head_mu=mu, head_sd=sd, norm_states=restored
    )


def _state_digest(states) -> tuple:
    out = []
    for st in states:
        out.append(
            (st.running_mean.tobytes(), st.updates.tobytes(), st.steps_seen)
        )
    return tuple(out)


def evaluate(model: Model, grid: FeatureGrid, labels: np.ndarray) -> Report:
    """Frozen-state evaluation over all samples; never touches state."""
    labels = np.asarray(labels)
    if grid.dims[3] != labels.size:
        raise ConfigError("labels do not match the sample count")
    before = _state_digest(model.norm_states)
    logits, _, _ = forward(model, grid, train_mode=False)
    if _state_digest(model.norm_states) != before:
        raise NumericalError("evaluation mutated normalization state")
    loss, _ = softmax_cross_entropy(logits, labels)
    return Report(
        variant=model.config.variant_name(),
        config_hash=config_hash(model.config),
        seed=model.config.seed,
        param_count=model.param_count,
        epochs=model.config.epochs,
        accuracy=accuracy_of(logits, labels),
        loss_curve=(loss,),
        wall_per_epoch=0.0,
    )


def _append_results_row(path, report: Report) -> None:
    fresh = not os.path.exists(path)
    with open(path, "a", encoding="utf-8") as fh:
        if fresh:
            fh.write(RESULTS_HEADER + "\n")
        fh.write(
            f"{report.variant}\t{report.param_count}\t"
            f"{report.wall_per_epoch:.3f}\t{report.accuracy!r}\n"
        )


def run_experiment(
    cfg: ExperimentConfig,
    out_dir,
    dataset=None,
    results_path=None,
):
    """generate -> train -> evaluate -> write report.txt and a results row.

    dataset, when given, is a (FeatureGrid, labels) pair to reuse; it
    must match the config's sample counts.  Returns (model, train
    report, test report).
    """
    if dataset is None:
        dataset = generate_synthetic(cfg, cfg.seed)
    grid, labels = dataset
    train_grid, train_y, test_grid, test_y = split_dataset(grid, labels, cfg)
    model, train_report = train_model(cfg, train_grid, train_y)
    test_report = evaluate(model, test_grid, test_y)
    test_report = dataclasses.replace(
        test_report, wall_per_epoch=train_report.wall_per_epoch
    )

    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "report.txt"), "w", encoding="utf-8") as fh:
        fh.write(train_report.to_text())
        fh.write(f"test_accuracy = {test_report.accuracy!r}\n")
        fh.write(f"test_loss = {test_report.loss_curve[0]!r}\n")
    if results_path is None:
        results_path = os.path.join(out_dir, "results.tsv")
    _append_results_row(results_path, test_report)
    return model, train_report, test_report
