"""Losses, Nesterov momentum with linear decay, and the mask-training loops.

Two regimes share the machinery: full mask training backpropagates
through the delay recurrence, while output-only retraining fits the
affine readout on frozen features (no recurrence in the loop).
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field

import numpy as np

from .bptt import Gradients, backward_batch
from .core import ConfigError, MaskSet, SystemParams, rng_streams
from .data import ImageDataset, SequenceDataset, batch_sampler
from .fast_model import TraceError, forward_batch
from .masking import save_masks, wrap

__all__ = [
    "TrainingError",
    "TrainSpec",
    "OptimizerState",
    "cross_entropy",
    "nesterov_step",
    "shift_augment",
    "init_masks",
    "train_masks",
    "retrain_output",
    "readout",
    "error_rate",
    "image_features",
    "sequence_features",
]


class TrainingError(RuntimeError):
    """Optimization diverged or was fed inconsistent inputs."""


def cross_entropy(logits, targets):
    """Softmax negative log-likelihood, averaged over all leading axes.

    Returns (loss, adjoint); the adjoint is (softmax - onehot) / n_rows,
    exactly the gradient of the mean loss in the logits. Stabilized by
    max-subtraction.
    """
    logits = np.asarray(logits, dtype=np.float64)
    if not np.all(np.isfinite(logits)):
        raise TrainingError("non-finite logits")
    n_out = logits.shape[-1]
    flat = logits.reshape(-1, n_out)
    flat_targets = np.broadcast_to(np.asarray(targets, dtype=np.intp),
                                   logits.shape[:-1]).reshape(-1)
    n = flat.shape[0]
    if n and (flat_targets.min() < 0 or flat_targets.max() >= n_out):
        raise ConfigError(f"target class outside [0, {n_out})")
    shifted = flat - flat.max(axis=1, keepdims=True)
    logp = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    rows = np.arange(n)
    loss = -logp[rows, flat_targets].mean()
    adjoint = np.exp(logp)
    adjoint[rows, flat_targets] -= 1.0
    adjoint /= n
    return loss, adjoint.reshape(logits.shape)


@dataclass(frozen=True)
class TrainSpec:
    """What to train and how long."""

    iterations: int
    batch_size: int
    learning_rate: float
    momentum: float = 0.9
    trainable: str = "all"  # or "output"
    loss: str = "cross_entropy"
    augment: bool = False
    repeats: int = 1  # periods per image in static encoding
    seed: int = 0
    log_every: int = 100
    checkpoint_every: int = 0  # 0 writes only final.bin

    def __post_init__(self):
        if self.trainable not in ("all", "output"):
            raise ConfigError(f"trainable must be 'all' or 'output', got {self.trainable!r}")
        if self.loss != "cross_entropy":
            raise ConfigError(f"unsupported loss {self.loss!r}")
        if self.iterations < 0 or self.batch_size < 1 or self.repeats < 1:
            raise ConfigError("iterations must be >= 0, batch_size and repeats >= 1")
        if not self.learning_rate > 0:
            raise ConfigError(f"learning_rate must be positive, got {self.learning_rate}")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError(f"momentum must lie in [0, 1), got {self.momentum}")


@dataclass
class OptimizerState:
    """Velocity buffers plus the linearly decaying learning-rate schedule.

    total_iterations > 0 decays the rate to exactly zero at the final
    step; total_iterations == 0 keeps it constant.
    """

    base_lr: float
    total_iterations: int
    momentum: float = 0.9
    output_only: bool = False
    iteration: int = 0
    v_m0: np.ndarray = field(default=None, repr=False)
    v_M: np.ndarray = field(default=None, repr=False)
    v_U: np.ndarray = field(default=None, repr=False)
    v_y0: np.ndarray = field(default=None, repr=False)

    @classmethod
    def for_masks(cls, masks: MaskSet, base_lr: float, total_iterations: int,
                  momentum: float = 0.9, output_only: bool = False) -> "OptimizerState":
        return cls(base_lr=base_lr, total_iterations=total_iterations,
                   momentum=momentum, output_only=output_only,
                   v_m0=np.zeros_like(masks.m0), v_M=np.zeros_like(masks.M),
                   v_U=np.zeros_like(masks.U), v_y0=np.zeros_like(masks.y0))

    def learning_rate(self, iteration: int | None = None) -> float:
        i = self.iteration + 1 if iteration is None else iteration
        if self.total_iterations <= 0:
            return self.base_lr
        return self.base_lr * max(0.0, 1.0 - i / self.total_iterations)

    def lookahead(self, masks: MaskSet) -> MaskSet:
        """Evaluation point theta + mu*v for the upcoming gradient."""
        mu = self.momentum
        if self.output_only:
            # frozen arrays pass through untouched, keeping them bit-identical
            return masks.replace(U=masks.U + mu * self.v_U,
                                 y0=masks.y0 + mu * self.v_y0)
        return masks.replace(m0=masks.m0 + mu * self.v_m0,
                             M=masks.M + mu * self.v_M,
                             U=masks.U + mu * self.v_U,
                             y0=masks.y0 + mu * self.v_y0)


def nesterov_step(state: OptimizerState, masks: MaskSet, grads: Gradients):
    """v <- mu*v - eta*grad(theta + mu*v); theta <- theta + v.

    The caller must have evaluated grads at state.lookahead(masks).
    Mutates and returns state; returns the updated masks.
    """
    state.iteration += 1
    eta = state.learning_rate(state.iteration)
    mu = state.momentum
    state.v_U = mu * state.v_U - eta * grads.d_U
    state.v_y0 = mu * state.v_y0 - eta * grads.d_y0
    if state.output_only:
        return masks.replace(U=masks.U + state.v_U, y0=masks.y0 + state.v_y0), state
    state.v_m0 = mu * state.v_m0 - eta * grads.d_m0
    state.v_M = mu * state.v_M - eta * grads.d_M
    return masks.replace(m0=masks.m0 + state.v_m0, M=masks.M + state.v_M,
                         U=masks.U + state.v_U, y0=masks.y0 + state.v_y0), state


def shift_augment(image, rng):
    """Shift a square image by one of {(0,0),(+-1,0),(0,+-1)}, zero-filling."""
    image = np.asarray(image)
    if image.ndim != 2 or image.shape[0] != image.shape[1]:
        raise ConfigError(f"expected a square image, got shape {image.shape}")
    choice = int(rng.integers(5))
    if choice == 0:
        return image.copy()
    out = np.zeros_like(image)
    if choice == 1:
        out[1:, :] = image[:-1, :]
    elif choice == 2:
        out[:-1, :] = image[1:, :]
    elif choice == 3:
        out[:, 1:] = image[:, :-1]
    else:
        out[:, :-1] = image[:, 1:]
    return out


def _shift_augment_batch(flat_images, side, rng):
    """Vectorized per-image random 1-pixel shifts on flat rows."""
    B = flat_images.shape[0]
    choices = rng.integers(0, 5, size=B)
    out = flat_images.reshape(B, side, side).copy()
    for c, (src, dst, zero) in enumerate([
        ((slice(None), slice(None, -1), slice(None)), (slice(None), slice(1, None), slice(None)), (slice(None), 0, slice(None))),
        ((slice(None), slice(1, None), slice(None)), (slice(None), slice(None, -1), slice(None)), (slice(None), -1, slice(None))),
        ((slice(None), slice(None), slice(None, -1)), (slice(None), slice(None), slice(1, None)), (slice(None), slice(None), 0)),
        ((slice(None), slice(None), slice(1, None)), (slice(None), slice(None), slice(None, -1)), (slice(None), slice(None), -1)),
    ], start=1):
        rows = choices == c
        if not rows.any():
            continue
        block = out[rows]
        shifted = np.zeros_like(block)
        shifted[dst] = block[src]
        out[rows] = shifted
    return out.reshape(B, side * side)


def init_masks(n_m: int, n_in: int, n_out: int, rng, scale: float = 0.1) -> MaskSet:
    """Small uniform input masks keep the sin^2 argument quasi-linear at
    the start; the readout starts at zero and is learned first."""
    return MaskSet(m0=rng.uniform(-scale, scale, n_m),
                   M=rng.uniform(-scale, scale, (n_m, n_in)),
                   U=np.zeros((n_out, n_m)), y0=np.zeros(n_out))


def readout(features, masks: MaskSet):
    """Affine readout: logits = features @ U.T + y0."""
    return np.asarray(features) @ masks.U.T + masks.y0


def error_rate(logits, labels) -> float:
    pred = np.argmax(np.asarray(logits), axis=-1)
    labels = np.broadcast_to(np.asarray(labels), pred.shape)
    return float(np.mean(pred != labels))


def _stack_sequences(dataset: SequenceDataset, indices):
    lengths = {dataset.frames[i].shape[0] for i in indices}
    if len(lengths) != 1:
        raise ConfigError(f"batched sequences must share one length, got {sorted(lengths)}")
    frames = np.stack([dataset.frames[i] for i in indices])
    labels = np.stack([dataset.labels[i] for i in indices])
    return frames, labels


def _write_losses(out_dir, curve):
    with open(os.path.join(out_dir, "losses.csv"), "w", encoding="utf-8") as fh:
        fh.write("iter,loss,lr\n")
        for it, loss, lr in curve:
            fh.write(f"{it},{loss:.17g},{lr:.17g}\n")


def train_masks(dataset, spec: TrainSpec, params: SystemParams,
                masks: MaskSet | None = None, out_dir=None):
    """Minibatch Nesterov training of the masks on a labeled dataset.

    ImageDataset uses static encoding (each image drives spec.repeats
    consecutive periods, the final period is read); SequenceDataset
    streams one frame per period and reads every period. Returns
    (masks, curve) with curve rows (iteration, loss, lr). When out_dir
    is given, writes losses.csv, optional masks_<iter>.bin checkpoints,
    and final.bin.
    """
    static = isinstance(dataset, ImageDataset)
    if not static and not isinstance(dataset, SequenceDataset):
        raise ConfigError(f"unsupported dataset type {type(dataset).__name__}")
    if len(dataset) == 0:
        raise ConfigError("empty dataset")
    n_in = dataset.images.shape[1] if static else dataset.n_in
    n_out = dataset.n_classes
    init_stream, batch_stream, augment_stream = rng_streams(spec.seed, 3)
    if masks is None:
        masks = init_masks(params.N_m, n_in, n_out, init_stream)
    if masks.n_m != params.N_m or masks.n_in != n_in:
        raise ConfigError(
            f"masks ({masks.n_m}, {masks.n_in}) do not fit N_m={params.N_m}, N_in={n_in}")
    state = OptimizerState.for_masks(masks, spec.learning_rate, spec.iterations,
                                     spec.momentum, output_only=spec.trainable == "output")
    N_m = params.N_m
    curve = []
    last_checkpoint = None
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)

    for i in range(1, spec.iterations + 1):
        idx = batch_sampler(len(dataset), spec.batch_size, batch_stream)
        la = state.lookahead(masks)
        try:
            if static:
                batch = dataset.images[idx]
                if spec.augment:
                    batch = _shift_augment_batch(batch, dataset.side, augment_stream)
                per_period = wrap(la.m0[None, :] + batch @ la.M.T)
                z = np.tile(per_period, (1, spec.repeats))
                a_bar = forward_batch(z, params)
                feats = a_bar[:, -N_m:]
                logits = feats @ la.U.T + la.y0
                loss, adjoint = cross_entropy(logits, dataset.labels[idx])
                grads = backward_batch(a_bar, z, batch, adjoint[:, None, :],
                                       [spec.repeats - 1], la, params)
            else:
                frames, labels = _stack_sequences(dataset, idx)
                B, L, _ = frames.shape
                z = wrap(la.m0[None, None, :] + frames @ la.M.T).reshape(B, L * N_m)
                a_bar = forward_batch(z, params)
                feats = a_bar.reshape(B, L, N_m)
                logits = feats @ la.U.T + la.y0
                loss, adjoint = cross_entropy(logits, labels)
                grads = backward_batch(a_bar, z, frames, adjoint,
                                       np.arange(L), la, params)
            if not math.isfinite(loss):
                raise TrainingError("loss is non-finite")
        except (TraceError, TrainingError) as exc:
            if out_dir is not None:
                _write_losses(out_dir, curve)
            where = last_checkpoint if last_checkpoint else "none written"
            raise TrainingError(
                f"training diverged at iteration {i} ({exc}); "
                f"last good checkpoint: {where}") from exc
        masks, state = nesterov_step(state, masks, grads)
        if i % spec.log_every == 0 or i == 1 or i == spec.iterations:
            curve.append((i, loss, state.learning_rate(state.iteration)))
        if out_dir is not None and spec.checkpoint_every > 0 and i % spec.checkpoint_every == 0:
            last_checkpoint = os.path.join(out_dir, f"masks_{i}.bin")
            save_masks(last_checkpoint, masks)

    if out_dir is not None:
        _write_losses(out_dir, curve)
        save_masks(os.path.join(out_dir, "final.bin"), masks)
    return masks, curve


def retrain_output(features, labels, spec: TrainSpec, masks: MaskSet, out_dir=None):
    """Fit only U and y0 on precomputed features; m0 and M pass through
    bit-identical. Returns (masks, curve)."""
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels)
    if features.ndim != 2 or features.shape[0] != labels.shape[0]:
        raise ConfigError(
            f"features {features.shape} and labels {labels.shape} do not align")
    if features.shape[1] != masks.n_m:
        raise ConfigError(f"features have {features.shape[1]} columns, masks expect {masks.n_m}")
    _, batch_stream = rng_streams(spec.seed, 2)
    state = OptimizerState.for_masks(masks, spec.learning_rate, spec.iterations,
                                     spec.momentum, output_only=True)
    zero_m0 = np.zeros_like(masks.m0)
    zero_M = np.zeros_like(masks.M)
    curve = []
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
    for i in range(1, spec.iterations + 1):
        idx = batch_sampler(features.shape[0], spec.batch_size, batch_stream)
        la = state.lookahead(masks)
        logits = features[idx] @ la.U.T + la.y0
        loss, adjoint = cross_entropy(logits, labels[idx])
        if not math.isfinite(loss):
            if out_dir is not None:
                _write_losses(out_dir, curve)
            raise TrainingError(f"retraining diverged at iteration {i}")
        grads = Gradients(d_m0=zero_m0, d_M=zero_M,
                          d_U=adjoint.T @ features[idx], d_y0=adjoint.sum(axis=0))
        masks, state = nesterov_step(state, masks, grads)
        if i % spec.log_every == 0 or i == 1 or i == spec.iterations:
            curve.append((i, loss, state.learning_rate(state.iteration)))
    if out_dir is not None:
        _write_losses(out_dir, curve)
        save_masks(os.path.join(out_dir, "final.bin"), masks)
    return masks, curve


def image_features(images, masks: MaskSet, params: SystemParams, repeats: int,
                   forward=None, chunk: int = 500, positions=None):
    """Final-period averaged states per image (the static feature map).

    forward(z, positions) -> a_bar may replace the plain model (for the
    emulated-hardware path); positions are the dataset row indices so a
    replacement can apply position-dependent drift.
    """
    images = np.asarray(images, dtype=np.float64)
    N = images.shape[0]
    N_m = params.N_m
    if positions is None:
        positions = np.arange(N)
    out = np.empty((N, N_m), dtype=np.float64)
    for start in range(0, N, chunk):
        stop = min(start + chunk, N)
        per_period = wrap(masks.m0[None, :] + images[start:stop] @ masks.M.T)
        z = np.tile(per_period, (1, repeats))
        if forward is None:
            a_bar = forward_batch(z, params)
        else:
            a_bar = forward(z, positions[start:stop])
        out[start:stop] = a_bar[:, -N_m:]
    return out


def sequence_features(dataset: SequenceDataset, masks: MaskSet, params: SystemParams,
                      forward=None, chunk: int = 100):
    """Per-frame averaged states for every sequence, streamed one frame
    per period from zero history. Returns (features (total, N_m),
    labels (total,)); rows follow dataset order."""
    N_m = params.N_m
    feats, labs = [], []
    order = np.argsort([f.shape[0] for f in dataset.frames], kind="stable")
    slot = {int(i): None for i in order}
    for start in range(0, len(order), chunk):
        group = order[start:start + chunk]
        lengths = {dataset.frames[i].shape[0] for i in group}
        for L in sorted(lengths):
            members = [i for i in group if dataset.frames[i].shape[0] == L]
            frames = np.stack([dataset.frames[i] for i in members])
            B = frames.shape[0]
            z = wrap(masks.m0[None, None, :] + frames @ masks.M.T).reshape(B, L * N_m)
            if forward is None:
                a_bar = forward_batch(z, params)
            else:
                a_bar = forward(z, np.asarray(members))
            per_frame = a_bar.reshape(B, L, N_m)
            for row, i in enumerate(members):
                slot[int(i)] = per_frame[row]
    for i in range(len(dataset)):
        feats.append(slot[i])
        labs.append(dataset.labels[i])
    return np.concatenate(feats, axis=0), np.concatenate(labs, axis=0)
