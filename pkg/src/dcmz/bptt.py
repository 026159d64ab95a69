"""Reverse-mode gradients through the delayed recurrence.

The forward map has exactly two state-to-state paths (the direct rho0 link
and the delayed feedback through gamma), so the adjoint recurrence is
hand-coded rather than pulled from an autodiff framework. Sequences are
short enough that full unrolling without checkpointing is fine.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import ConfigError, MaskSet, SystemParams
from .fast_model import StateTrace, TraceError, forward_batch, rho_coeffs
from .masking import DriveSequence, build_drive

try:  # compiled kernel is optional; the numpy sweep is the reference
    from numba import njit as _njit
except ImportError:  # pragma: no cover - exercised only without numba
    _njit = None

__all__ = [
    "Gradients",
    "GradcheckReport",
    "backward",
    "backward_batch",
    "gradcheck",
]


@dataclass(frozen=True)
class Gradients:
    """Loss gradients for every trainable mask parameter."""

    d_m0: np.ndarray
    d_M: np.ndarray
    d_U: np.ndarray
    d_y0: np.ndarray

    def scaled(self, factor: float) -> "Gradients":
        return Gradients(self.d_m0 * factor, self.d_M * factor,
                         self.d_U * factor, self.d_y0 * factor)

    def __add__(self, other: "Gradients") -> "Gradients":
        return Gradients(self.d_m0 + other.d_m0, self.d_M + other.d_M,
                         self.d_U + other.d_U, self.d_y0 + other.d_y0)


def reverse_sweep_reference(gprime_t, readout_t, rho, N_m):
    """Pure-numpy adjoint recurrence, backward over time.

    gprime_t, readout_t: (S, B) time-major arrays. delta_j collects the
    direct rho0 path, the delayed path through gamma_{j+N_m}, and the
    readout contribution at step j; indices past the end contribute zero,
    which the padding encodes without branches.
    Returns (delta (S, B), dz (S, B)).
    """
    S, B = readout_t.shape
    rho0, rho1, rho2 = rho.rho0, rho.rho1, rho.rho2
    delta = np.zeros((S + N_m + 1, B), dtype=readout_t.dtype)
    gp = np.zeros((S + N_m + 1, B), dtype=gprime_t.dtype)
    gp[:S] = gprime_t
    for j in range(S - 1, -1, -1):
        d = rho0 * delta[j + 1]
        d += gp[j + N_m] * (rho2 * delta[j + N_m] + rho1 * delta[j + N_m + 1])
        d += readout_t[j]
        delta[j] = d
    dz = gp[:S] * (rho2 * delta[:S] + rho1 * delta[1:S + 1])
    return delta[:S], dz


if _njit is not None:

    @_njit(cache=True)
    def _sweep_kernel(gprime_t, readout_t, rho0, rho1, rho2, N_m):
        # element order mirrors reverse_sweep_reference bit for bit
        S, B = readout_t.shape
        delta = np.zeros((S + N_m + 1, B), dtype=readout_t.dtype)
        gp = np.zeros((S + N_m + 1, B), dtype=gprime_t.dtype)
        gp[:S] = gprime_t
        for j in range(S - 1, -1, -1):
            for b in range(B):
                delta[j, b] = (rho0 * delta[j + 1, b]
                               + gp[j + N_m, b] * (rho2 * delta[j + N_m, b]
                                                   + rho1 * delta[j + N_m + 1, b])
                               + readout_t[j, b])
        dz = np.empty((S, B), dtype=readout_t.dtype)
        for j in range(S):
            for b in range(B):
                dz[j, b] = gp[j, b] * (rho2 * delta[j, b] + rho1 * delta[j + 1, b])
        return delta[:S], dz


def _reverse_sweep(gprime_t, readout_t, rho, N_m):
    if _njit is None:
        return reverse_sweep_reference(gprime_t, readout_t, rho, N_m)
    return _sweep_kernel(np.ascontiguousarray(gprime_t), np.ascontiguousarray(readout_t),
                         readout_t.dtype.type(rho.rho0), readout_t.dtype.type(rho.rho1),
                         readout_t.dtype.type(rho.rho2), N_m)


def backward_batch(a_bar, z, samples, output_adjoints, read_periods,
                   masks: MaskSet, params: SystemParams,
                   history=None, beta=None, phi=None) -> Gradients:
    """Accumulate mask gradients over a batch of forward runs.

    a_bar, z: (B, S) state and wrapped drive from the same forward pass.
    samples: (B, N_in) for static encoding (one instance repeated every
    period) or (B, n_periods, N_in) for streaming (one frame per period).
    output_adjoints: (B, R, N_out) loss adjoints dL/dy at the R periods
    listed in read_periods. Loss normalization (for example 1/batch) is
    the caller's, folded into the adjoints; the returned gradients are
    plain sums, so scaled adjoints give the mean-loss gradient exactly.
    """
    a_bar = np.asarray(a_bar, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    if a_bar.shape != z.shape or a_bar.ndim != 2:
        raise TraceError(f"state shape {a_bar.shape} does not match drive shape {z.shape}")
    B, S = a_bar.shape
    N_m = params.N_m
    if S % N_m != 0:
        raise ConfigError(f"drive length {S} is not a multiple of N_m={N_m}")
    n_periods = S // N_m
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim not in (2, 3) or samples.shape[0] != B:
        raise ConfigError(f"samples shape {samples.shape} does not match batch size {B}")
    if samples.ndim == 3 and samples.shape[1] != n_periods:
        raise ConfigError(
            f"streaming samples carry {samples.shape[1]} frames but the drive has {n_periods} periods")
    read_periods = np.asarray(read_periods, dtype=np.intp)
    output_adjoints = np.asarray(output_adjoints, dtype=np.float64)
    R = read_periods.shape[0]
    if output_adjoints.shape != (B, R, masks.n_out):
        raise ConfigError(
            f"output adjoints shape {output_adjoints.shape} != {(B, R, masks.n_out)}")
    if history is None:
        history = np.zeros((B, N_m), dtype=np.float64)
    else:
        history = np.asarray(history, dtype=np.float64)

    # Readout is affine in the read-period states, so its gradients are
    # direct contractions and its state adjoint is a projection through U.
    features = a_bar.reshape(B, n_periods, N_m)[:, read_periods, :]
    d_U = output_adjoints.reshape(B * R, -1).T @ features.reshape(B * R, N_m)
    d_y0 = output_adjoints.sum(axis=(0, 1))
    readout = np.zeros((B, n_periods, N_m), dtype=np.float64)
    readout[:, read_periods, :] = output_adjoints @ masks.U

    # gamma's derivative needs the sin^2 argument; rebuild it from the
    # retained trace instead of storing it during forward.
    beta_val = params.beta if beta is None else np.asarray(beta, dtype=np.float64)
    phi_val = params.phi if phi is None else np.asarray(phi, dtype=np.float64)
    if np.ndim(beta_val) == 1:
        beta_val = beta_val[:, None]
    if np.ndim(phi_val) == 1:
        phi_val = phi_val[:, None]
    delayed = np.concatenate([history, a_bar[:, :S - N_m]], axis=1)
    gprime = beta_val * np.sin(2.0 * (delayed + z + phi_val))

    rho = rho_coeffs(params.P_m, params.T)
    _, dz = _reverse_sweep(np.ascontiguousarray(gprime.T),
                           np.ascontiguousarray(readout.reshape(B, S).T),
                           rho, N_m)
    dz = dz.T.reshape(B, n_periods, N_m)

    # The wrap that folded the drive into [-pi/2, pi/2] shifts by exact
    # multiples of pi, which sin^2 cannot see, so d(wrap)/dz = 1 and the
    # drive adjoints land on the masks unmodified.
    d_m0 = dz.sum(axis=(0, 1))
    if samples.ndim == 2:
        d_M = dz.sum(axis=1).T @ samples
    else:
        d_M = dz.reshape(B * n_periods, N_m).T @ samples.reshape(B * n_periods, -1)
    return Gradients(d_m0=d_m0, d_M=d_M, d_U=d_U, d_y0=d_y0)


def backward(trace: StateTrace, drive: DriveSequence, samples, output_adjoints,
             masks: MaskSet, params: SystemParams | None = None,
             read_periods=None, history=None) -> Gradients:
    """Gradients for one forward trace.

    read_periods defaults to the final period (static encoding reads the
    last repeat); pass every period index for streaming sequences.
    """
    if params is None:
        params = trace.params
    if trace.drive is not drive and not np.array_equal(trace.drive.z, drive.z):
        raise TraceError("trace was produced from a different drive")
    if trace.a_bar.shape != drive.z.shape:
        raise TraceError(
            f"trace length {trace.a_bar.shape} does not match drive length {drive.z.shape}")
    n_periods = drive.n_periods
    if read_periods is None:
        read_periods = [n_periods - 1]
    samples = np.asarray(samples, dtype=np.float64)
    output_adjoints = np.asarray(output_adjoints, dtype=np.float64)
    if output_adjoints.ndim == 2:
        output_adjoints = output_adjoints[None, :, :]
    hist = None if history is None else np.asarray(history, dtype=np.float64)[None, :]
    return backward_batch(trace.a_bar[None, :], drive.z[None, :],
                          samples[None, ...], output_adjoints, read_periods,
                          masks, params, history=hist)


def _flatten_masks(masks: MaskSet):
    return np.concatenate([masks.m0, masks.M.ravel(), masks.U.ravel(), masks.y0])


def _unflatten_masks(vec, masks: MaskSet) -> MaskSet:
    n_m, n_in, n_out = masks.n_m, masks.n_in, masks.n_out
    o1 = n_m
    o2 = o1 + n_m * n_in
    o3 = o2 + n_out * n_m
    return masks.replace(m0=vec[:o1].copy(),
                         M=vec[o1:o2].reshape(n_m, n_in).copy(),
                         U=vec[o2:o3].reshape(n_out, n_m).copy(),
                         y0=vec[o3:].copy())


def _parameter_name(q: int, masks: MaskSet) -> str:
    n_m, n_in, n_out = masks.n_m, masks.n_in, masks.n_out
    if q < n_m:
        return f"m0[{q}]"
    q -= n_m
    if q < n_m * n_in:
        return f"M[{q // n_in},{q % n_in}]"
    q -= n_m * n_in
    if q < n_out * n_m:
        return f"U[{q // n_m},{q % n_m}]"
    q -= n_out * n_m
    return f"y0[{q}]"


def _loss_pipeline(masks: MaskSet, params: SystemParams, sample, labels, repeats: int):
    """Forward + cross-entropy for one sample; returns loss and Gradients.

    1-D samples use static encoding (read the final repeat); 2-D samples
    stream one frame per period and read every period.
    """
    from .train import cross_entropy  # deferred: train builds on this module

    sample = np.asarray(sample, dtype=np.float64)
    if sample.ndim == 1:
        drive = build_drive(sample[None, :], masks, repeats=repeats)
        z = drive.z[None, :]
        read = np.array([repeats - 1])
        batch_samples = sample[None, :]
    elif sample.ndim == 2:
        frames = sample[None, :, :]
        z = build_drive(frames.reshape(-1, sample.shape[1]), masks).z.reshape(1, -1)
        read = np.arange(sample.shape[0])
        batch_samples = frames
    else:
        raise ConfigError(f"sample must be 1-D or 2-D, got shape {sample.shape}")
    a_bar = forward_batch(z, params)
    feats = a_bar.reshape(1, -1, params.N_m)[:, read, :]
    logits = feats @ masks.U.T + masks.y0
    loss, adj = cross_entropy(logits, labels)
    grads = backward_batch(a_bar, z, batch_samples, adj, read, masks, params)
    return loss, grads


@dataclass(frozen=True)
class GradcheckReport:
    """Worst-case analytic-vs-finite-difference disagreement."""

    max_rel_error: float
    worst_parameter: str
    n_parameters: int

    def passed(self, threshold: float = 1e-6) -> bool:
        return self.max_rel_error < threshold


def gradcheck(masks: MaskSet, params: SystemParams, sample, epsilon: float = 1e-6,
              labels=0, repeats: int = 2) -> GradcheckReport:
    """Compare the adjoint gradient against central finite differences.

    Every mask parameter is perturbed by +/-epsilon in turn and the loss
    recomputed through the full forward pipeline; the relative error is
    |g_fd - g_bp| / (|g_fd| + |g_bp| + 1e-12). 64-bit only.
    """
    theta = _flatten_masks(masks)
    loss, grads = _loss_pipeline(masks, params, sample, labels, repeats)
    g_bp = _flatten_masks(MaskSet(m0=grads.d_m0, M=grads.d_M, U=grads.d_U, y0=grads.d_y0))
    worst = 0.0
    worst_q = 0
    for q in range(theta.shape[0]):
        bumped = theta.copy()
        bumped[q] = theta[q] + epsilon
        loss_plus, _ = _loss_pipeline(_unflatten_masks(bumped, masks), params,
                                      sample, labels, repeats)
        bumped[q] = theta[q] - epsilon
        loss_minus, _ = _loss_pipeline(_unflatten_masks(bumped, masks), params,
                                       sample, labels, repeats)
        g_fd = (loss_plus - loss_minus) / (2.0 * epsilon)
        rel = abs(g_fd - g_bp[q]) / (abs(g_fd) + abs(g_bp[q]) + 1e-12)
        if rel > worst:
            worst = rel
            worst_q = q
    return GradcheckReport(max_rel_error=worst,
                           worst_parameter=_parameter_name(worst_q, masks),
                           n_parameters=theta.shape[0])
