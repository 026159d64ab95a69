"""Discrete-time approximation of the delay loop.

Per masking step the delayed state is frozen at the previous period's
step-average, which makes the low-pass dynamics exactly solvable over the
step and collapses the whole simulation to a three-coefficient recurrence:

    a_bar[i+1] = rho0 * a_bar[i] + rho1 * gamma[i] + rho2 * gamma[i+1],
    gamma[i]   = beta * (sin^2(a_bar[i - N_m] + z[i] + phi) - 1/2).

a_bar is the time-average of the state over one masking step, so
rho0 + rho1 + rho2 = 1 and a constant gamma = c is a fixed point at c.
The readout mask absorbs the 1/P_m normalization, which is irrelevant
because the readout is trained.
"""

from dataclasses import dataclass

import numpy as np

from .core import ConfigError, SystemParams
from .masking import DriveSequence

try:  # compiled kernels are optional; the numpy path is the reference
    from numba import njit as _njit
except ImportError:  # pragma: no cover - exercised only without numba
    _njit = None


class TraceError(RuntimeError):
    """Non-finite state appeared mid-trace."""


@dataclass(frozen=True)
class RhoCoeffs:
    """Recurrence weights for one (P_m, T) geometry; all positive, sum to 1."""

    rho0: float
    rho1: float
    rho2: float
    kappa: float


def rho_coeffs(P_m: float, T: float) -> RhoCoeffs:
    """rho0 = exp(-P_m/T); rho1 = (T*kappa - P_m*rho0)/P_m; rho2 = (P_m - T*kappa)/P_m.

    kappa = 1 - exp(-P_m/T). The identity rho1 + rho2 = 1 - rho0 holds
    exactly in these normalized (time-averaged) units.
    """
    if not P_m > 0:
        raise ConfigError(f"P_m must be positive, got {P_m}")
    if not T > 0:
        raise ConfigError(f"T must be positive, got {T}")
    rho0 = float(np.exp(-P_m / T))
    kappa = 1.0 - rho0
    rho1 = (T * kappa - P_m * rho0) / P_m
    rho2 = (P_m - T * kappa) / P_m
    return RhoCoeffs(rho0=rho0, rho1=rho1, rho2=rho2, kappa=kappa)


def gamma(a_delayed, z, params: SystemParams):
    """Drive term beta * (sin^2(a_delayed + z + phi) - 1/2), bounded by beta/2."""
    s = np.sin(np.asarray(a_delayed) + np.asarray(z) + params.phi)
    out = params.beta * (s * s - 0.5)
    return out if out.ndim else float(out)


def step(a_bar_prev, gamma_i, gamma_next, rho: RhoCoeffs):
    """One recurrence update."""
    return rho.rho0 * a_bar_prev + rho.rho1 * gamma_i + rho.rho2 * gamma_next


def run_recurrence_reference(zphi, history, rho: RhoCoeffs, beta):
    """Pure-numpy recurrence loop; the semantic reference for the kernel.

    zphi: (S, B) drive-plus-phi, history: (N_m, B) delayed seed states,
    beta: scalar or (B,). Returns the extended state array (N_m + S, B):
    history rows first, then a_bar for every step. The step before the run
    is taken as quiescent (gamma[-1] = 0, a_bar[-1] = history[-1]).
    """
    S, B = zphi.shape
    N_m = history.shape[0]
    A = np.empty((N_m + S, B), dtype=zphi.dtype)
    A[:N_m] = history
    a_prev = A[N_m - 1].copy()
    g_prev = np.zeros(B, dtype=zphi.dtype)
    rho0, rho1, rho2 = zphi.dtype.type(rho.rho0), zphi.dtype.type(rho.rho1), zphi.dtype.type(rho.rho2)
    for j in range(S):
        pre = A[j] + zphi[j]
        np.sin(pre, out=pre)
        np.multiply(pre, pre, out=pre)
        pre -= 0.5
        g = pre * beta
        a = rho0 * a_prev
        a += rho1 * g_prev
        a += rho2 * g
        A[N_m + j] = a
        a_prev = a
        g_prev = g
    return A


if _njit is not None:

    @_njit(cache=True)
    def _recurrence_kernel(zphi, history, rho0, rho1, rho2, beta):
        # element order mirrors run_recurrence_reference bit for bit
        S, B = zphi.shape
        N_m = history.shape[0]
        A = np.empty((N_m + S, B), dtype=zphi.dtype)
        A[:N_m] = history
        g_prev = np.zeros(B, dtype=zphi.dtype)
        for j in range(S):
            for b in range(B):
                pre = A[j, b] + zphi[j, b]
                s = np.sin(pre)
                g = (s * s - 0.5) * beta[b]
                a = rho0 * A[N_m + j - 1, b] + rho1 * g_prev[b] + rho2 * g
                A[N_m + j, b] = a
                g_prev[b] = g
        return A


def run_recurrence(zphi, history, rho: RhoCoeffs, beta):
    """Core loop over a batch, time-major; see run_recurrence_reference.

    Dispatches to a compiled kernel when numba is importable; both paths
    apply the identical per-element operation order.
    """
    if _njit is None:
        return run_recurrence_reference(zphi, history, rho, beta)
    dt = zphi.dtype
    beta_arr = np.ascontiguousarray(np.broadcast_to(np.asarray(beta, dtype=dt), zphi.shape[1:]))
    return _recurrence_kernel(np.ascontiguousarray(zphi), np.ascontiguousarray(history, dtype=dt),
                              dt.type(rho.rho0), dt.type(rho.rho1), dt.type(rho.rho2), beta_arr)


def forward_batch(z, params: SystemParams, history=None, beta=None, phi=None,
                  dtype=np.float64):
    """Simulate a batch of independent drives.

    z: (B, S) wrapped drive phases, S a multiple of N_m. history: (B, N_m)
    delayed averages for the first period (zeros when omitted). beta/phi
    override the scalar system values, optionally per batch member (B,).
    Returns a_bar (B, S).
    """
    z = np.asarray(z, dtype=dtype)
    if z.ndim != 2:
        raise ConfigError("forward_batch expects a (B, S) drive array")
    B, S = z.shape
    N_m = params.N_m
    if S % N_m != 0:
        raise ConfigError(f"drive length {S} is not a multiple of N_m={N_m}")
    if history is None:
        history = np.zeros((B, N_m), dtype=dtype)
    else:
        history = np.asarray(history, dtype=dtype)
        if history.shape != (B, N_m):
            raise ConfigError(f"history shape {history.shape} != {(B, N_m)}")
        if not np.all(np.isfinite(history)):
            raise ConfigError("history contains non-finite entries")
    phi_val = params.phi if phi is None else np.asarray(phi, dtype=dtype)
    beta_val = params.beta if beta is None else np.asarray(beta, dtype=dtype)
    zphi = np.ascontiguousarray(z.T) + phi_val  # (S, B); phi may be (B,)
    rho = rho_coeffs(params.P_m, params.T)
    A = run_recurrence(zphi, np.ascontiguousarray(history.T), rho, beta_val)
    a_bar = np.ascontiguousarray(A[N_m:].T)
    if not np.all(np.isfinite(a_bar)):
        bad = np.argwhere(~np.isfinite(a_bar))[0]
        raise TraceError(f"non-finite state at batch {bad[0]}, step {bad[1]}")
    return a_bar


@dataclass(frozen=True)
class StateTrace:
    """Per-masking-step averaged states over one driven run."""

    a_bar: np.ndarray
    params: SystemParams
    drive: DriveSequence


def forward(drive: DriveSequence, params: SystemParams, history=None) -> StateTrace:
    """Simulate one drive sequence from the given (default zero) history.

    Deterministic: identical inputs give bit-identical traces.
    """
    if params.N_m != drive.N_m:
        raise ConfigError(f"drive N_m={drive.N_m} does not match params N_m={params.N_m}")
    hist = None if history is None else np.asarray(history, dtype=np.float64)[None, :]
    a_bar = forward_batch(drive.z[None, :], params, history=hist)[0]
    return StateTrace(a_bar=a_bar, params=params, drive=drive)


def trace_to_csv(path, trace: StateTrace) -> None:
    """Columns: step, period, mask_step, a_bar."""
    n_m = trace.params.N_m
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("step,period,mask_step,a_bar\n")
        for j, a in enumerate(trace.a_bar):
            fh.write(f"{j},{j // n_m},{j % n_m},{a:.17g}\n")
