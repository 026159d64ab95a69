"""High-accuracy continuous-time integrator for the delay loop.

    T * da/dt = -a(t) + beta * (sin^2(a(t - D) + z(t) + phi) - 1/2)

Used solely to validate the discrete fast model and quantify its
discretization error; no gradients flow through here. Fixed-step classical
RK4 on a uniform grid aligned with the masking steps: the drive is piecewise
constant with known breakpoints, so aligning steps with breakpoints keeps
full fourth order. The delayed term is read from the stored trajectory;
midpoint stage values use a cubic stencil clamped inside a single masking
step, because the trajectory has derivative kinks at step boundaries and a
stencil straddling one would cost two orders of accuracy.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import simpson

from .core import ConfigError, SystemParams
from .masking import DriveSequence


class OracleError(RuntimeError):
    """Integration aborted (instability or grid misalignment)."""


@dataclass(frozen=True)
class ContinuousTrace:
    """Uniformly sampled state trajectory from t = 0."""

    t: np.ndarray
    a: np.ndarray
    h: float


# Lagrange cubic weights at offsets 0.5, 1.5, 2.5 into a 4-point stencil.
_W_LEFT = (0.3125, 0.9375, -0.3125, 0.0625)
_W_MID = (-0.0625, 0.5625, 0.5625, -0.0625)
_W_RIGHT = (0.0625, -0.3125, 0.9375, 0.3125)


def _grid_divisions(P_m: float, D: float, h: float):
    n_sub = round(P_m / h)
    if n_sub < 20 or abs(P_m / h - n_sub) > 1e-9 * n_sub:
        raise ConfigError(
            f"h={h} must divide P_m={P_m} exactly with at least 20 substeps"
        )
    n_delay = round(D / h)
    if abs(D / h - n_delay) > 1e-9 * n_delay:
        raise ConfigError(f"D={D} must be an integer multiple of h={h}")
    return n_sub, n_delay


def integrate(drive: DriveSequence, params: SystemParams, h: float | None = None,
              history=None) -> ContinuousTrace:
    """Integrate the delay equation over a drive sequence.

    h defaults to P_m / 50. history gives a(t) on [-D, 0]: None for the
    quiescent loop, a float for a constant level, or a callable of t.
    Aborts with OracleError if |a| exceeds 1e3.
    """
    if params.P_m <= 0:
        raise ConfigError("params must be validated (P_m unset)")
    if params.N_m != drive.N_m:
        raise ConfigError(f"drive N_m={drive.N_m} does not match params N_m={params.N_m}")
    if h is None:
        h = params.P_m / 50.0
    n_sub, n_delay = _grid_divisions(params.P_m, params.D, h)

    z = np.asarray(drive.z, dtype=np.float64)
    n_steps = z.shape[0]
    n_total = n_steps * n_sub
    zphi = z + params.phi

    a_ext = np.empty(n_delay + 1 + n_total)
    t_hist = (np.arange(n_delay + 1) - n_delay) * h
    if history is None:
        a_ext[: n_delay + 1] = 0.0
    elif callable(history):
        a_ext[: n_delay + 1] = [float(history(t)) for t in t_hist]
    else:
        a_ext[: n_delay + 1] = float(history)

    # Locals for the tight scalar loop.
    sin = math.sin
    bT = params.beta / params.T
    invT = 1.0 / params.T
    hh, h6 = 0.5 * h, h / 6.0
    last = n_sub - 1
    wl, wm, wr = _W_LEFT, _W_MID, _W_RIGHT
    a = a_ext  # ext index e holds a at t = (e - n_delay) * h
    zp = zphi

    for n in range(n_total):
        zq = zp[n // n_sub]
        r = n % n_sub
        if r == 0:
            i0, (w0, w1, w2, w3) = n, wl
        elif r == last:
            i0, (w0, w1, w2, w3) = n - 2, wr
        else:
            i0, (w0, w1, w2, w3) = n - 1, wm
        a_mid = w0 * a[i0] + w1 * a[i0 + 1] + w2 * a[i0 + 2] + w3 * a[i0 + 3]

        an = a[n_delay + n]
        s1 = sin(a[n] + zq)
        k1 = bT * (s1 * s1 - 0.5) - invT * an
        sm = sin(a_mid + zq)
        gm = bT * (sm * sm - 0.5)
        k2 = gm - invT * (an + hh * k1)
        k3 = gm - invT * (an + hh * k2)
        s4 = sin(a[n + 1] + zq)
        k4 = bT * (s4 * s4 - 0.5) - invT * (an + h * k3)
        a_new = an + h6 * (k1 + 2.0 * (k2 + k3) + k4)
        if not -1e3 < a_new < 1e3:
            raise OracleError(
                f"instability: |a| > 1e3 at integration step {n + 1} "
                f"(t = {(n + 1) * h:.6g})"
            )
        a[n_delay + n + 1] = a_new

    return ContinuousTrace(
        t=np.arange(n_total + 1) * h, a=a_ext[n_delay:].copy(), h=h
    )


def averaged(trace: ContinuousTrace, P_m: float) -> np.ndarray:
    """Per-masking-step averages of a(t), one value per step.

    Composite Simpson quadrature per step: sharing the fast model's
    time-average convention at full fourth order, so self-convergence of
    the averages tracks the integrator's own order.
    """
    n_sub = round(P_m / trace.h)
    if abs(P_m / trace.h - n_sub) > 1e-9 * n_sub:
        raise OracleError(f"trace grid h={trace.h} is misaligned with P_m={P_m}")
    n_points = trace.a.shape[0]
    if (n_points - 1) % n_sub != 0:
        raise OracleError("trace does not cover a whole number of masking steps")
    n_steps = (n_points - 1) // n_sub
    blocks = np.empty((n_steps, n_sub + 1))
    blocks[:, :-1] = trace.a[:-1].reshape(n_steps, n_sub)
    blocks[:, -1] = trace.a[n_sub::n_sub]
    return simpson(blocks, dx=trace.h, axis=1) / P_m


def oracle_trace_to_csv(path, trace: ContinuousTrace, params: SystemParams) -> None:
    """Per-masking-step averages in the fast-model CSV schema plus h."""
    avg = averaged(trace, params.P_m)
    n_m = params.N_m
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("step,period,mask_step,a_bar,h\n")
        for j, v in enumerate(avg):
            fh.write(f"{j},{j // n_m},{j % n_m},{v:.17g},{trace.h:.17g}\n")
