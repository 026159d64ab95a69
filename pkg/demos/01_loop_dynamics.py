"""Loop physics walkthrough: coefficients, relaxation, drive response, oracle.

Runs in a few seconds. Writes per-step traces to demos/out/ so the fast
model and the continuous oracle can be plotted on top of each other.
"""

import os

import numpy as np

from dcmz import (
    DriveSequence,
    SystemParams,
    dde_oracle,
    forward,
    forward_batch,
    rho_coeffs,
    trace_to_csv,
    validate,
    wrap,
)

OUT = os.path.join(os.path.dirname(__file__), "out")


def main():
    os.makedirs(OUT, exist_ok=True)

    # desk geometry: 20 masking steps, loop delay scaled so each step
    # covers the same fraction of the response time as the full build
    params = validate(SystemParams(N_m=20, D=20 * 0.05205, P=20 * 0.05205))
    rho = rho_coeffs(params.P_m, params.T)
    print("one mask step is P_m/T =", round(params.P_m / params.T, 4), "response times")
    print(f"recurrence coefficients: rho0={rho.rho0:.6f} rho1={rho.rho1:.6f} rho2={rho.rho2:.6f}")
    print(f"identity rho1 + rho2 = 1 - rho0 holds to {abs(rho.rho1 + rho.rho2 - 1 + rho.rho0):.1e}")
    print()

    # with the feedback gain below 1 the loop forgets any starting state
    rng = np.random.default_rng(0)
    history = rng.uniform(-0.5, 0.5, params.N_m)
    quiet = forward_batch(np.zeros((1, 30 * params.N_m)), params,
                          history=history[None, :])[0]
    per_period = np.abs(quiet).reshape(30, params.N_m).max(axis=1)
    print("zero drive, random history: max |state| per period")
    for p in (0, 1, 2, 5, 10, 20, 29):
        print(f"  period {p:2d}: {per_period[p]:.3e}")
    print()

    # a driven run: every period sees the same masked input, so the
    # state settles into a repeating orbit the readout can average
    steps = wrap(rng.uniform(-1.0, 1.0, params.N_m))
    drive = DriveSequence(z=np.tile(steps, 8),
                          period_index=np.arange(8).repeat(params.N_m),
                          N_m=params.N_m)
    trace = forward(drive, params)
    path = os.path.join(OUT, "driven_trace.csv")
    trace_to_csv(path, trace)
    last_two = trace.a_bar.reshape(8, params.N_m)[-2:]
    print(f"driven trace written to {path}")
    print(f"orbit settles: last two periods differ by {np.max(np.abs(last_two[1] - last_two[0])):.3e}")
    print()

    # the continuous oracle integrates the actual delay equation; the
    # discrete model should track its per-step averages almost exactly
    oracle = dde_oracle.integrate(drive, params)
    a_oracle = dde_oracle.averaged(oracle, params.P_m)
    corr = np.corrcoef(trace.a_bar, a_oracle)[0, 1]
    rms = np.sqrt(np.mean((trace.a_bar - a_oracle) ** 2))
    opath = os.path.join(OUT, "oracle_trace.csv")
    dde_oracle.oracle_trace_to_csv(opath, oracle, params)
    print(f"oracle trace written to {opath}")
    print(f"fast model vs oracle: correlation {corr:.6f}, rms gap {rms:.2e}")


if __name__ == "__main__":
    main()
