"""Hybrid training on a mismatched hardware twin.

Masks trained against the ideal model are driven through an emulated
bench with gain offset, slow phase drift, and measurement noise. The
readout refit on twin recordings absorbs the mismatch; reusing the
simulation readout unchanged does not. Runs in about a minute.
"""

import argparse
import os

import numpy as np

from dcmz import (
    TwinConfig,
    forward_batch,
    params_from_dict,
    resolve_config,
    run_scenario,
    twin_forward_batch,
    validate,
    wrap,
)

OUT = os.path.join(os.path.dirname(__file__), "out")

QUICK = {
    "n_train": "2000", "n_test": "500",
    "iterations": "3000", "retrain_iterations": "4000",
}


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--full", action="store_true",
                        help="run the full desk-scale preset instead of the quick slice")
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    cfg = resolve_config("mnist-desk", None, None if args.full else QUICK)
    params = validate(params_from_dict(cfg))
    twin = TwinConfig(delta_beta=cfg["delta_beta"],
                      phi_drift_amplitude=cfg["phi_drift_amplitude"],
                      phi_drift_period=cfg["phi_drift_period_samples"],
                      noise_sigma=cfg["noise_sigma"], seed=cfg["twin_seed"])

    # how far off is the twin, trace by trace?
    rng = np.random.default_rng(7)
    z = wrap(rng.uniform(-1.0, 1.0, (8, 20 * params.N_m)))
    ideal = forward_batch(z, params)
    bench = twin_forward_batch(z, params, twin)
    corr = np.corrcoef(ideal.ravel(), bench.ravel())[0, 1]
    print(f"twin mismatch: gain {params.beta} -> {params.beta + twin.delta_beta:g}, "
          f"phase drift +-{twin.phi_drift_amplitude}, noise sigma {twin.noise_sigma}")
    print(f"trace correlation ideal vs twin: {corr:.4f} "
          "(close, but not the machine the masks were trained on)")
    print()

    # the full hybrid protocol: masks from simulation, readout from twin
    opt_dir = os.path.join(OUT, "optimized")
    masks_path = os.path.join(opt_dir, "final.bin")
    if not os.path.exists(masks_path):
        print("training masks in simulation first...")
        run_scenario("optimized", cfg, opt_dir, seed=args.seed)
    report = run_scenario("twin", cfg, os.path.join(OUT, "twin"), seed=args.seed,
                          masks_path=masks_path)

    sim = report.extra["sim_test_error"]
    reused = report.extra["twin_reused_test_error"]
    retrained = report.test_error
    print(f"simulation features, simulation readout: test {sim:.2%}")
    print(f"twin features, reused simulation readout: test {reused:.2%}")
    print(f"twin features, readout refit on twin:     test {retrained:.2%}")
    print()
    print(f"refit within {abs(retrained - sim):.2%} of simulation, "
          f"and never worse than reuse: {retrained <= reused}")


if __name__ == "__main__":
    main()
