"""Emulated hardware stand-in for hybrid training experiments.

The twin runs the same recurrence with a systematic gain offset, a slow
sinusoidal phase drift across the dataset, and i.i.d. Gaussian
measurement noise on the recorded states. Retraining only the readout
on twin data absorbs the mismatch the input masks were not trained for.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import ConfigError, MaskSet, SystemParams
from .fast_model import StateTrace, TraceError, forward_batch
from .masking import DriveSequence
from .train import TrainSpec, error_rate, image_features, readout, retrain_output, sequence_features

__all__ = [
    "TwinConfig",
    "validate_twin",
    "twin_phi",
    "twin_forward",
    "twin_forward_batch",
    "HybridResult",
    "hybrid_pipeline",
]


@dataclass(frozen=True)
class TwinConfig:
    """Mismatch between the model and the emulated hardware.

    Defaults are calibrated so the twin trace correlates with the plain
    model at roughly the level a well-matched laboratory setup shows,
    while remaining a non-trivial mismatch for the readout to absorb.
    phi_drift_period is in dataset sample positions (the drift is slow
    relative to any single trace).
    """

    delta_beta: float = 0.05
    phi_drift_amplitude: float = 0.05
    phi_drift_period: int = 2000
    noise_sigma: float = 0.005
    seed: int = 0


def validate_twin(twin: TwinConfig, params: SystemParams) -> TwinConfig:
    if twin.noise_sigma < 0:
        raise ConfigError(f"noise_sigma must be >= 0, got {twin.noise_sigma}")
    if twin.phi_drift_period <= 0:
        raise ConfigError(f"phi_drift_period must be positive, got {twin.phi_drift_period}")
    beta_eff = params.beta + twin.delta_beta
    if abs(beta_eff) >= 1.0:
        raise ConfigError(
            f"twin gain beta+delta_beta = {beta_eff} leaves the stable regime (|beta| < 1)")
    if abs(twin.phi_drift_amplitude) > np.pi / 2:
        raise ConfigError("phi drift amplitude beyond pi/2 is not a small mismatch")
    return twin


def twin_phi(params: SystemParams, twin: TwinConfig, positions):
    """Drifted operating phase per dataset position (slow sinusoid)."""
    positions = np.asarray(positions, dtype=np.float64)
    return params.phi + twin.phi_drift_amplitude * np.sin(
        2.0 * np.pi * positions / twin.phi_drift_period)


def _measurement_noise(twin: TwinConfig, position: int, n: int) -> np.ndarray:
    # one child stream per (seed, position): batch composition cannot
    # change a sample's noise, keeping runs reproducible under any split
    rng = np.random.default_rng(np.random.SeedSequence((twin.seed, int(position))))
    return rng.normal(0.0, twin.noise_sigma, n)


def twin_forward_batch(z, params: SystemParams, twin: TwinConfig, positions=None):
    """Mismatched forward pass: returns noisy averaged states (B, S)."""
    validate_twin(twin, params)
    z = np.asarray(z, dtype=np.float64)
    B, S = z.shape
    if positions is None:
        positions = np.arange(B)
    positions = np.asarray(positions)
    if positions.shape != (B,):
        raise ConfigError(f"positions shape {positions.shape} != ({B},)")
    kwargs = {}
    if twin.delta_beta != 0.0:
        kwargs["beta"] = params.beta + twin.delta_beta
    if twin.phi_drift_amplitude != 0.0:
        kwargs["phi"] = twin_phi(params, twin, positions)
    a_bar = forward_batch(z, params, **kwargs)
    if np.max(np.abs(a_bar)) > 1e3:
        raise TraceError("twin trace grew beyond |a| = 1e3; mismatch destabilized the loop")
    if twin.noise_sigma != 0.0:
        a_bar = a_bar.copy()
        for row in range(B):
            a_bar[row] += _measurement_noise(twin, positions[row], S)
    return a_bar


def twin_forward(drive: DriveSequence, params: SystemParams, twin: TwinConfig,
                 position: int = 0) -> StateTrace:
    """Single-drive twin run; the null twin is bit-identical to forward."""
    if params.N_m != drive.N_m:
        raise ConfigError(f"drive N_m={drive.N_m} does not match params N_m={params.N_m}")
    a_bar = twin_forward_batch(drive.z[None, :], params, twin,
                               positions=np.array([position]))[0]
    return StateTrace(a_bar=a_bar, params=params, drive=drive)


@dataclass(frozen=True)
class HybridResult:
    """Errors from the simulation-vs-twin readout comparison."""

    sim_train_error: float
    sim_test_error: float
    twin_train_error: float
    twin_test_error: float
    twin_reused_test_error: float  # sim-trained readout applied to twin features
    masks_sim: MaskSet
    masks_twin: MaskSet


def hybrid_pipeline(train_set, test_set, masks: MaskSet, params: SystemParams,
                    twin: TwinConfig, retrain_spec: TrainSpec,
                    repeats: int = 1) -> HybridResult:
    """Hybrid training: masks trained in simulation, readout refit on twin data.

    Features are extracted for train and test splits from both the plain
    model and the twin (twin positions continue across the splits, so
    drift spans the whole recording session). The readout is retrained
    per feature source; the twin refit warm-starts from the simulation
    readout, mirroring a retrained deployment.
    """
    validate_twin(twin, params)
    is_images = hasattr(train_set, "images")
    if is_images:
        n_train = len(train_set)
        sim_tr = image_features(train_set.images, masks, params, repeats)
        sim_te = image_features(test_set.images, masks, params, repeats)
        tw = lambda off: (lambda z, pos: twin_forward_batch(z, params, twin, positions=pos + off))
        twin_tr = image_features(train_set.images, masks, params, repeats, forward=tw(0))
        twin_te = image_features(test_set.images, masks, params, repeats, forward=tw(n_train))
        y_tr, y_te = train_set.labels, test_set.labels
    else:
        n_train = len(train_set)
        sim_tr, y_tr = sequence_features(train_set, masks, params)
        sim_te, y_te = sequence_features(test_set, masks, params)
        tw = lambda off: (lambda z, pos: twin_forward_batch(z, params, twin, positions=pos + off))
        twin_tr, _ = sequence_features(train_set, masks, params, forward=tw(0))
        twin_te, _ = sequence_features(test_set, masks, params, forward=tw(n_train))

    masks_sim, _ = retrain_output(sim_tr, y_tr, retrain_spec, masks)
    masks_twin, _ = retrain_output(twin_tr, y_tr, retrain_spec, masks_sim)
    return HybridResult(
        sim_train_error=error_rate(readout(sim_tr, masks_sim), y_tr),
        sim_test_error=error_rate(readout(sim_te, masks_sim), y_te),
        twin_train_error=error_rate(readout(twin_tr, masks_twin), y_tr),
        twin_test_error=error_rate(readout(twin_te, masks_twin), y_te),
        twin_reused_test_error=error_rate(readout(twin_te, masks_sim), y_te),
        masks_sim=masks_sim,
        masks_twin=masks_twin,
    )
