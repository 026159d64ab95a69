"""Delay-coupled Mach-Zehnder loop as a trainable time-multiplexed network.

A single nonlinear node with delayed feedback emulates a recurrent
network: each delay period is chopped into N_m masking steps, a
trainable input mask encodes data into per-step drive phases, the loop
state is read back per step, and a linear readout classifies. The
package provides a fast discrete model of the loop, a high-accuracy
continuous integrator to audit it, exact hand-rolled gradients for mask
training, a mismatched "hardware twin" for transferability studies, and
an experiment harness with reproducible reports.
"""

from .bptt import Gradients, GradcheckReport, backward, backward_batch, gradcheck
from .core import (KNOWN_KEYS, ConfigError, MaskSet, RunConfig, StabilityWarning,
                   SystemParams, apply_overrides, load_config_file, params_from_dict,
                   parse_config_text, rng_streams, validate, validate_masks,
                   validate_run_config)
from .data import (DataError, ImageDataset, SequenceDataset, batch_sampler, load_idx,
                   load_sequences, save_idx, save_sequences, synth_digits,
                   synth_timitlike)
from .dde_oracle import ContinuousTrace, OracleError, averaged, integrate
from .fast_model import (RhoCoeffs, StateTrace, TraceError, forward, forward_batch,
                         gamma, rho_coeffs, step, trace_to_csv)
from .masking import (DriveSequence, build_drive, encode, load_masks, random_mask,
                      save_masks, shuffle_mask, wrap)
from .scenarios import (CheckReport, RunReport, check, load_preset, load_task_data,
                        resolve_config, run_scenario)
from .train import (TrainSpec, TrainingError, cross_entropy, error_rate,
                    image_features, init_masks, nesterov_step, readout,
                    retrain_output, sequence_features, shift_augment, train_masks)
from .twin import (HybridResult, TwinConfig, hybrid_pipeline, twin_forward,
                   twin_forward_batch, twin_phi, validate_twin)

__version__ = "1.0.0"

__all__ = [
    "__version__",
    # loop physics and configuration
    "SystemParams", "MaskSet", "RunConfig", "ConfigError", "StabilityWarning",
    "validate", "validate_masks", "validate_run_config",
    "parse_config_text", "load_config_file", "apply_overrides",
    "params_from_dict", "rng_streams", "KNOWN_KEYS",
    # masking and encoding
    "wrap", "encode", "DriveSequence", "build_drive",
    "shuffle_mask", "random_mask", "save_masks", "load_masks",
    # fast discrete model
    "RhoCoeffs", "rho_coeffs", "gamma", "step", "forward", "forward_batch",
    "StateTrace", "TraceError", "trace_to_csv",
    # continuous-time oracle
    "ContinuousTrace", "OracleError", "integrate", "averaged",
    # gradients
    "Gradients", "GradcheckReport", "backward", "backward_batch", "gradcheck",
    # training
    "TrainSpec", "TrainingError", "cross_entropy", "nesterov_step", "shift_augment",
    "init_masks", "readout", "error_rate", "train_masks", "retrain_output",
    "image_features", "sequence_features",
    # hardware twin
    "TwinConfig", "HybridResult", "validate_twin", "twin_phi",
    "twin_forward", "twin_forward_batch", "hybrid_pipeline",
    # datasets
    "DataError", "ImageDataset", "SequenceDataset", "load_idx", "save_idx",
    "load_sequences", "save_sequences", "synth_digits", "synth_timitlike",
    "batch_sampler",
    # experiments
    "RunReport", "CheckReport", "run_scenario", "check", "resolve_config",
    "load_preset", "load_task_data",
]
