"""Shared domain types, parameter validation, and run configuration.

Everything downstream (masking, fast model, oracle, training) consumes the
checked types defined here. All times are in microseconds, phases in radians,
states dimensionless. Instances are immutable after construction and safe to
share across workers.
"""

import dataclasses
import hashlib
import math
import warnings
from dataclasses import dataclass

import numpy as np


class ConfigError(Exception):
    """Invalid parameter value or malformed configuration input."""


class StabilityWarning(UserWarning):
    """Parameters put the loop outside the guaranteed-stable regime."""


@dataclass(frozen=True)
class SystemParams:
    """Physical constants of the delay loop plus masking geometry.

    T: low-pass time constant (us). beta: loop gain. D: delay (us).
    phi: offset phase (rad). P: masking period (us). N_m: masking steps
    per period. P_m: step duration, always P / N_m (filled by validate).
    """

    T: float = 0.241
    beta: float = 0.8
    D: float = 20.82
    phi: float = math.pi / 4
    P: float = 20.82
    N_m: int = 400
    P_m: float = 0.0

    def with_pm(self) -> "SystemParams":
        return dataclasses.replace(self, P_m=self.P / self.N_m)


def validate(params: SystemParams) -> SystemParams:
    """Check invariants and return params with P_m computed.

    Idempotent: validate(validate(p)) == validate(p). Raises ConfigError
    naming the failed invariant; warns (not errors) when beta >= 1 in the
    phi = pi/4 regime, where the free-running loop self-oscillates.
    """
    if not params.T > 0:
        raise ConfigError(f"T must be positive, got {params.T}")
    if not params.D > 0:
        raise ConfigError(f"D must be positive, got {params.D}")
    if not params.P > 0:
        raise ConfigError(f"P must be positive, got {params.P}")
    if params.N_m < 1:
        raise ConfigError(f"N_m must be >= 1, got {params.N_m}")
    if params.P != params.D:
        raise ConfigError(
            f"P must equal D (got P={params.P}, D={params.D}); "
            "unequal masking period and delay is unsupported"
        )
    if not math.isfinite(params.beta) or not math.isfinite(params.phi):
        raise ConfigError("beta and phi must be finite")
    if params.beta >= 1.0 and abs(abs(params.phi) - math.pi / 4) < 1e-9:
        warnings.warn(
            f"beta={params.beta} >= 1 at phi=pi/4: free-running loop will "
            "self-oscillate; state no longer decays to zero",
            StabilityWarning,
            stacklevel=2,
        )
    return params.with_pm()


@dataclass(frozen=True)
class MaskSet:
    """Trainable parameters: bias mask, input mask, output mask, output bias.

    m0: (N_m,), M: (N_m, N_in), U: (N_out, N_m), y0: (N_out,).
    Arrays are locked read-only on construction; updates build new sets.
    """

    m0: np.ndarray
    M: np.ndarray
    U: np.ndarray
    y0: np.ndarray

    def __post_init__(self):
        for name in ("m0", "M", "U", "y0"):
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            arr = arr.copy() if not arr.flags.owndata or arr.flags.writeable else arr
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)

    @property
    def n_m(self) -> int:
        return self.m0.shape[0]

    @property
    def n_in(self) -> int:
        return self.M.shape[1]

    @property
    def n_out(self) -> int:
        return self.y0.shape[0]

    def replace(self, **arrays) -> "MaskSet":
        return dataclasses.replace(self, **arrays)

    def content_hash(self) -> str:
        h = hashlib.sha256()
        for arr in (self.m0, self.M, self.U, self.y0):
            h.update(np.ascontiguousarray(arr, dtype="<f8").tobytes())
        return h.hexdigest()


def validate_masks(masks: MaskSet, params: SystemParams, n_in: int | None = None,
                   n_out: int | None = None) -> MaskSet:
    """Check mask shapes against the system geometry and finiteness."""
    if masks.m0.ndim != 1 or masks.M.ndim != 2 or masks.U.ndim != 2 or masks.y0.ndim != 1:
        raise ConfigError("mask arrays have wrong rank")
    if masks.m0.shape[0] != params.N_m or masks.M.shape[0] != params.N_m:
        raise ConfigError(
            f"m0/M rows ({masks.m0.shape[0]}/{masks.M.shape[0]}) "
            f"must match N_m={params.N_m}"
        )
    if masks.U.shape[1] != params.N_m:
        raise ConfigError(f"U columns ({masks.U.shape[1]}) must match N_m={params.N_m}")
    if masks.U.shape[0] != masks.y0.shape[0]:
        raise ConfigError("U rows must match y0 length")
    if n_in is not None and masks.n_in != n_in:
        raise ConfigError(f"M columns ({masks.n_in}) must match N_in={n_in}")
    if n_out is not None and masks.n_out != n_out:
        raise ConfigError(f"y0 length ({masks.n_out}) must match N_out={n_out}")
    for name in ("m0", "M", "U", "y0"):
        if not np.all(np.isfinite(getattr(masks, name))):
            raise ConfigError(f"mask array {name} contains non-finite entries")
    return masks


SCENARIOS = ("optimized", "shuffled", "random", "twin")
PRECISIONS = {"float64": np.float64, "float32": np.float32}


@dataclass(frozen=True)
class RunConfig:
    """Everything a reproducible run needs besides the dataset itself."""

    params: SystemParams
    seed: int = 0
    precision: str = "float64"
    iterations: int = 1000
    batch_size: int = 100
    learning_rate: float = 0.01
    momentum: float = 0.9
    scenario: str = "optimized"

    @property
    def dtype(self):
        return PRECISIONS[self.precision]


def validate_run_config(config: RunConfig) -> RunConfig:
    config = dataclasses.replace(config, params=validate(config.params))
    if config.precision not in PRECISIONS:
        raise ConfigError(f"precision must be one of {sorted(PRECISIONS)}")
    if not config.learning_rate > 0:
        raise ConfigError(f"learning_rate must be positive, got {config.learning_rate}")
    if not 0.0 <= config.momentum < 1.0:
        raise ConfigError(f"momentum must lie in [0, 1), got {config.momentum}")
    if config.iterations < 1:
        raise ConfigError(f"iterations must be >= 1, got {config.iterations}")
    if config.scenario not in SCENARIOS:
        raise ConfigError(f"scenario must be one of {SCENARIOS}")
    return config


# Plain-text configuration: one "key = value" per line, '#' starts a comment.
# Unknown keys are an error so that typos fail fast.

_INT_KEYS = {
    "N_m", "seed", "iterations", "batch_size", "workers", "repeats",
    "n_train", "n_test", "n_val", "n_classes", "n_sequences", "seq_length",
    "n_in", "retrain_iterations", "retrain_batch_size",
    "phi_drift_period_samples", "checkpoint_every", "twin_seed", "log_every",
    "select_iterations",
}
_FLOAT_KEYS = {
    "T", "beta", "D", "phi", "P", "learning_rate", "momentum",
    "retrain_learning_rate", "delta_beta", "phi_drift_amplitude",
    "noise_sigma", "mask_init_scale", "val_fraction",
}
_STR_KEYS = {"precision", "scenario", "task", "mode", "idx_images", "idx_labels",
             "idx_test_images", "idx_test_labels", "data_dir", "masks_path"}
_BOOL_KEYS = {"augment"}
_LIST_KEYS = {"scale_grid"}

KNOWN_KEYS = _INT_KEYS | _FLOAT_KEYS | _STR_KEYS | _BOOL_KEYS | _LIST_KEYS


def _coerce(key: str, raw: str):
    try:
        if key in _INT_KEYS:
            return int(raw)
        if key in _FLOAT_KEYS:
            if raw in ("pi/4", "pi/2", "pi"):
                return {"pi/4": math.pi / 4, "pi/2": math.pi / 2, "pi": math.pi}[raw]
            return float(raw)
        if key in _BOOL_KEYS:
            if raw.lower() in ("true", "1", "yes", "on"):
                return True
            if raw.lower() in ("false", "0", "no", "off"):
                return False
            raise ValueError(raw)
        if key in _LIST_KEYS:
            return tuple(float(x) for x in raw.split(",") if x.strip())
        return raw
    except ValueError as exc:
        raise ConfigError(f"bad value for {key!r}: {raw!r}") from exc


def parse_config_text(text: str) -> dict:
    """Parse 'key = value' lines into a typed dict; unknown keys error."""
    out: dict = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, _, raw = stripped.partition("=")
        key, raw = key.strip(), raw.strip()
        if key not in KNOWN_KEYS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        out[key] = _coerce(key, raw)
    return out


def load_config_file(path) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config_text(fh.read())


def apply_overrides(config: dict, overrides: dict) -> dict:
    """Merge CLI '--key value' overrides (strings) over a parsed config."""
    merged = dict(config)
    for key, raw in overrides.items():
        if key not in KNOWN_KEYS:
            raise ConfigError(f"unknown override key {key!r}")
        merged[key] = _coerce(key, raw) if isinstance(raw, str) else raw
    return merged


def params_from_dict(cfg: dict) -> SystemParams:
    defaults = SystemParams()
    fields = {f: cfg[f] for f in ("T", "beta", "D", "phi", "P", "N_m") if f in cfg}
    if "D" in fields and "P" not in fields:
        fields["P"] = fields["D"]
    return validate(dataclasses.replace(defaults, **fields))


def run_config_from_dict(cfg: dict) -> RunConfig:
    params = params_from_dict(cfg)
    kwargs = {k: cfg[k] for k in ("seed", "precision", "iterations", "batch_size",
                                  "learning_rate", "momentum", "scenario") if k in cfg}
    return validate_run_config(RunConfig(params=params, **kwargs))


def rng_streams(seed: int, n: int) -> list:
    """n independent generators derived from one 64-bit seed."""
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n)]
