"""Input encoding: data instances -> per-masking-step drive phases.

The drive for one masking period is wrap(m0 + M @ s); whole runs concatenate
periods. The wrap folds any phase into [-pi/2, pi/2] modulo pi, which the
sin^2 nonlinearity cannot distinguish from the unwrapped value. Shuffled and
random mask variants for the control experiments live here too, as does mask
serialization.
"""

import struct
from dataclasses import dataclass

import numpy as np

from .core import ConfigError, MaskSet, SystemParams


def wrap(z):
    """Fold a phase into [-pi/2, pi/2] by adding or subtracting pi.

    z - pi * round(z / pi) with round-half-to-even; differs from z by an
    integer multiple of pi, so sin^2(wrap(z) + c) == sin^2(z + c) for any c.
    Total on finite inputs, idempotent, and branch-free on arrays.
    """
    z = np.asarray(z)
    out = z - np.pi * np.rint(z / np.pi)
    return out if out.ndim else float(out)


def encode(s, masks: MaskSet, step: int | None = None, wrapped: bool = True):
    """Drive phase(s) for one instance: wrap(m0 + M @ s).

    With step=k returns the scalar drive for masking step k (0-based);
    otherwise the full (N_m,) period. wrapped=False skips the fold (the
    pre-wrap value is linear in s).
    """
    s = np.asarray(s, dtype=np.float64)
    if s.shape != (masks.n_in,):
        raise ConfigError(
            f"instance shape {s.shape} does not match mask N_in={masks.n_in}"
        )
    if step is None:
        raw = masks.m0 + masks.M @ s
    else:
        if not 0 <= step < masks.n_m:
            raise ConfigError(f"step {step} out of range [0, {masks.n_m})")
        raw = masks.m0[step] + masks.M[step] @ s
    return wrap(raw) if wrapped else raw


@dataclass(frozen=True)
class DriveSequence:
    """Per-masking-step drive phases for a whole run.

    z: (total_steps,) wrapped phases, total_steps a multiple of N_m.
    period_index: (total_steps,) index of the data instance that produced
    each step.
    """

    z: np.ndarray
    period_index: np.ndarray
    N_m: int

    def __post_init__(self):
        if self.z.shape[0] % self.N_m != 0:
            raise ConfigError(
                f"drive length {self.z.shape[0]} is not a multiple of N_m={self.N_m}"
            )
        if self.z.shape != self.period_index.shape:
            raise ConfigError("z and period_index must have equal length")

    @property
    def n_periods(self) -> int:
        return self.z.shape[0] // self.N_m


def build_drive(instances, masks: MaskSet, repeats: int = 1) -> DriveSequence:
    """Concatenate encoded periods for a row-per-instance array.

    With repeats > 1 each instance drives `repeats` consecutive periods
    (static encoding for images); period_index still points at the
    originating instance row.
    """
    instances = np.atleast_2d(np.asarray(instances, dtype=np.float64))
    if instances.shape[1] != masks.n_in:
        raise ConfigError(
            f"instances have {instances.shape[1]} columns, masks expect {masks.n_in}"
        )
    per_period = wrap(masks.m0[None, :] + instances @ masks.M.T)  # (n, N_m)
    z = np.repeat(per_period, repeats, axis=0).reshape(-1)
    idx = np.repeat(np.arange(instances.shape[0]), repeats * masks.n_m)
    return DriveSequence(z=z, period_index=idx, N_m=masks.n_m)


def shuffle_mask(masks: MaskSet, permutation=None, rng=None) -> MaskSet:
    """Permute the rows of m0 and M identically; U and y0 pass through.

    Output weights are retrained after shuffling in every scenario, so they
    are deliberately left untouched. Provide an explicit permutation or an
    rng to draw one.
    """
    n = masks.n_m
    if permutation is None:
        if rng is None:
            raise ConfigError("shuffle_mask needs a permutation or an rng")
        permutation = rng.permutation(n)
    perm = np.asarray(permutation)
    if perm.shape != (n,) or not np.array_equal(np.sort(perm), np.arange(n)):
        raise ConfigError(f"permutation is not a bijection on 0..{n - 1}")
    return masks.replace(m0=masks.m0[perm], M=masks.M[perm])


def random_mask(n_m: int, n_in: int, n_out: int, scale: float, rng) -> MaskSet:
    """Masks with i.i.d. uniform[-scale, scale] input entries.

    U and y0 start at zero: only the readout gets trained in the random
    (reservoir-style) scenario, with the scale chosen by grid search.
    """
    if not scale > 0:
        raise ConfigError(f"scale must be positive, got {scale}")
    return MaskSet(
        m0=rng.uniform(-scale, scale, size=n_m),
        M=rng.uniform(-scale, scale, size=(n_m, n_in)),
        U=np.zeros((n_out, n_m)),
        y0=np.zeros(n_out),
    )


MASK_MAGIC = 0x4D41534B  # "MASK"


def save_masks(path, masks: MaskSet) -> None:
    """Flat binary container: LE u64 header {magic, N_m, N_in, N_out} then
    m0, M (row-major), U (row-major), y0 as LE f64."""
    with open(path, "wb") as fh:
        fh.write(struct.pack("<4Q", MASK_MAGIC, masks.n_m, masks.n_in, masks.n_out))
        for arr in (masks.m0, masks.M, masks.U, masks.y0):
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_masks(path) -> MaskSet:
    with open(path, "rb") as fh:
        header = fh.read(32)
        if len(header) < 32:
            raise ConfigError(f"{path}: truncated mask header")
        magic, n_m, n_in, n_out = struct.unpack("<4Q", header)
        if magic != MASK_MAGIC:
            raise ConfigError(f"{path}: bad magic {magic:#x}, expected {MASK_MAGIC:#x}")
        counts = (n_m, n_m * n_in, n_out * n_m, n_out)
        expected = 8 * sum(counts)
        payload = fh.read()
    if len(payload) != expected:
        raise ConfigError(
            f"{path}: expected {expected} payload bytes, found {len(payload)}"
        )
    flat = np.frombuffer(payload, dtype="<f8")
    bounds = np.cumsum((0,) + counts)
    m0, M, U, y0 = (flat[a:b] for a, b in zip(bounds[:-1], bounds[1:]))
    return MaskSet(
        m0=m0.copy(),
        M=M.reshape(n_m, n_in).copy(),
        U=U.reshape(n_out, n_m).copy(),
        y0=y0.copy(),
    )


def masks_to_csv(path, masks: MaskSet) -> None:
    """Plain-text export for inspection: one mask row per line."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# m0\n")
        fh.write(",".join(f"{v:.17g}" for v in masks.m0) + "\n")
        fh.write("# M rows\n")
        for row in masks.M:
            fh.write(",".join(f"{v:.17g}" for v in row) + "\n")
        fh.write("# U rows\n")
        for row in masks.U:
            fh.write(",".join(f"{v:.17g}" for v in row) + "\n")
        fh.write("# y0\n")
        fh.write(",".join(f"{v:.17g}" for v in masks.y0) + "\n")
