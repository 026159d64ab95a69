"""Dataset containers, IDX file I/O, and synthetic data generators.

Real MNIST files drop in through load_idx; when none are supplied the
procedural digit corpus below stands in with the same format and a
comparable 10-class difficulty. The sequence generator produces a
frame-labeled task where temporal context genuinely matters.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import gaussian_filter, map_coordinates

from .core import ConfigError

__all__ = [
    "DataError",
    "ImageDataset",
    "SequenceDataset",
    "load_idx",
    "save_idx",
    "synth_digits",
    "synth_timitlike",
    "save_sequences",
    "load_sequences",
    "batch_sampler",
]

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801
SEQUENCE_MAGIC = int.from_bytes(b"SEQD", "little")


class DataError(Exception):
    """Malformed or inconsistent dataset files."""


@dataclass(frozen=True)
class ImageDataset:
    """Flat images in [0, 1] with integer class labels."""

    images: np.ndarray  # (N, side*side) float64
    labels: np.ndarray  # (N,) int64
    split: str = ""
    n_classes: int = 10
    side: int = 28

    def __post_init__(self):
        if self.images.ndim != 2 or self.images.shape[1] != self.side * self.side:
            raise DataError(
                f"images shape {self.images.shape} != (N, {self.side * self.side})")
        if self.labels.shape != (self.images.shape[0],):
            raise DataError(
                f"{self.images.shape[0]} images but {self.labels.shape[0]} labels")
        if self.images.size:
            lo, hi = float(self.images.min()), float(self.images.max())
            if lo < 0.0 or hi > 1.0:
                raise DataError(f"pixel range [{lo}, {hi}] outside [0, 1]")
            if self.labels.min() < 0 or self.labels.max() >= self.n_classes:
                raise DataError("labels outside [0, n_classes)")

    def __len__(self) -> int:
        return self.images.shape[0]

    def subset(self, indices) -> "ImageDataset":
        indices = np.asarray(indices)
        return ImageDataset(images=self.images[indices], labels=self.labels[indices],
                            split=self.split, n_classes=self.n_classes, side=self.side)


@dataclass(frozen=True)
class SequenceDataset:
    """Frame-labeled sequences: frames[i] is (L_i, n_in), labels[i] is (L_i,)."""

    frames: list = field(default_factory=list)
    labels: list = field(default_factory=list)
    n_in: int = 0
    n_classes: int = 0

    def __post_init__(self):
        if len(self.frames) != len(self.labels):
            raise DataError(f"{len(self.frames)} frame blocks but {len(self.labels)} label blocks")
        for i, (f, l) in enumerate(zip(self.frames, self.labels)):
            if f.ndim != 2 or f.shape[1] != self.n_in:
                raise DataError(f"sequence {i} frame shape {f.shape} != (L, {self.n_in})")
            if l.shape != (f.shape[0],):
                raise DataError(f"sequence {i}: {f.shape[0]} frames but {l.shape[0]} labels")
            if not np.all(np.isfinite(f)):
                raise DataError(f"sequence {i} contains non-finite frames")
            if l.size and (l.min() < 0 or l.max() >= self.n_classes):
                raise DataError(f"sequence {i} labels outside [0, {self.n_classes})")

    def __len__(self) -> int:
        return len(self.frames)

    @property
    def n_frames(self) -> int:
        return sum(f.shape[0] for f in self.frames)

    def subset(self, indices) -> "SequenceDataset":
        indices = np.asarray(indices)
        return SequenceDataset(frames=[self.frames[i] for i in indices],
                               labels=[self.labels[i] for i in indices],
                               n_in=self.n_in, n_classes=self.n_classes)


def _read_exact(path, header_fmt):
    with open(path, "rb") as fh:
        blob = fh.read()
    header_size = struct.calcsize(header_fmt)
    if len(blob) < header_size:
        raise DataError(f"{path}: expected at least {header_size} header bytes, got {len(blob)}")
    return blob, struct.unpack(header_fmt, blob[:header_size]), header_size


def load_idx(images_path, labels_path, split: str = "") -> ImageDataset:
    """Parse a big-endian IDX image/label file pair, scaling bytes by 1/255."""
    blob, (magic, n, rows, cols), offset = _read_exact(images_path, ">4i")
    if magic != IMAGE_MAGIC:
        raise DataError(f"{images_path}: magic 0x{magic:08x} != 0x{IMAGE_MAGIC:08x}")
    expected = offset + n * rows * cols
    if len(blob) != expected:
        raise DataError(f"{images_path}: expected {expected} bytes, got {len(blob)}")
    pixels = np.frombuffer(blob, dtype=np.uint8, offset=offset)
    images = pixels.astype(np.float64).reshape(n, rows * cols) / 255.0

    lblob, (lmagic, ln), loffset = _read_exact(labels_path, ">2i")
    if lmagic != LABEL_MAGIC:
        raise DataError(f"{labels_path}: magic 0x{lmagic:08x} != 0x{LABEL_MAGIC:08x}")
    if len(lblob) != loffset + ln:
        raise DataError(f"{labels_path}: expected {loffset + ln} bytes, got {len(lblob)}")
    if ln != n:
        raise DataError(f"count mismatch: {n} images but {ln} labels")
    labels = np.frombuffer(lblob, dtype=np.uint8, offset=loffset).astype(np.int64)
    if rows != cols:
        raise DataError(f"{images_path}: non-square images {rows}x{cols}")
    return ImageDataset(images=images, labels=labels, split=split, side=rows)


def save_idx(images_path, labels_path, images, labels) -> None:
    """Write an IDX pair; float images in [0, 1] are quantized to bytes."""
    images = np.asarray(images)
    if images.ndim != 3:
        raise DataError(f"save_idx expects (N, rows, cols) images, got {images.shape}")
    if images.dtype != np.uint8:
        images = np.round(np.clip(images, 0.0, 1.0) * 255.0).astype(np.uint8)
    labels = np.asarray(labels).astype(np.uint8)
    n, rows, cols = images.shape
    if labels.shape != (n,):
        raise DataError(f"{n} images but {labels.shape} labels")
    with open(images_path, "wb") as fh:
        fh.write(struct.pack(">4i", IMAGE_MAGIC, n, rows, cols))
        fh.write(images.tobytes())
    with open(labels_path, "wb") as fh:
        fh.write(struct.pack(">2i", LABEL_MAGIC, n))
        fh.write(labels.tobytes())


def _ellipse(cx, cy, rx, ry, a0=0.0, a1=2.0 * np.pi, n=120):
    t = np.linspace(a0, a1, n)
    return np.column_stack([cx + rx * np.cos(t), cy + ry * np.sin(t)])


def _polyline(points, per_segment=40):
    pts = np.asarray(points, dtype=np.float64)
    segs = []
    for a, b in zip(pts[:-1], pts[1:]):
        t = np.linspace(0.0, 1.0, per_segment)[:, None]
        segs.append(a[None, :] * (1 - t) + b[None, :] * t)
    return np.concatenate(segs, axis=0)


# Stroke skeletons per digit class in unit coordinates, y pointing down.
# Each class carries several handwriting styles so that intra-class
# variability is structural, not only a matter of distortion strength.
_GLYPHS = {
    0: [
        [_ellipse(0.5, 0.5, 0.26, 0.36)],
        [_ellipse(0.5, 0.5, 0.19, 0.37)],
    ],
    1: [
        [_polyline([(0.4, 0.24), (0.54, 0.12), (0.54, 0.88)])],
        [_polyline([(0.5, 0.12), (0.5, 0.88)]),
         _polyline([(0.36, 0.88), (0.66, 0.88)])],
    ],
    2: [
        [_ellipse(0.5, 0.32, 0.22, 0.2, -np.pi, 0.35),
         _polyline([(0.68, 0.42), (0.3, 0.84), (0.72, 0.84)])],
        [_ellipse(0.5, 0.3, 0.2, 0.17, -np.pi, 0.5),
         _polyline([(0.66, 0.4), (0.34, 0.68), (0.28, 0.84), (0.74, 0.84)])],
    ],
    3: [
        [_ellipse(0.48, 0.32, 0.2, 0.19, -np.pi * 0.8, np.pi * 0.45),
         _ellipse(0.48, 0.67, 0.22, 0.2, -np.pi * 0.45, np.pi * 0.8)],
        [_polyline([(0.32, 0.15), (0.64, 0.15), (0.52, 0.38)]),
         _ellipse(0.48, 0.64, 0.22, 0.21, -np.pi * 0.5, np.pi * 0.8)],
    ],
    4: [
        [_polyline([(0.6, 0.12), (0.28, 0.6), (0.78, 0.6)]),
         _polyline([(0.62, 0.34), (0.62, 0.88)])],
        [_polyline([(0.5, 0.14), (0.28, 0.58), (0.82, 0.58)]),
         _polyline([(0.7, 0.2), (0.7, 0.88)])],
    ],
    5: [
        [_polyline([(0.7, 0.14), (0.36, 0.14), (0.33, 0.46)]),
         _ellipse(0.48, 0.63, 0.21, 0.2, -np.pi * 0.6, np.pi * 0.75)],
        [_polyline([(0.72, 0.12), (0.34, 0.12), (0.32, 0.42)]),
         _ellipse(0.5, 0.64, 0.23, 0.21, -np.pi * 0.75, np.pi * 0.6)],
    ],
    6: [
        [_polyline([(0.62, 0.12), (0.42, 0.38), (0.35, 0.6)]),
         _ellipse(0.5, 0.65, 0.17, 0.18)],
        [_polyline([(0.66, 0.1), (0.45, 0.42), (0.36, 0.66)]),
         _ellipse(0.52, 0.68, 0.19, 0.17)],
    ],
    7: [
        [_polyline([(0.28, 0.15), (0.72, 0.15), (0.46, 0.86)])],
        [_polyline([(0.28, 0.16), (0.72, 0.16), (0.48, 0.86)]),
         _polyline([(0.38, 0.48), (0.6, 0.48)])],
    ],
    8: [
        [_ellipse(0.5, 0.31, 0.16, 0.17), _ellipse(0.5, 0.67, 0.2, 0.19)],
        [_ellipse(0.5, 0.3, 0.13, 0.16), _ellipse(0.5, 0.68, 0.22, 0.18)],
    ],
    9: [
        [_ellipse(0.48, 0.34, 0.18, 0.18),
         _polyline([(0.66, 0.36), (0.63, 0.86)])],
        [_ellipse(0.5, 0.32, 0.19, 0.17),
         _polyline([(0.68, 0.34), (0.66, 0.7), (0.56, 0.86)])],
    ],
}


def _render_glyph(digit: int, rng, side: int) -> np.ndarray:
    angle = rng.uniform(-0.26, 0.26)
    sx, sy = rng.uniform(0.72, 1.15, size=2)
    shear = rng.uniform(-0.22, 0.22)
    tx, ty = rng.uniform(-2.5, 2.5, size=2)
    ca, sa = np.cos(angle), np.sin(angle)
    A = np.array([[ca, -sa], [sa, ca]]) @ np.array([[sx, shear * sx], [0.0, sy]])
    scale = side * 0.72

    variants = _GLYPHS[digit]
    strokes = variants[rng.integers(len(variants))]

    img = np.zeros((side, side), dtype=np.float64)
    for stroke in strokes:
        pts = (stroke - 0.5) @ A.T * scale + side / 2.0 + np.array([tx, ty])
        cols = np.clip(pts[:, 0], 0, side - 1)
        rows = np.clip(pts[:, 1], 0, side - 1)
        # bilinear splat so strokes stay smooth at sub-pixel positions
        r0, c0 = np.floor(rows).astype(int), np.floor(cols).astype(int)
        fr, fc = rows - r0, cols - c0
        r1 = np.minimum(r0 + 1, side - 1)
        c1 = np.minimum(c0 + 1, side - 1)
        np.add.at(img, (r0, c0), (1 - fr) * (1 - fc))
        np.add.at(img, (r0, c1), (1 - fr) * fc)
        np.add.at(img, (r1, c0), fr * (1 - fc))
        np.add.at(img, (r1, c1), fr * fc)

    img = gaussian_filter(img, sigma=rng.uniform(0.6, 1.1))
    peak = img.max()
    if peak > 0:
        img = np.tanh(2.5 * img / peak)

    # smooth random displacement field mimics handwriting variance
    alpha = rng.uniform(2.0, 4.5)
    dr = gaussian_filter(rng.uniform(-1.0, 1.0, (side, side)), 3.5) * alpha
    dc = gaussian_filter(rng.uniform(-1.0, 1.0, (side, side)), 3.5) * alpha
    grid_r, grid_c = np.meshgrid(np.arange(side), np.arange(side), indexing="ij")
    img = map_coordinates(img, [grid_r + dr, grid_c + dc], order=1, mode="constant")

    img += rng.normal(0.0, 0.025, (side, side))
    return np.clip(img / max(img.max(), 1e-9), 0.0, 1.0)


def synth_digits(n: int, seed: int, side: int = 28):
    """Procedural 10-class digit corpus: (images (n, side, side), labels)."""
    if n <= 0:
        raise ConfigError(f"n must be positive, got {n}")
    rng = np.random.default_rng(seed)
    labels = np.arange(n, dtype=np.int64) % 10
    rng.shuffle(labels)
    images = np.empty((n, side, side), dtype=np.float64)
    for i in range(n):
        images[i] = _render_glyph(int(labels[i]), rng, side)
    return images, labels


def synth_timitlike(n_sequences: int, length: int, n_in: int = 39,
                    n_classes: int = 6, seed: int = 0,
                    class_seed: int = 0) -> SequenceDataset:
    """Frame-labeled sequences where the label's evidence is temporally smeared.

    A sticky latent Markov chain picks the class; each frame mixes the
    mean vectors of the current and two previous latents plus AR(1)
    noise, so single-frame classification is ambiguous while short
    context resolves it. When n_in is a multiple of 3, first and second
    temporal differences are appended as extra channels.

    class_seed fixes the class mean vectors separately from seed, so
    train and test splits drawn with different seeds describe the same
    classes.
    """
    if n_sequences <= 0 or length <= 0 or n_classes <= 0 or n_in <= 0:
        raise ConfigError("n_sequences, length, n_in, n_classes must be positive")
    base = n_in // 3 if n_in % 3 == 0 else n_in
    rng = np.random.default_rng(seed)
    means = np.random.default_rng(
        np.random.SeedSequence((class_seed, n_classes, base))).normal(
            0.0, 1.0, (n_classes, base))
    p_stay = 0.85
    mix = np.array([0.45, 0.35, 0.2])

    frames, labels = [], []
    for _ in range(n_sequences):
        latent = np.empty(length, dtype=np.int64)
        latent[0] = rng.integers(n_classes)
        for t in range(1, length):
            if rng.random() < p_stay or n_classes == 1:
                latent[t] = latent[t - 1]
            else:
                step = rng.integers(1, n_classes)
                latent[t] = (latent[t - 1] + step) % n_classes
        padded = np.concatenate([[latent[0], latent[0]], latent])
        emission = (mix[0] * means[padded[2:]] + mix[1] * means[padded[1:-1]]
                    + mix[2] * means[padded[:-2]])
        noise = np.empty((length, base))
        noise[0] = rng.normal(0.0, 0.5, base)
        for t in range(1, length):
            noise[t] = 0.6 * noise[t - 1] + rng.normal(0.0, 0.5, base)
        x = emission + noise
        if base != n_in:
            d1 = np.empty_like(x)
            d1[1:-1] = (x[2:] - x[:-2]) / 2.0
            d1[0], d1[-1] = d1[1], d1[-2]
            d2 = np.empty_like(x)
            d2[1:-1] = (d1[2:] - d1[:-2]) / 2.0
            d2[0], d2[-1] = d2[1], d2[-2]
            x = np.concatenate([x, d1, d2], axis=1)
        frames.append(x)
        labels.append(latent)
    return SequenceDataset(frames=frames, labels=labels, n_in=n_in, n_classes=n_classes)


def save_sequences(path, dataset: SequenceDataset) -> None:
    """Binary container: LE u64 header + length-prefixed f64/i32 blocks."""
    with open(path, "wb") as fh:
        fh.write(struct.pack("<4Q", SEQUENCE_MAGIC, len(dataset),
                             dataset.n_in, dataset.n_classes))
        for f, l in zip(dataset.frames, dataset.labels):
            fh.write(struct.pack("<Q", f.shape[0]))
            fh.write(np.ascontiguousarray(f, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(l, dtype="<i4").tobytes())


def load_sequences(path) -> SequenceDataset:
    blob, (magic, n_seq, n_in, n_classes), offset = _read_exact(path, "<4Q")
    if magic != SEQUENCE_MAGIC:
        raise DataError(f"{path}: magic 0x{magic:016x} != 0x{SEQUENCE_MAGIC:016x}")
    frames, labels = [], []
    pos = offset
    for i in range(n_seq):
        if pos + 8 > len(blob):
            raise DataError(f"{path}: truncated at sequence {i} length field")
        (length,) = struct.unpack_from("<Q", blob, pos)
        pos += 8
        need = length * n_in * 8 + length * 4
        if pos + need > len(blob):
            raise DataError(
                f"{path}: sequence {i} needs {need} bytes, only {len(blob) - pos} left")
        f = np.frombuffer(blob, dtype="<f8", count=length * n_in, offset=pos)
        pos += length * n_in * 8
        l = np.frombuffer(blob, dtype="<i4", count=length, offset=pos)
        pos += length * 4
        frames.append(f.reshape(length, n_in).copy())
        labels.append(l.astype(np.int64))
    if pos != len(blob):
        raise DataError(f"{path}: {len(blob) - pos} trailing bytes")
    return SequenceDataset(frames=frames, labels=labels, n_in=int(n_in),
                           n_classes=int(n_classes))


def batch_sampler(dataset, batch_size: int, rng) -> np.ndarray:
    """Uniform i.i.d. indices with replacement; deterministic under the rng."""
    n = dataset if isinstance(dataset, int) else len(dataset)
    if n == 0:
        raise DataError("empty dataset")
    if batch_size > n:
        raise ConfigError(f"batch_size {batch_size} exceeds dataset size {n}")
    if batch_size <= 0:
        raise ConfigError(f"batch_size must be positive, got {batch_size}")
    return rng.integers(0, n, size=batch_size)
