"""Dataset ingestion and synthesis.

Three sources feed the clustering pipeline, all normalised to the same
container: big-endian IDX image/label pairs, directories of binary PGM
images (one subdirectory per class), and synthetic unions of random linear
subspaces. Images are stored as float arrays in ``[0, 1]`` with shape
``(n, channels, height, width)``.
"""

from __future__ import annotations

import json
import struct
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, FormatError

IDX_IMAGES_MAGIC = 2051
IDX_LABELS_MAGIC = 2049


@dataclass
class Dataset:
    """A bundle of images plus optional labels and pre-normalisation data.

    ``raw_matrix`` keeps the column-major sample matrix exactly as produced
    by a generator (before any min-max rescaling), which closed-form
    baselines prefer to work on.
    """

    images: np.ndarray
    labels: np.ndarray | None = None
    name: str = "unnamed"
    provenance: dict = field(default_factory=dict)
    raw_matrix: np.ndarray | None = None

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=float)
        if self.images.ndim != 4:
            raise ConfigurationError(
                f"images must have shape (n, channels, height, width); got {self.images.shape}"
            )
        if self.images.size and (self.images.min() < 0.0 or self.images.max() > 1.0):
            raise ConfigurationError("image values must lie in [0, 1]")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=int)
            if self.labels.shape != (self.images.shape[0],):
                raise ConfigurationError(
                    f"need one label per image; got {self.labels.shape} labels "
                    f"for {self.images.shape[0]} images"
                )
            if self.labels.size and self.labels.min() < 0:
                raise ConfigurationError("labels must be non-negative integers")
        if self.raw_matrix is not None:
            self.raw_matrix = np.asarray(self.raw_matrix, dtype=float)
            if self.raw_matrix.ndim != 2 or self.raw_matrix.shape[1] != self.images.shape[0]:
                raise ConfigurationError(
                    f"raw_matrix must be (features, {self.images.shape[0]}); "
                    f"got {self.raw_matrix.shape}"
                )

    @property
    def n_images(self) -> int:
        return self.images.shape[0]

    @property
    def n_classes(self) -> int:
        if self.labels is None:
            raise ConfigurationError(f"dataset {self.name!r} has no labels")
        return int(self.labels.max()) + 1 if self.labels.size else 0

    def flattened_columns(self) -> np.ndarray:
        """Each image flattened into one column: shape (features, n_images)."""
        return self.images.reshape(self.n_images, -1).T


# --- IDX -------------------------------------------------------------------------


def _read_exact(path: Path, data: bytes, offset: int, count: int) -> bytes:
    if len(data) < offset + count:
        raise FormatError(
            f"{path}: truncated file; expected at least {offset + count} bytes, "
            f"found {len(data)}"
        )
    return data[offset : offset + count]


def load_idx(images_path, labels_path, name: str = "idx") -> Dataset:
    """Parse a big-endian IDX image file and its companion label file."""
    images_path, labels_path = Path(images_path), Path(labels_path)

    raw = images_path.read_bytes()
    magic, n, h, w = struct.unpack(">IIII", _read_exact(images_path, raw, 0, 16))
    if magic != IDX_IMAGES_MAGIC:
        raise FormatError(
            f"{images_path}: bad magic {magic}; expected {IDX_IMAGES_MAGIC} for an IDX image file"
        )
    pixels = np.frombuffer(_read_exact(images_path, raw, 16, n * h * w), dtype=np.uint8)

    raw = labels_path.read_bytes()
    magic, n_labels = struct.unpack(">II", _read_exact(labels_path, raw, 0, 8))
    if magic != IDX_LABELS_MAGIC:
        raise FormatError(
            f"{labels_path}: bad magic {magic}; expected {IDX_LABELS_MAGIC} for an IDX label file"
        )
    labels = np.frombuffer(_read_exact(labels_path, raw, 8, n_labels), dtype=np.uint8)

    if n != n_labels:
        raise FormatError(
            f"image count {n} in {images_path} does not match label count {n_labels} in {labels_path}"
        )
    images = pixels.reshape(n, 1, h, w).astype(float) / 255.0
    return Dataset(images=images, labels=labels.astype(int), name=name,
                   provenance={"images_path": str(images_path), "labels_path": str(labels_path)})


def subset_select(dataset: Dataset, per_class: int, classes=None, seed: int = 0) -> Dataset:
    """Draw a balanced, seeded subset with ``per_class`` images per class.

    Selected classes are relabelled to 0..k-1 in their original order.
    """
    if dataset.labels is None:
        raise ConfigurationError("subset_select needs a labelled dataset")
    if per_class < 1:
        raise ConfigurationError(f"per_class must be positive; got {per_class}")
    if classes is None:
        classes = np.unique(dataset.labels).tolist()
    classes = sorted(int(c) for c in classes)

    rng = np.random.default_rng(seed)
    chosen = []
    for cls in classes:
        pool = np.flatnonzero(dataset.labels == cls)
        if pool.size < per_class:
            raise ConfigurationError(
                f"class {cls} has only {pool.size} images; need {per_class}"
            )
        chosen.append(np.sort(rng.permutation(pool)[:per_class]))

    labels = np.repeat(np.arange(len(classes)), per_class)
    index = np.concatenate(chosen)
    raw = dataset.raw_matrix[:, index] if dataset.raw_matrix is not None else None
    return Dataset(images=dataset.images[index], labels=labels,
                   name=f"{dataset.name}[{per_class}/class]",
                   provenance={**dataset.provenance, "subset_seed": seed,
                               "subset_classes": classes, "per_class": per_class},
                   raw_matrix=raw)


# --- PGM -------------------------------------------------------------------------


def _pgm_tokens(data: bytes, count: int):
    """Yield the first header tokens of a PGM, skipping whitespace and comments."""
    tokens, pos = [], 0
    while len(tokens) < count:
        if pos >= len(data):
            raise FormatError("truncated PGM header")
        ch = data[pos : pos + 1]
        if ch.isspace():
            pos += 1
        elif ch == b"#":
            pos = data.index(b"\n", pos) + 1
        else:
            end = pos
            while end < len(data) and not data[end : end + 1].isspace():
                end += 1
            tokens.append(data[pos:end])
            pos = end
    return tokens, pos + 1  # payload starts after single whitespace byte


def read_pgm(path) -> np.ndarray:
    """Read a binary (P5) PGM into a float image scaled to [0, 1]."""
    path = Path(path)
    data = path.read_bytes()
    (magic, width, height, maxval), payload_start = _pgm_tokens(data, 4)
    if magic != b"P5":
        raise FormatError(f"{path}: not a binary PGM (magic {magic!r}, expected b'P5')")
    width, height, maxval = int(width), int(height), int(maxval)
    if not 0 < maxval <= 255:
        raise FormatError(f"{path}: unsupported maxval {maxval}; only single-byte PGMs are read")
    payload = _read_exact(path, data, payload_start, width * height)
    pixels = np.frombuffer(payload, dtype=np.uint8).reshape(height, width)
    return pixels.astype(float) / maxval


def box_downsample(image: np.ndarray, target_hw) -> np.ndarray:
    """Area-average an image down to ``target_hw`` (exact box filter).

    Each output pixel is the mean of the source area it covers, so constant
    images stay constant and total intensity is preserved.
    """
    image = np.asarray(image, dtype=float)
    th, tw = target_hw
    h, w = image.shape
    if th > h or tw > w:
        raise ConfigurationError(f"cannot box-downsample {h}x{w} up to {th}x{tw}")
    return _average_matrix(h, th) @ image @ _average_matrix(w, tw).T


def _average_matrix(source: int, target: int) -> np.ndarray:
    """Rows average disjoint source intervals of length source/target."""
    m = np.zeros((target, source))
    edges = np.arange(target + 1) * (source / target)
    for i in range(target):
        lo, hi = edges[i], edges[i + 1]
        for j in range(int(np.floor(lo)), int(np.ceil(hi))):
            m[i, j] = min(hi, j + 1.0) - max(lo, float(j))
    return m * (target / source)


def load_image_dir(root, target_hw, name: str | None = None) -> Dataset:
    """Load PGM images from per-class subdirectories of ``root``.

    Subdirectory names sorted lexicographically define the class labels.
    Files that are not readable single-byte PGMs are skipped with a warning.
    """
    root = Path(root)
    class_dirs = sorted(p for p in root.iterdir() if p.is_dir())
    if not class_dirs:
        raise ConfigurationError(f"{root} contains no class subdirectories")

    images, labels = [], []
    for label, class_dir in enumerate(class_dirs):
        loaded = 0
        for file in sorted(p for p in class_dir.iterdir() if p.is_file()):
            try:
                image = read_pgm(file)
            except (FormatError, ValueError):
                warnings.warn(f"skipping unreadable image file {file}", stacklevel=2)
                continue
            if image.shape != tuple(target_hw):
                image = box_downsample(image, target_hw)
            images.append(np.clip(image, 0.0, 1.0))
            labels.append(label)
            loaded += 1
        if loaded == 0:
            raise ConfigurationError(f"class directory {class_dir} holds no readable PGM images")

    stack = np.stack(images)[:, None, :, :]
    return Dataset(images=stack, labels=np.array(labels), name=name or root.name,
                   provenance={"root": str(root), "classes": [d.name for d in class_dirs],
                               "target_hw": list(target_hw)})


# --- synthetic union of subspaces ---------------------------------------------------


def synth_subspaces(n_subspaces: int, intrinsic_dim: int, image_hw, per_class: int,
                    noise_sigma: float, seed: int) -> Dataset:
    """Sample points from a union of random linear subspaces, shaped as images.

    Each subspace gets an orthonormal basis (QR of a Gaussian draw) and
    ``per_class`` Gaussian coefficient vectors; isotropic noise of scale
    ``noise_sigma`` is added afterwards. The noisy sample matrix is kept in
    ``raw_matrix``; images are a min-max rescale of it into [0, 1], with the
    affine map recorded in ``provenance``.
    """
    h, w = image_hw
    ambient = h * w
    if n_subspaces < 1 or per_class < 1:
        raise ConfigurationError("need at least one subspace and one sample per subspace")
    if not 0 < intrinsic_dim < ambient:
        raise ConfigurationError(
            f"intrinsic_dim must be in (0, {ambient}) for {h}x{w} images; got {intrinsic_dim}"
        )
    if noise_sigma < 0:
        raise ConfigurationError(f"noise_sigma must be non-negative; got {noise_sigma}")

    rng = np.random.default_rng(seed)
    columns = []
    for _ in range(n_subspaces):
        basis, _ = np.linalg.qr(rng.standard_normal((ambient, intrinsic_dim)))
        coefficients = rng.standard_normal((intrinsic_dim, per_class))
        columns.append(basis @ coefficients)
    raw = np.concatenate(columns, axis=1)
    if noise_sigma > 0:
        raw = raw + noise_sigma * rng.standard_normal(raw.shape)

    offset = float(raw.min())
    span = float(raw.max() - raw.min()) or 1.0
    images = ((raw - offset) / span).T.reshape(-1, 1, h, w)
    labels = np.repeat(np.arange(n_subspaces), per_class)
    provenance = {"seed": seed, "n_subspaces": n_subspaces, "intrinsic_dim": intrinsic_dim,
                  "per_class": per_class, "noise_sigma": noise_sigma,
                  "rescale_offset": offset, "rescale_span": span}
    return Dataset(images=images, labels=labels, name="synthetic-subspaces",
                   provenance=provenance, raw_matrix=raw)


# --- persistence ---------------------------------------------------------------------


def save_dataset_npz(path, dataset: Dataset) -> None:
    payload = {"images": dataset.images}
    if dataset.labels is not None:
        payload["labels"] = dataset.labels
    if dataset.raw_matrix is not None:
        payload["raw_matrix"] = dataset.raw_matrix
    meta = json.dumps({"name": dataset.name, "provenance": dataset.provenance}, sort_keys=True)
    payload["meta_json"] = np.frombuffer(meta.encode(), dtype=np.uint8)
    np.savez(path, **payload)


def load_dataset_npz(path) -> Dataset:
    with np.load(path) as archive:
        meta = json.loads(archive["meta_json"].tobytes().decode())
        return Dataset(
            images=archive["images"],
            labels=archive["labels"] if "labels" in archive else None,
            raw_matrix=archive["raw_matrix"] if "raw_matrix" in archive else None,
            name=meta["name"],
            provenance=meta["provenance"],
        )
