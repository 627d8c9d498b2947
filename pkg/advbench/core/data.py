"""
MNIST IDX ingestion and attack-candidate selection.

IDX files are big-endian: a u32 magic (0x00000803 for images, 0x00000801
for labels), u32 counts/dimensions, then unsigned bytes row-major. Pixels
map to [0, 1] as p / 255.0.
"""

import gzip
import hashlib
import logging
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, List, Optional, Sequence, Union

import numpy as np

from ..errors import CandidateError, ConfigError, FormatError

logger = logging.getLogger(__name__)

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801

# Shuffles, initializations and random starts all draw from this generator.
PRNG_ALGORITHM = "numpy.PCG64"

MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}

PathLike = Union[str, Path]


def make_rng(seed: int) -> np.random.Generator:
    """Seeded generator used everywhere randomness is needed."""
    return np.random.Generator(np.random.PCG64(seed))


@dataclass(frozen=True)
class LabeledImage:
    """
    One example.

    Attributes:
        x: (H, W, C) pixels in [0, 1]
        y: class index
        index: position in the raw dataset file
    """
    x: np.ndarray
    y: int
    index: int


class Dataset:
    """
    Immutable, ordered collection of labeled images sharing one shape.

    Images are stored as a single (n, H, W, C) float64 array; iteration and
    indexing hand out LabeledImage views.
    """

    def __init__(
        self,
        images: np.ndarray,
        labels: Sequence[int],
        split: str = "test",
        indices: Optional[Sequence[int]] = None,
    ):
        images = np.array(images, dtype=np.float64)
        labels = np.array(labels, dtype=np.int64).reshape(-1)
        if images.ndim != 4:
            raise ConfigError(f"Dataset images must be (n, H, W, C), got {images.shape}")
        if images.shape[0] != labels.shape[0]:
            raise ConfigError(
                f"Dataset has {images.shape[0]} images but {labels.shape[0]} labels"
            )
        if images.size and (images.min() < 0.0 or images.max() > 1.0):
            raise ConfigError("Dataset pixels must lie in [0, 1]")
        if labels.size and labels.min() < 0:
            raise ConfigError("Dataset labels must be non-negative")

        if indices is None:
            indices = np.arange(labels.shape[0])
        indices = np.array(indices, dtype=np.int64).reshape(-1)

        for array in (images, labels, indices):
            array.setflags(write=False)
        self.images = images
        self.labels = labels
        self.indices = indices
        self.split = split

    @classmethod
    def from_examples(cls, examples: Sequence[LabeledImage], split: str = "test") -> "Dataset":
        if not examples:
            raise ConfigError("Cannot build a dataset from zero examples")
        return cls(
            np.stack([e.x for e in examples]),
            [e.y for e in examples],
            split=split,
            indices=[e.index for e in examples],
        )

    def __len__(self) -> int:
        return int(self.labels.shape[0])

    def __getitem__(self, i: int) -> LabeledImage:
        return LabeledImage(self.images[i], int(self.labels[i]), int(self.indices[i]))

    def __iter__(self) -> Iterator[LabeledImage]:
        for i in range(len(self)):
            yield self[i]

    @property
    def image_shape(self):
        return self.images.shape[1:]

    def subset(self, positions: Sequence[int]) -> "Dataset":
        positions = np.asarray(positions, dtype=np.int64)
        return Dataset(
            self.images[positions],
            self.labels[positions],
            split=self.split,
            indices=self.indices[positions],
        )

    def take(self, n: int) -> "Dataset":
        return self.subset(np.arange(min(n, len(self))))

    def digest(self) -> str:
        """Content hash over images, labels and source indices."""
        h = hashlib.sha256()
        for array in (self.images, self.labels, self.indices):
            h.update(np.ascontiguousarray(array).tobytes())
        return h.hexdigest()[:16]

    def __repr__(self) -> str:
        return f"Dataset(split='{self.split}', n={len(self)}, shape={self.image_shape})"


def _read_bytes(path: PathLike) -> bytes:
    path = Path(path)
    if path.suffix == ".gz":
        with gzip.open(path, "rb") as f:
            return f.read()
    return path.read_bytes()


def _parse_header(data: bytes, fields: int, magic: int, what: str) -> tuple:
    size = 4 * fields
    if len(data) < size:
        raise FormatError(f"Truncated {what} header", len(data))
    values = struct.unpack(f">{fields}I", data[:size])
    if values[0] != magic:
        raise FormatError(
            f"Wrong {what} magic 0x{values[0]:08x}, expected 0x{magic:08x}", 0
        )
    return values[1:]


def _parse_body(data: bytes, offset: int, expected: int, what: str) -> np.ndarray:
    available = len(data) - offset
    if available < expected:
        raise FormatError(
            f"Truncated {what}: expected {expected} bytes, found {available}", len(data)
        )
    if available > expected:
        raise FormatError(f"{available - expected} trailing bytes after {what}", offset + expected)
    return np.frombuffer(data, dtype=np.uint8, count=expected, offset=offset)


def load_idx(images_path: PathLike, labels_path: PathLike, split: str = "train") -> Dataset:
    """
    Parse an IDX image file and its label file into a Dataset.

    Raises:
        FormatError: On wrong magic, truncation or an image/label count mismatch
    """
    image_data = _read_bytes(images_path)
    count, rows, cols = _parse_header(image_data, 4, IMAGE_MAGIC, "image file")
    pixels = _parse_body(image_data, 16, count * rows * cols, "image data")

    label_data = _read_bytes(labels_path)
    (label_count,) = _parse_header(label_data, 2, LABEL_MAGIC, "label file")
    if label_count != count:
        raise FormatError(
            f"Image file holds {count} images but label file holds {label_count} labels", 4
        )
    labels = _parse_body(label_data, 8, label_count, "label data")

    images = pixels.reshape(count, rows, cols, 1).astype(np.float64) / 255.0
    logger.info(f"Loaded {count} {rows}x{cols} images from {images_path}")
    return Dataset(images, labels.astype(np.int64), split=split)


def find_mnist_files(directory: PathLike, split: str) -> List[Path]:
    """
    Locate the image and label files of a split, raw or gzipped.

    Raises:
        ConfigError: If the split is unknown or a file is missing
    """
    if split not in MNIST_FILES:
        raise ConfigError(f"Unknown split '{split}', expected one of {sorted(MNIST_FILES)}")
    directory = Path(directory)
    found = []
    for stem in MNIST_FILES[split]:
        candidates = [directory / stem, directory / f"{stem}.gz"]
        match = next((c for c in candidates if c.is_file()), None)
        if match is None:
            raise ConfigError(f"MNIST file '{stem}' not found in {directory}")
        found.append(match)
    return found


def load_mnist_dir(directory: PathLike, split: str) -> Dataset:
    """Load the train or test split from a directory holding the standard MNIST files."""
    images_path, labels_path = find_mnist_files(directory, split)
    return load_idx(images_path, labels_path, split=split)


def correctly_classified(model, dataset: Dataset, batch_size: int = 500) -> np.ndarray:
    """Boolean mask of the examples model labels correctly (argmax, lowest index on ties)."""
    correct = np.zeros(len(dataset), dtype=bool)
    for start in range(0, len(dataset), batch_size):
        stop = start + batch_size
        logits = model.logits(dataset.images[start:stop])
        correct[start:stop] = logits.argmax(axis=1) == dataset.labels[start:stop]
    return correct


def select_candidates(models: Sequence, dataset: Dataset, n: int, seed: int) -> Dataset:
    """
    Pick n examples every model classifies correctly.

    Qualifying examples are taken in a seed-shuffled order, so the result
    does not depend on the order the models are given in.

    Raises:
        ConfigError: If n exceeds the dataset size
        CandidateError: If fewer than n examples qualify
    """
    if n < 1 or n > len(dataset):
        raise ConfigError(f"Candidate count n={n} must be in [1, {len(dataset)}]")

    qualifies = np.ones(len(dataset), dtype=bool)
    for model in models:
        qualifies &= correctly_classified(model, dataset)

    order = make_rng(seed).permutation(len(dataset))
    chosen = order[qualifies[order]][:n]
    available = int(qualifies.sum())
    if chosen.shape[0] < n:
        raise CandidateError(n, available)
    logger.info(f"Selected {n} candidates from {available} qualifying of {len(dataset)}")
    return dataset.subset(chosen)
