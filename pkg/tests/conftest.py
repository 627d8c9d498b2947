"""Shared pytest fixtures for the advbench test suite."""

import gzip
import struct
from pathlib import Path

import numpy as np
import pytest

from advbench.core.autodiff import (
    Conv2D,
    Dense,
    Flatten,
    MaxPool2x2,
    Network,
    ReLU,
    init_params,
)
from advbench.core.data import IMAGE_MAGIC, LABEL_MAGIC, MNIST_FILES, make_rng
from advbench.core.models import Model, ModelParams, ModelSpec


def pytest_addoption(parser):
    parser.addoption(
        "--mnist-dir",
        action="store",
        default=None,
        help="directory with the MNIST IDX files; enables the slow experiment suite",
    )


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: desk-scale MNIST experiments (need --mnist-dir)")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--mnist-dir"):
        return
    skip = pytest.mark.skip(reason="needs --mnist-dir")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


def make_network(layers, input_shape, seed=0):
    """Randomly initialized network over the given layers."""
    return Network(layers, input_shape, init_params(layers, input_shape, make_rng(seed)))


@pytest.fixture
def tiny_mlp():
    """Flatten -> Dense(8) -> ReLU -> Dense(3) over 4x4x1 inputs."""
    layers = [Flatten("flatten"), Dense("fc1", 8), ReLU("relu1"), Dense("fc2", 3)]
    return make_network(layers, (4, 4, 1), seed=11)


@pytest.fixture
def tiny_cnn():
    """Conv(3x3 same) -> ReLU -> MaxPool -> Flatten -> Dense(3) over 6x6x1 inputs."""
    layers = [
        Conv2D("conv1", 3, 3, stride=1, padding="same"),
        ReLU("relu1"),
        MaxPool2x2("pool1"),
        Flatten("flatten"),
        Dense("fc", 3),
    ]
    return make_network(layers, (6, 6, 1), seed=12)


@pytest.fixture
def rng():
    return make_rng(1234)


def write_idx_files(directory, split, pixels, labels, gzipped=False):
    """Write an IDX image/label pair under the standard MNIST names."""
    pixels = np.asarray(pixels, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    count, rows, cols = pixels.shape
    image_bytes = struct.pack(">4I", IMAGE_MAGIC, count, rows, cols) + pixels.tobytes()
    label_bytes = struct.pack(">2I", LABEL_MAGIC, len(labels)) + labels.tobytes()

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for stem, data in zip(MNIST_FILES[split], (image_bytes, label_bytes)):
        if gzipped:
            path = directory / f"{stem}.gz"
            with gzip.open(path, "wb") as f:
                f.write(data)
        else:
            path = directory / stem
            path.write_bytes(data)
        paths.append(path)
    return paths


@pytest.fixture
def idx_writer():
    """Return write_idx_files(directory, split, pixels, labels, gzipped=False)."""
    return write_idx_files


def _two_class_pixels(labels):
    # class 0: bright top half, class 1: bright bottom half (4x4 images)
    pixels = np.full((len(labels), 4, 4), 26, dtype=np.uint8)
    for i, label in enumerate(labels):
        rows = slice(0, 2) if label == 0 else slice(2, 4)
        pixels[i, rows, :] = 204
    return pixels


@pytest.fixture
def toy_mnist_dir(tmp_path, idx_writer):
    """MNIST-layout directory of 4x4 two-class images (train and test splits)."""
    directory = tmp_path / "mnist"
    labels = np.array([i % 2 for i in range(20)])
    idx_writer(directory, "train", _two_class_pixels(labels), labels)
    idx_writer(directory, "test", _two_class_pixels(labels), labels)
    return directory


def handmade_model(name="handmade", scale=1.0):
    """
    mlp-a over 4x4x1 inputs wired by hand: hidden unit 0 sums the top half,
    unit 1 the bottom half, class 0 scores top minus bottom and class 1 the
    reverse. Classes 2..9 sit at a constant logit of -scale.
    """
    fc1_weight = np.zeros((16, 128))
    fc1_weight[:8, 0] = 1.0
    fc1_weight[8:, 1] = 1.0
    fc2_weight = np.zeros((128, 10))
    fc2_weight[0, 0], fc2_weight[1, 0] = scale, -scale
    fc2_weight[0, 1], fc2_weight[1, 1] = -scale, scale
    fc2_bias = np.full(10, -scale)
    fc2_bias[:2] = 0.0
    params = {
        "fc1.weight": fc1_weight,
        "fc1.bias": np.zeros(128),
        "fc2.weight": fc2_weight,
        "fc2.bias": fc2_bias,
    }
    spec = ModelSpec("mlp-a", input_shape=(4, 4, 1), num_classes=10)
    return Model(spec, ModelParams(params), name=name)


@pytest.fixture
def handmade():
    return handmade_model
