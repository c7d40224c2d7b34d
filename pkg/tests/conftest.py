import gzip
from pathlib import Path

import numpy as np
import pytest

from photonic_rc.dataset import MNIST_FILES, serialize_idx_images, serialize_idx_labels
from photonic_rc.harness.config import default_data_dir
from photonic_rc.harness.data import verify


def synthetic_digits(n: int, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Class-dependent uint8 images: one blurred template per digit plus noise."""
    rng = np.random.default_rng(1234)
    templates = np.zeros((10, 28, 28))
    for c in range(10):
        pts = rng.integers(6, 22, size=(6, 2))
        for r, col in pts:
            templates[c, r - 3:r + 3, col - 2:col + 2] = 1.0
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, 10, size=n)
    shifts = rng.integers(-1, 2, size=(n, 2))
    imgs = np.empty((n, 28, 28))
    for i, (c, (dr, dc)) in enumerate(zip(labels, shifts)):
        imgs[i] = np.roll(templates[c], (dr, dc), axis=(0, 1))
    imgs = np.clip(imgs * rng.uniform(0.6, 1.0, size=(n, 1, 1)) + rng.uniform(0, 0.3, imgs.shape), 0, 1)
    return (imgs * 255).astype(np.uint8), labels.astype(np.uint8)


def write_fake_mnist(root: Path, n_train: int = 600, n_test: int = 200) -> Path:
    root.mkdir(parents=True, exist_ok=True)
    tr_x, tr_y = synthetic_digits(n_train, seed=1)
    te_x, te_y = synthetic_digits(n_test, seed=2)
    blobs = {
        "train_images": serialize_idx_images(tr_x),
        "train_labels": serialize_idx_labels(tr_y),
        "test_images": serialize_idx_images(te_x),
        "test_labels": serialize_idx_labels(te_y),
    }
    for key, blob in blobs.items():
        with gzip.open(root / MNIST_FILES[key], "wb") as fh:
            fh.write(blob)
    return root


@pytest.fixture(scope="session")
def fake_mnist(tmp_path_factory) -> Path:
    return write_fake_mnist(tmp_path_factory.mktemp("fake_mnist"))


@pytest.fixture(scope="session")
def mnist_dir() -> Path:
    d = default_data_dir()
    if not d.exists() or any(s != "ok" for s in verify(d).values()):
        pytest.skip(f"MNIST not available in {d}; run `photonic-rc data fetch`")
    return d


def pytest_terminal_summary(terminalreporter):
    from acceptance_log import LINES
    if not LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in LINES:
        terminalreporter.write_line(line)
