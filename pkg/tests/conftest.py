"""Shared fixtures: synthetic datasets, optional real-dataset discovery."""

from __future__ import annotations

import os
from pathlib import Path

import numpy as np
import pytest

from fmcb import _kernels
from fmcb.data import Dataset, parse_csv_dataset

# Real benchmark datasets are not redistributable with the package; the
# suite looks for them here (see README for download instructions) and
# skips the tests that need them when absent.
DATA_DIR = Path(os.environ.get("FMCB_DATA_DIR", Path(__file__).resolve().parent.parent / "data"))


@pytest.fixture(scope="session", autouse=True)
def _compiled_kernels():
    # Pay the JIT cost once up front so timing-sensitive tests stay clean.
    _kernels.warm_up()


def blob_dataset(n: int, k: int, d: int, seed: int = 0, spread: float = 2.0) -> Dataset:
    """Gaussian class blobs; smaller spread means more class overlap."""
    rng = np.random.default_rng(seed)
    means = rng.standard_normal((k, d)) * spread
    labels = rng.integers(0, k, n)
    features = means[labels] + rng.standard_normal((n, d))
    names = tuple(f"c{i:03d}" for i in range(k))
    return Dataset(features, labels, k, names)


def letter_path() -> Path | None:
    for name in ("letter-recognition.data", "letter.csv"):
        p = DATA_DIR / name
        if p.exists():
            return p
    return None


def pendigits_paths() -> list[Path] | None:
    combined = DATA_DIR / "pendigits.csv"
    if combined.exists():
        return [combined]
    tra, tes = DATA_DIR / "pendigits.tra", DATA_DIR / "pendigits.tes"
    if tra.exists() and tes.exists():
        return [tra, tes]
    return None


def load_letter() -> Dataset:
    path = letter_path()
    assert path is not None
    ds, _ = parse_csv_dataset(str(path), label_column=0)
    return ds


def load_pendigits() -> Dataset:
    paths = pendigits_paths()
    assert paths is not None
    parts = [parse_csv_dataset(str(p), label_column=-1)[0] for p in paths]
    if len(parts) == 1:
        return parts[0]
    assert parts[0].label_names == parts[1].label_names
    return Dataset(
        features=np.vstack([p.features for p in parts]),
        labels=np.concatenate([p.labels for p in parts]),
        num_classes=parts[0].num_classes,
        label_names=parts[0].label_names,
    )


requires_letter = pytest.mark.skipif(
    letter_path() is None,
    reason=f"letter dataset not found under {DATA_DIR} (see README: datasets for the "
           "acceptance suite must be downloaded manually; this sandbox has no network)",
)

requires_pendigits = pytest.mark.skipif(
    pendigits_paths() is None,
    reason=f"pendigits dataset not found under {DATA_DIR} (see README)",
)
