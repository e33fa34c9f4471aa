"""Flat binary export/import of generated datasets.

Layout: the magic bytes ``PSGD1``, then d_x, d_y, n_train, n_heldout as
little-endian signed 64-bit integers, then all features as row-major
little-endian float64, then all labels as little-endian int64 class indices.
Only classification datasets fit this layout; regression labels are real
vectors and are rejected.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from psgdlab.problems import Dataset

MAGIC = b"PSGD1"
_HEADER = struct.Struct("<4q")


def save_dataset(dataset: Dataset, path) -> None:
    """Write the dataset to ``path`` in the flat binary layout."""
    if not np.issubdtype(dataset.labels.dtype, np.integer):
        raise ValueError(
            "dataset export stores int64 class indices; regression datasets "
            "with real-vector labels cannot be exported"
        )
    path = Path(path)
    with path.open("wb") as fh:
        fh.write(MAGIC)
        fh.write(
            _HEADER.pack(dataset.d_x, dataset.d_y, dataset.n_train, dataset.n_heldout)
        )
        fh.write(np.ascontiguousarray(dataset.features, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(dataset.labels, dtype="<i8").tobytes())


def load_dataset(path) -> Dataset:
    """Read a dataset previously written by :func:`save_dataset`."""
    path = Path(path)
    raw = path.read_bytes()
    if raw[: len(MAGIC)] != MAGIC:
        raise ValueError(f"{path} is not a dataset file (bad magic)")
    d_x, d_y, n_train, n_heldout = _HEADER.unpack_from(raw, len(MAGIC))
    if min(d_x, d_y, n_train, n_heldout) <= 0:
        raise ValueError(f"{path} header contains non-positive sizes")
    n = n_train + n_heldout
    offset = len(MAGIC) + _HEADER.size
    feat_bytes = n * d_x * 8
    expected = offset + feat_bytes + n * 8
    if len(raw) != expected:
        raise ValueError(
            f"{path} is truncated or padded: expected {expected} bytes, "
            f"found {len(raw)}"
        )
    features = np.frombuffer(raw, dtype="<f8", count=n * d_x, offset=offset)
    labels = np.frombuffer(raw, dtype="<i8", count=n, offset=offset + feat_bytes)
    return Dataset(
        features=features.reshape(n, d_x).astype(np.float64),
        labels=labels.astype(np.int64),
        d_x=int(d_x),
        d_y=int(d_y),
        n_train=int(n_train),
        n_heldout=int(n_heldout),
    )
