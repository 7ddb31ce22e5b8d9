"""Dense feature matrix container and its two on-disk formats.

CSV (``ego_id,<feature names...>``) is the interchange format; the
binary format (magic ``CFM1``, little-endian float64 columns plus a
name table) avoids float-to-text costs on large runs. Both round-trip
exactly: CSV uses shortest-repr floats, the binary format raw bytes.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

_MAGIC = b"CFM1"


@dataclass
class FeatureMatrix:
    ego_ids: list[str]
    feature_names: list[str]
    values: np.ndarray  # (n_subscribers, n_features) float64

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != (len(self.ego_ids), len(self.feature_names)):
            raise ValueError(
                f"matrix shape {self.values.shape} does not match "
                f"{len(self.ego_ids)} egos x {len(self.feature_names)} features")

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def check_finite(self) -> None:
        if not np.isfinite(self.values).all():
            bad = np.argwhere(~np.isfinite(self.values))[0]
            raise ValueError(
                f"non-finite value at ego {self.ego_ids[bad[0]]}, "
                f"feature {self.feature_names[bad[1]]}")

    def column(self, name: str) -> np.ndarray:
        try:
            return self.values[:, self.feature_names.index(name)]
        except ValueError:
            raise KeyError(f"no feature named {name!r}") from None

    def select(self, names: list[str]) -> "FeatureMatrix":
        idx = []
        lookup = {n: i for i, n in enumerate(self.feature_names)}
        for n in names:
            if n not in lookup:
                raise KeyError(f"no feature named {n!r}")
            idx.append(lookup[n])
        return FeatureMatrix(list(self.ego_ids), list(names),
                             self.values[:, idx].copy())


def save_csv(matrix: FeatureMatrix, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("ego_id," + ",".join(matrix.feature_names) + "\n")
        for ego, row in zip(matrix.ego_ids, matrix.values):
            fh.write(ego + "," + ",".join(repr(float(v)) for v in row) + "\n")


def load_csv(path: str) -> FeatureMatrix:
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n").split(",")
        if not header or header[0] != "ego_id":
            raise ValueError(f"{path}: bad matrix header")
        names = header[1:]
        egos, rows = [], []
        for line in fh:
            parts = line.rstrip("\n").split(",")
            egos.append(parts[0])
            rows.append(np.array(parts[1:], dtype=np.float64))
    values = np.vstack(rows) if rows else np.zeros((0, len(names)))
    return FeatureMatrix(egos, names, values)


def save_binary(matrix: FeatureMatrix, path: str) -> None:
    ego_blob = "\n".join(matrix.ego_ids).encode("utf-8")
    name_blob = "\n".join(matrix.feature_names).encode("utf-8")
    n_rows, n_cols = matrix.values.shape
    cols = np.ascontiguousarray(matrix.values.T, dtype="<f8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<II", n_rows, n_cols))
        fh.write(struct.pack("<I", len(ego_blob)))
        fh.write(ego_blob)
        fh.write(struct.pack("<I", len(name_blob)))
        fh.write(name_blob)
        fh.write(cols.tobytes())


def load_binary(path: str) -> FeatureMatrix:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != _MAGIC:
            raise ValueError(f"{path}: bad magic {magic!r}, expected CFM1")
        n_rows, n_cols = struct.unpack("<II", fh.read(8))
        (ego_len,) = struct.unpack("<I", fh.read(4))
        ego_blob = fh.read(ego_len).decode("utf-8")
        (name_len,) = struct.unpack("<I", fh.read(4))
        name_blob = fh.read(name_len).decode("utf-8")
        data = np.frombuffer(fh.read(n_rows * n_cols * 8), dtype="<f8")
    egos = ego_blob.split("\n") if ego_blob else []
    names = name_blob.split("\n") if name_blob else []
    values = data.reshape(n_cols, n_rows).T.copy() if n_rows * n_cols else \
        np.zeros((n_rows, n_cols))
    return FeatureMatrix(egos, names, values)


def save(matrix: FeatureMatrix, path: str, fmt: str = "csv") -> None:
    if fmt == "csv":
        save_csv(matrix, path)
    elif fmt == "binary":
        save_binary(matrix, path)
    else:
        raise ValueError(f"unknown matrix format {fmt!r}")


def load(path: str) -> FeatureMatrix:
    with open(path, "rb") as fh:
        magic = fh.read(4)
    return load_binary(path) if magic == _MAGIC else load_csv(path)
