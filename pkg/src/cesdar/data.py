"""Datasets: synthetic generation, CSV ingestion, splitting, and caching.

All randomness flows through numpy's PCG64 with named streams so that any
experiment is replayable from a single integer seed:

    stream 0  synthetic design/signal/noise draws
    stream 1  fresh test-set draws for a given ground truth
    stream 2  train/test row splits
    stream 3  appended noise features during ingestion
"""
from __future__ import annotations

import csv
import json
import math
import struct
from dataclasses import dataclass

import numpy as np

from .config import ExperimentConfig
from .exceptions import ConfigurationError, DegenerateColumnError, IngestError

__all__ = [
    "Dataset",
    "SyntheticSpec",
    "GroundTruth",
    "generate",
    "generate_test",
    "example_config",
    "example_grid",
    "ingest_csv",
    "split",
    "save_cache",
    "load_cache",
]

_STREAMS = {"data": 0, "test": 1, "split": 2, "noise": 3}

CACHE_MAGIC = b"CSDR1"


def stream_rng(seed: int, kind: str) -> np.random.Generator:
    """Named deterministic substream of the given base seed."""
    return np.random.Generator(
        np.random.PCG64(np.random.SeedSequence(entropy=(int(seed), _STREAMS[kind])))
    )


class Dataset:
    """Dense design matrix X (n x p) with response y and column names.

    Rejects non-finite entries and zero-norm columns at construction so the
    solvers never have to re-validate. ``column_curvature`` (the per-column
    squared norms over n) is cached; it does not depend on any iterate.
    """

    def __init__(self, x, y, feature_names=None, standardized=False,
                 column_means=None, column_scales=None, y_mean=None, y_scale=None,
                 _validate=True):
        self.x = np.asarray(x, dtype=float)
        self.y = np.asarray(y, dtype=float)
        if self.x.ndim != 2 or self.y.ndim != 1 or self.x.shape[0] != self.y.shape[0]:
            raise ValueError(f"incompatible shapes X {self.x.shape}, y {self.y.shape}")
        if feature_names is None:
            feature_names = [f"x{j}" for j in range(self.x.shape[1])]
        if len(feature_names) != self.x.shape[1]:
            raise ValueError("feature_names length does not match the number of columns")
        self.feature_names = list(feature_names)
        self.standardized = bool(standardized)
        self.column_means = None if column_means is None else np.asarray(column_means, float)
        self.column_scales = None if column_scales is None else np.asarray(column_scales, float)
        self.y_mean = y_mean
        self.y_scale = y_scale
        self._curvature = None
        if _validate:
            self._validate()

    def _validate(self):
        if not np.all(np.isfinite(self.x)):
            raise ValueError("design matrix contains non-finite entries")
        if not np.all(np.isfinite(self.y)):
            raise ValueError("response contains non-finite entries")
        norms = np.einsum("ij,ij->j", self.x, self.x)
        dead = np.flatnonzero(norms == 0.0)
        if dead.size:
            name = self.feature_names[dead[0]]
            raise DegenerateColumnError(
                f"column {dead[0]} ({name!r}) has zero norm", column=name
            )

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def p(self) -> int:
        return self.x.shape[1]

    def column_curvature(self) -> np.ndarray:
        """Per-column curvature ||x_j||^2 / n of the half-mean-square loss."""
        if self._curvature is None:
            self._curvature = np.einsum("ij,ij->j", self.x, self.x) / self.n
        return self._curvature

    def correlate_residual(self, residual: np.ndarray) -> np.ndarray:
        """X' r / n for a length-n residual vector."""
        return self.x.T @ residual / self.n

    def row_slice(self, start: int, stop: int) -> "Dataset":
        """Shard view over contiguous rows; shares storage, never mutated."""
        return Dataset(
            self.x[start:stop], self.y[start:stop], self.feature_names,
            standardized=self.standardized, column_means=self.column_means,
            column_scales=self.column_scales, y_mean=self.y_mean,
            y_scale=self.y_scale, _validate=False,
        )


@dataclass(frozen=True)
class SyntheticSpec:
    """Shape of one synthetic instance; r_* = sqrt(2 log(p)/n) is derived."""

    n: int
    p: int
    s: int
    signal_ratio: float = 20.0
    tau: float = 0.5
    noise_sd: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.s > self.p or self.s < 0:
            raise ConfigurationError(f"need 0 <= s <= p, got s={self.s}, p={self.p}")
        if self.n < 1 or self.p < 1:
            raise ConfigurationError("n and p must be positive")
        if self.noise_sd < 0:
            raise ConfigurationError("noise_sd must be non-negative")

    @property
    def signal_floor(self) -> float:
        return math.sqrt(2.0 * math.log(self.p) / self.n)

    @property
    def signal_cap(self) -> float:
        return self.signal_ratio * self.signal_floor


@dataclass(frozen=True)
class GroundTruth:
    """True coefficients of a synthetic instance."""

    dim: int
    support: np.ndarray
    values: np.ndarray

    def dense(self) -> np.ndarray:
        out = np.zeros(self.dim)
        out[self.support] = self.values
        return out


def _draw_instance(spec: SyntheticSpec, rng, truth: GroundTruth | None):
    """Draw order: X, then (support, values) unless given, then noise."""
    x = rng.standard_normal((spec.n, spec.p))
    if truth is None:
        support = np.sort(rng.choice(spec.p, size=spec.s, replace=False))
        values = rng.uniform(spec.signal_floor, spec.signal_cap, size=spec.s)
        truth = GroundTruth(dim=spec.p, support=support, values=values)
    noise = rng.standard_normal(spec.n)
    if truth.support.size:
        signal = x[:, truth.support] @ truth.values
    else:
        signal = np.zeros(spec.n)
    y = signal + spec.noise_sd * noise
    return Dataset(x, y), truth


def generate(spec: SyntheticSpec):
    """Synthetic instance: Gaussian rows, uniform signals on a random support.

    Fully determined by ``spec.seed``; the same seed gives a bitwise
    identical (X, y, truth).
    """
    return _draw_instance(spec, stream_rng(spec.seed, "data"), truth=None)


def generate_test(spec: SyntheticSpec, truth: GroundTruth, n_test: int):
    """Fresh rows and noise under an existing ground truth (held-out set)."""
    test_spec = SyntheticSpec(
        n=n_test, p=spec.p, s=spec.s, signal_ratio=spec.signal_ratio,
        tau=spec.tau, noise_sd=spec.noise_sd, seed=spec.seed,
    )
    data, _ = _draw_instance(test_spec, stream_rng(spec.seed, "test"), truth=truth)
    return data


_EXAMPLE_GRIDS = {
    1: {"machines": (2, 4, 8, 16, 32, 64, 128)},
    2: {"machines": tuple(range(2, 17, 2))},
    3: {"p": tuple(range(2000, 10001, 2000)), "sparsity": tuple(range(2, 21, 2))},
    4: {"s": tuple(range(2, 21, 2)), "sparsity": tuple(range(2, 21, 2))},
}


def example_config(example: int, scale: float = 1.0, replicates: int = 100,
                   base_seed: int = 0, algorithm: str = "cesdar", **knobs) -> ExperimentConfig:
    """One cell of the benchmark grids (examples 1-4).

    ``scale`` shrinks n and p proportionally (floored) for desk-scale runs
    and is recorded in the returned config. Knobs select the grid point:
    ``machines`` for examples 1-2, ``p``/``sparsity`` for example 3,
    ``s``/``sparsity`` for example 4.
    """
    if example not in _EXAMPLE_GRIDS:
        raise ConfigurationError(f"example must be 1..4, got {example}")
    grid = _EXAMPLE_GRIDS[example]
    bad = set(knobs) - set(grid)
    if bad:
        raise ConfigurationError(f"example {example} does not take knobs {sorted(bad)}")

    if example == 1:
        base = dict(n=100_000, p=500, s=10, sparsity=10, machines=knobs.get("machines", 2))
    elif example == 2:
        base = dict(n=5000, p=10_000, s=10, sparsity=10, machines=knobs.get("machines", 2))
    elif example == 3:
        base = dict(n=5000, p=knobs.get("p", 2000), s=10,
                    sparsity=knobs.get("sparsity", 10), machines=5)
    else:
        base = dict(n=5000, p=10_000, s=knobs.get("s", 10),
                    sparsity=knobs.get("sparsity", 10), machines=5)

    for key, allowed in grid.items():
        if key in knobs and knobs[key] not in allowed:
            raise ConfigurationError(
                f"example {example}: {key}={knobs[key]} not on the grid {allowed}"
            )

    if not 0 < scale <= 1:
        raise ConfigurationError(f"scale must lie in (0, 1], got {scale}")
    if scale != 1.0:
        base["n"] = max(int(base["n"] * scale), base["machines"])
        base["p"] = max(int(base["p"] * scale), base["s"], base["sparsity"])

    return ExperimentConfig(
        algorithm=algorithm, tau=0.5, signal_ratio=20.0, noise_sd=1.0,
        replicates=replicates, base_seed=base_seed, example=example, scale=scale,
        label=f"example{example}", **base,
    )


def example_grid(example: int):
    """Grid axes (knob name -> values) of one benchmark example."""
    if example not in _EXAMPLE_GRIDS:
        raise ConfigurationError(f"example must be 1..4, got {example}")
    return dict(_EXAMPLE_GRIDS[example])


def _standardize_columns(x, names):
    means = x.mean(axis=0)
    centered = x - means
    scales = np.sqrt(np.einsum("ij,ij->j", centered, centered) / x.shape[0])
    dead = np.flatnonzero(scales == 0.0)
    if dead.size:
        raise DegenerateColumnError(
            f"column {names[dead[0]]!r} is constant; cannot standardize",
            column=names[dead[0]],
        )
    return centered / scales, means, scales


def ingest_csv(path, response_column, categorical_columns=(), n_noise_features=0,
               noise_seed=0, standardize=True, drop_first=True,
               standardize_response=None) -> Dataset:
    """Load a CSV into a Dataset: dummy-encode, append noise columns, scale.

    Categorical columns expand to one 0/1 dummy per level, sorted by level
    name; with ``drop_first`` the lexicographically first level is dropped
    (the reference level). ``n_noise_features`` standard-normal columns are
    appended from the dedicated noise stream of ``noise_seed``. With
    ``standardize`` every column (dummies and noise included) is centered to
    mean zero and scaled to unit variance; the response follows suit unless
    ``standardize_response`` overrides that.

    Unparseable numeric cells raise with the 1-based data row number.
    """
    with open(path, newline="") as handle:
        reader = csv.reader(handle)
        try:
            header = next(reader)
        except StopIteration:
            raise IngestError(f"{path}: empty file") from None
        rows = list(reader)
    if response_column not in header:
        raise IngestError(f"{path}: response column {response_column!r} not found")
    missing = [c for c in categorical_columns if c not in header]
    if missing:
        raise IngestError(f"{path}: categorical columns {missing} not found")
    if not rows:
        raise IngestError(f"{path}: no data rows")

    col_index = {name: i for i, name in enumerate(header)}
    categorical = set(categorical_columns)
    numeric_cols = [c for c in header if c != response_column and c not in categorical]

    n = len(rows)
    for rownum, row in enumerate(rows, start=1):
        if len(row) != len(header):
            raise IngestError(f"{path}: row {rownum}: expected {len(header)} fields, got {len(row)}")

    def parse(colname):
        idx = col_index[colname]
        out = np.empty(n)
        for rownum, row in enumerate(rows, start=1):
            try:
                out[rownum - 1] = float(row[idx])
            except ValueError:
                raise IngestError(
                    f"{path}: row {rownum}: cannot parse {colname!r} value {row[idx]!r}"
                ) from None
        return out

    blocks, names = [], []
    for col in numeric_cols:
        blocks.append(parse(col))
        names.append(col)

    for col in categorical_columns:
        idx = col_index[col]
        raw = [row[idx] for row in rows]
        levels = sorted(set(raw))
        kept = levels[1:] if drop_first and len(levels) > 1 else levels
        for level in kept:
            blocks.append(np.array([1.0 if v == level else 0.0 for v in raw]))
            names.append(f"{col}={level}")

    if n_noise_features:
        rng = stream_rng(noise_seed, "noise")
        noise = rng.standard_normal((n, int(n_noise_features)))
        for j in range(int(n_noise_features)):
            blocks.append(noise[:, j])
            names.append(f"noise{j + 1}")

    x = np.column_stack(blocks)
    y = parse(response_column)

    if standardize_response is None:
        standardize_response = standardize

    means = scales = None
    y_mean = y_scale = None
    if standardize:
        x, means, scales = _standardize_columns(x, names)
    if standardize_response:
        y_mean = float(y.mean())
        y_scale = float(np.sqrt(((y - y_mean) ** 2).mean()))
        if y_scale == 0.0:
            raise IngestError(f"{path}: response {response_column!r} is constant")
        y = (y - y_mean) / y_scale

    return Dataset(x, y, names, standardized=standardize,
                   column_means=means, column_scales=scales,
                   y_mean=y_mean, y_scale=y_scale)


def split(data: Dataset, n_train: int, seed: int, standardize=None):
    """Seeded uniform row split without replacement.

    When the input is standardized (or ``standardize`` is forced on), the
    statistics are recomputed on the training rows and applied to both
    halves, so the test set uses the training means and scales.
    """
    if not 0 < n_train < data.n:
        raise ValueError(f"n_train must lie in (0, {data.n}), got {n_train}")
    perm = stream_rng(seed, "split").permutation(data.n)
    train_rows = np.sort(perm[:n_train])
    test_rows = np.sort(perm[n_train:])
    if standardize is None:
        standardize = data.standardized

    x_tr, y_tr = data.x[train_rows], data.y[train_rows]
    x_te, y_te = data.x[test_rows], data.y[test_rows]
    means = scales = None
    y_mean = y_scale = None
    if standardize:
        x_tr, means, scales = _standardize_columns(x_tr, data.feature_names)
        x_te = (x_te - means) / scales
        y_mean = float(y_tr.mean())
        y_scale = float(np.sqrt(((y_tr - y_mean) ** 2).mean()))
        if y_scale == 0.0:
            raise DegenerateColumnError("training response is constant")
        y_tr = (y_tr - y_mean) / y_scale
        y_te = (y_te - y_mean) / y_scale

    common = dict(standardized=standardize, column_means=means, column_scales=scales,
                  y_mean=y_mean, y_scale=y_scale)
    return (Dataset(x_tr, y_tr, data.feature_names, **common),
            Dataset(x_te, y_te, data.feature_names, **common))


def save_cache(path, data: Dataset) -> None:
    """Binary dataset cache: magic CSDR1, dims, X, y, names, scaling block."""
    with open(path, "wb") as out:
        out.write(CACHE_MAGIC)
        out.write(struct.pack("<QQ", data.n, data.p))
        out.write(np.ascontiguousarray(data.x, dtype="<f8").tobytes())
        out.write(np.ascontiguousarray(data.y, dtype="<f8").tobytes())
        out.write(struct.pack("<I", len(data.feature_names)))
        for name in data.feature_names:
            raw = name.encode("utf-8")
            out.write(struct.pack("<I", len(raw)))
            out.write(raw)
        if data.standardized:
            out.write(b"\x01")
            out.write(np.ascontiguousarray(data.column_means, dtype="<f8").tobytes())
            out.write(np.ascontiguousarray(data.column_scales, dtype="<f8").tobytes())
        else:
            out.write(b"\x00")
        if data.y_mean is not None:
            out.write(b"\x01")
            out.write(struct.pack("<dd", data.y_mean, data.y_scale))
        else:
            out.write(b"\x00")


def load_cache(path) -> Dataset:
    """Inverse of save_cache; the round trip is bit exact."""
    with open(path, "rb") as handle:
        blob = handle.read()
    if blob[:5] != CACHE_MAGIC:
        raise IngestError(f"{path}: not a dataset cache (bad magic)")
    off = 5
    n, p = struct.unpack_from("<QQ", blob, off)
    off += 16
    x = np.frombuffer(blob, dtype="<f8", count=n * p, offset=off).reshape(n, p).copy()
    off += 8 * n * p
    y = np.frombuffer(blob, dtype="<f8", count=n, offset=off).copy()
    off += 8 * n
    (count,) = struct.unpack_from("<I", blob, off)
    off += 4
    names = []
    for _ in range(count):
        (length,) = struct.unpack_from("<I", blob, off)
        off += 4
        names.append(blob[off:off + length].decode("utf-8"))
        off += length
    standardized = blob[off] == 1
    off += 1
    means = scales = None
    if standardized:
        means = np.frombuffer(blob, dtype="<f8", count=p, offset=off).copy()
        off += 8 * p
        scales = np.frombuffer(blob, dtype="<f8", count=p, offset=off).copy()
        off += 8 * p
    y_mean = y_scale = None
    if blob[off] == 1:
        off += 1
        y_mean, y_scale = struct.unpack_from("<dd", blob, off)
        off += 16
    else:
        off += 1
    return Dataset(x, y, names, standardized=standardized,
                   column_means=means, column_scales=scales,
                   y_mean=y_mean, y_scale=y_scale)


def save_truth(path, truth: GroundTruth) -> None:
    payload = {
        "dim": truth.dim,
        "support": [int(i) for i in truth.support],
        "values": [float(v) for v in truth.values],
    }
    with open(path, "w") as out:
        json.dump(payload, out, sort_keys=True)
        out.write("\n")


def load_truth(path) -> GroundTruth:
    with open(path) as handle:
        payload = json.load(handle)
    return GroundTruth(
        dim=int(payload["dim"]),
        support=np.asarray(payload["support"], dtype=np.int64),
        values=np.asarray(payload["values"], dtype=float),
    )
