"""Activity clustering: one-hot + unit-variance encoding and Lloyd's k-means."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import EmptyInputError, InsufficientDataError, StageMismatchError, UndefinedSilhouetteError
from .features import FeatureCatalog, FeatureTable

DEFAULT_K = 100
DEFAULT_MAX_ITER = 100
DEFAULT_N_INIT = 10

# upper bound on elements materialised per distance block
_BLOCK_ELEMS = 4_000_000


@dataclass
class EncoderSpec:
    """Everything needed to encode new rows exactly like the training rows.

    ``columns`` holds one record per kept output column; ``dropped`` lists the
    zero-variance columns removed during fitting.
    """

    catalog_hash: str
    columns: list[dict]
    dropped: list[dict] = field(default_factory=list)

    @property
    def width(self) -> int:
        return len(self.columns)

    def to_json(self) -> dict:
        return {"catalog_hash": self.catalog_hash, "columns": self.columns, "dropped": self.dropped}

    @classmethod
    def from_json(cls, d: dict) -> EncoderSpec:
        return cls(d["catalog_hash"], d["columns"], d.get("dropped", []))

    def transform(self, rows: Sequence[Sequence]) -> np.ndarray:
        out = np.empty((len(rows), len(self.columns)), dtype=np.float64)
        for j, col in enumerate(self.columns):
            f = col["feature"]
            if col["category"] is None:
                imp = col["impute"]
                raw = np.array([imp if r[f] is None else r[f] for r in rows], dtype=np.float64)
            else:
                cat = col["category"]
                raw = np.array([1.0 if r[f] == cat else 0.0 for r in rows], dtype=np.float64)
            out[:, j] = (raw - col["center"]) / col["scale"]
        return out


@dataclass
class EncodedMatrix:
    data: np.ndarray
    spec: EncoderSpec

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape


def encode(table: FeatureTable) -> EncodedMatrix:
    """Fit an encoder on ``table`` and return the encoded training matrix."""
    if len(table) == 0:
        raise EmptyInputError("cannot encode an empty feature table")
    catalog: FeatureCatalog = table.catalog
    n = len(table)
    candidates: list[tuple[dict, np.ndarray]] = []
    for f, entry in enumerate(catalog.entries):
        values = [r[f] for r in table.rows]
        if entry.kind == "NUMERIC":
            present = [v for v in values if v is not None]
            impute = float(np.mean(present)) if present else 0.0
            raw = np.array([impute if v is None else v for v in values], dtype=np.float64)
            candidates.append(({"feature": f, "name": entry.name, "category": None,
                                "impute": impute}, raw))
        else:
            for cat in sorted({v for v in values if v is not None}):
                raw = np.array([1.0 if v == cat else 0.0 for v in values], dtype=np.float64)
                candidates.append(({"feature": f, "name": f"{entry.name}={cat}",
                                    "category": cat, "impute": None}, raw))
    columns, dropped, data = [], [], []
    for col, raw in candidates:
        if n < 2 or float(np.ptp(raw)) == 0.0:
            dropped.append(col)
            continue
        center = float(raw.mean())
        scale = float(raw.std(ddof=1))
        col = dict(col, center=center, scale=scale)
        columns.append(col)
        data.append((raw - center) / scale)
    matrix = np.column_stack(data) if data else np.zeros((n, 0))
    return EncodedMatrix(matrix, EncoderSpec(catalog.hash, columns, dropped))


def _sq_distances(X: np.ndarray, C: np.ndarray) -> np.ndarray:
    """Exact squared Euclidean distances, shape (len(X), len(C))."""
    n, m = X.shape
    k = C.shape[0]
    out = np.empty((n, k), dtype=np.float64)
    step = max(1, _BLOCK_ELEMS // max(1, k * m))
    for lo in range(0, n, step):
        block = X[lo:lo + step]
        diff = block[:, None, :] - C[None, :, :]
        out[lo:lo + step] = np.einsum("ijk,ijk->ij", diff, diff)
    return out


def euclidean(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.sqrt(np.sum((np.asarray(a) - np.asarray(b)) ** 2)))


@dataclass
class ClusterModel:
    K: int
    centroids: np.ndarray
    spec: EncoderSpec | None
    training_inertia: float
    seed: int
    labels: np.ndarray | None = None
    inertia_history: list[float] = field(default_factory=list)
    n_iter: int = 0

    @property
    def M(self) -> int:
        return self.centroids.shape[1]

    @property
    def catalog_hash(self) -> str | None:
        return self.spec.catalog_hash if self.spec is not None else None

    def assign(self, row: Sequence[float]) -> int:
        return assign(self, row)

    def assign_rows(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.M:
            raise StageMismatchError(
                f"encoded rows have dimension {X.shape[-1]}, model expects {self.M}")
        if len(X) == 0:
            return np.zeros(0, dtype=np.int64)
        return np.argmin(_sq_distances(X, self.centroids), axis=1)

    def assign_table(self, table: FeatureTable) -> np.ndarray:
        if self.spec is None:
            raise StageMismatchError("cluster model carries no encoder")
        if table.catalog_hash != self.spec.catalog_hash:
            raise StageMismatchError("feature table and cluster model disagree",
                                     expected=self.spec.catalog_hash, found=table.catalog_hash)
        return self.assign_rows(self.spec.transform(table.rows))

    def to_json(self) -> dict:
        return {
            "K": self.K,
            "M": self.M,
            "seed": self.seed,
            "catalog_hash": self.catalog_hash,
            "encoder_spec": self.spec.to_json() if self.spec is not None else None,
            "centroids": self.centroids.tolist(),
            "training_inertia": self.training_inertia,
            "labels": self.labels.tolist() if self.labels is not None else None,
        }

    @classmethod
    def from_json(cls, d: dict) -> ClusterModel:
        spec = EncoderSpec.from_json(d["encoder_spec"]) if d.get("encoder_spec") else None
        centroids = np.array(d["centroids"], dtype=np.float64).reshape(d["K"], d["M"])
        labels = np.array(d["labels"], dtype=np.int64) if d.get("labels") is not None else None
        return cls(d["K"], centroids, spec, d["training_inertia"], d["seed"], labels)

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True) + "\n"


def assign(model: ClusterModel, row: Sequence[float]) -> int:
    """Nearest centroid by Euclidean distance; ties go to the lowest id."""
    x = np.asarray(row, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] != model.M:
        raise StageMismatchError(f"row has dimension {x.shape[-1] if x.ndim else 0}, "
                                 f"model expects {model.M}")
    d = np.sum((model.centroids - x) ** 2, axis=1)
    return int(np.argmin(d))


def _kmeanspp(X: np.ndarray, K: int, rng: np.random.Generator) -> np.ndarray:
    n = len(X)
    chosen = [int(rng.integers(n))]
    d2 = np.sum((X - X[chosen[0]]) ** 2, axis=1)
    for _ in range(1, K):
        total = d2.sum()
        if total <= 0:
            rest = np.setdiff1d(np.arange(n), chosen)
            nxt = int(rng.choice(rest))
        else:
            nxt = int(rng.choice(n, p=d2 / total))
        chosen.append(nxt)
        d2 = np.minimum(d2, np.sum((X - X[nxt]) ** 2, axis=1))
    return X[chosen].copy()


def _lloyd(X: np.ndarray, C: np.ndarray, max_iter: int):
    n = len(X)
    K = len(C)
    labels = None
    history: list[float] = []
    it = 0
    for it in range(1, max_iter + 1):
        d2 = _sq_distances(X, C)
        new = np.argmin(d2, axis=1)
        history.append(float(d2[np.arange(n), new].sum()))
        if labels is not None and np.array_equal(new, labels):
            break
        labels = new
        counts = np.bincount(labels, minlength=K)
        C = np.zeros_like(C)
        # fixed summation order keeps the update bit-reproducible
        np.add.at(C, labels, X)
        nonempty = counts > 0
        C[nonempty] /= counts[nonempty, None]
        empty = np.flatnonzero(~nonempty)
        if len(empty):
            far = np.sum((X - C[labels]) ** 2, axis=1)
            order = np.argsort(-far, kind="stable")
            for k, idx in zip(empty, order):
                C[k] = X[idx]
    d2 = _sq_distances(X, C)
    labels = np.argmin(d2, axis=1)
    inertia = float(d2[np.arange(n), labels].sum())
    return C, labels, inertia, history, it


def kmeans_fit(X: EncodedMatrix | np.ndarray, K: int = DEFAULT_K, seed: int = 0,
               max_iter: int = DEFAULT_MAX_ITER, n_init: int = DEFAULT_N_INIT,
               init: str | np.ndarray = "random") -> ClusterModel:
    """Lloyd's k-means.

    ``init`` is ``"random"`` (K distinct training rows), ``"k-means++"`` or an
    explicit (K, M) array of starting centroids.  With a random init the best
    of ``n_init`` restarts (lowest inertia) is kept.
    """
    spec = X.spec if isinstance(X, EncodedMatrix) else None
    data = np.asarray(X.data if isinstance(X, EncodedMatrix) else X, dtype=np.float64)
    n = len(data)
    if K < 1:
        raise ValueError("K must be positive")
    if n < K:
        raise InsufficientDataError(f"{n} rows cannot form {K} clusters")
    rng = np.random.default_rng(seed)
    best = None
    if isinstance(init, np.ndarray):
        starts = [np.array(init, dtype=np.float64)]
        if starts[0].shape != (K, data.shape[1]):
            raise ValueError(f"initial centroids must have shape {(K, data.shape[1])}")
    else:
        starts = None
    runs = 1 if starts is not None else max(1, n_init)
    for r in range(runs):
        if starts is not None:
            C0 = starts[0]
        elif init == "k-means++":
            C0 = _kmeanspp(data, K, rng)
        elif init == "random":
            C0 = data[rng.choice(n, size=K, replace=False)].copy()
        else:
            raise ValueError(f"unknown init {init!r}")
        result = _lloyd(data, C0, max_iter)
        if best is None or result[2] < best[2]:
            best = result
    C, labels, inertia, history, n_iter = best
    return ClusterModel(K, C, spec, inertia, seed, labels, history, n_iter)


@dataclass
class SilhouetteResult:
    mean: float
    scores: np.ndarray


def silhouette(X: EncodedMatrix | np.ndarray, labels: Sequence[int]) -> SilhouetteResult:
    data = np.asarray(X.data if isinstance(X, EncodedMatrix) else X, dtype=np.float64)
    labels = np.asarray(labels)
    if len(labels) != len(data):
        raise ValueError("one label per row is required")
    uniq, lab = np.unique(labels, return_inverse=True)
    if len(uniq) < 2:
        raise UndefinedSilhouetteError("silhouette needs at least two clusters")
    n = len(data)
    k = len(uniq)
    sizes = np.bincount(lab, minlength=k).astype(np.float64)
    onehot = np.zeros((n, k))
    onehot[np.arange(n), lab] = 1.0
    scores = np.zeros(n)
    step = max(1, _BLOCK_ELEMS // max(1, n * max(1, data.shape[1])))
    for lo in range(0, n, step):
        block = data[lo:lo + step]
        diff = block[:, None, :] - data[None, :, :]
        dist = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
        sums = dist @ onehot  # distance totals per cluster
        own = lab[lo:lo + step]
        rows = np.arange(len(block))
        own_size = sizes[own]
        a = np.where(own_size > 1, sums[rows, own] / np.maximum(own_size - 1, 1), 0.0)
        means = sums / sizes
        means[rows, own] = np.inf
        b = means.min(axis=1)
        denom = np.maximum(a, b)
        s = np.where(denom > 0, (b - a) / np.where(denom > 0, denom, 1.0), 0.0)
        s[own_size == 1] = 0.0
        scores[lo:lo + step] = s
    return SilhouetteResult(float(scores.mean()), scores)
