"""Dataset model, on-disk format, missingness simulation and synthetic data.

A dataset is a list of per-view feature matrices plus a binary label matrix,
a view-availability mask W, a label-observation mask G and an optional
train/val/test split. Matrices are stored on disk as little-endian float64
blobs with a 16-byte header (magic ``MVML``, u32 rows, u32 cols, u32
reserved) referenced from a JSON manifest, which round-trips bit-exactly.
Missing view entries are stored as zeros and identified only through W.
"""
from __future__ import annotations

import csv
import json
import os
import struct
from dataclasses import dataclass, field

import numpy as np

from .autodiff import RngStream

_MAGIC = b"MVML"
_HEADER = struct.Struct("<4sIII")

SPLIT_TRAIN, SPLIT_VAL, SPLIT_TEST = 0, 1, 2
_SPLIT_NAMES = {"train": SPLIT_TRAIN, "val": SPLIT_VAL, "test": SPLIT_TEST}


class DatasetError(ValueError):
    """Raised when a dataset or manifest fails validation."""


@dataclass
class MissingnessSpec:
    fmr: float
    lmr: float
    seed: int

    def __post_init__(self):
        if not 0.0 <= self.fmr < 1.0:
            raise DatasetError("fmr must be < 1 (every sample keeps one view)")
        if not 0.0 <= self.lmr < 1.0:
            raise DatasetError("lmr must be in [0, 1)")


@dataclass
class MultiViewDataset:
    views: list[np.ndarray]          # V matrices, each (N, d_v)
    labels: np.ndarray               # (N, C) binary
    view_mask: np.ndarray            # (N, V) binary
    label_mask: np.ndarray           # (N, C) binary
    split: np.ndarray | None = None  # (N,) int tags, or None if unsplit
    meta: dict = field(default_factory=dict)

    @property
    def n_samples(self) -> int:
        return self.labels.shape[0]

    @property
    def n_views(self) -> int:
        return len(self.views)

    @property
    def n_labels(self) -> int:
        return self.labels.shape[1]

    @property
    def view_dims(self) -> list[int]:
        return [v.shape[1] for v in self.views]

    def rows(self, tag: str) -> np.ndarray:
        if self.split is None:
            raise DatasetError("dataset has no split tags")
        return np.flatnonzero(self.split == _SPLIT_NAMES[tag])

    def validate(self) -> "MultiViewDataset":
        if not self.views:
            raise DatasetError("dataset has no views")
        n = self.labels.shape[0]
        for i, v in enumerate(self.views):
            if v.ndim != 2 or v.shape[0] != n:
                raise DatasetError(f"view {i} has shape {v.shape}, expected ({n}, d)")
            if v.shape[1] == 0:
                raise DatasetError(f"view {i} is empty")
            if not np.all(np.isfinite(v)):
                raise DatasetError(f"view {i} contains non-finite entries")
        if not np.isin(self.labels, (0.0, 1.0)).all():
            raise DatasetError("labels must be binary")
        if self.view_mask.shape != (n, len(self.views)):
            raise DatasetError("view mask shape mismatch")
        if self.label_mask.shape != self.labels.shape:
            raise DatasetError("label mask shape mismatch")
        if not np.isin(self.view_mask, (0.0, 1.0)).all():
            raise DatasetError("view mask must be binary")
        if not np.isin(self.label_mask, (0.0, 1.0)).all():
            raise DatasetError("label mask must be binary")
        if (self.view_mask.sum(axis=1) < 1).any():
            raise DatasetError("every sample must retain at least one view")
        if self.split is not None:
            if self.split.shape != (n,):
                raise DatasetError("split shape mismatch")
            if not np.isin(self.split, (0, 1, 2)).all():
                raise DatasetError("split tags must be 0/1/2")
        return self

    def copy(self) -> "MultiViewDataset":
        return MultiViewDataset(
            views=[v.copy() for v in self.views],
            labels=self.labels.copy(),
            view_mask=self.view_mask.copy(),
            label_mask=self.label_mask.copy(),
            split=None if self.split is None else self.split.copy(),
            meta=dict(self.meta),
        )


# ---------------------------------------------------------------------------
# binary matrix format + CSV import
# ---------------------------------------------------------------------------

def write_matrix(path: str, mat: np.ndarray) -> None:
    mat = np.ascontiguousarray(mat, dtype=np.float64)
    if mat.ndim != 2:
        raise DatasetError("only 2-D matrices are stored")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(_MAGIC, mat.shape[0], mat.shape[1], 0))
        fh.write(mat.astype("<f8", copy=False).tobytes(order="C"))


def read_matrix(path: str) -> np.ndarray:
    with open(path, "rb") as fh:
        head = fh.read(_HEADER.size)
        if len(head) != _HEADER.size:
            raise DatasetError(f"{path}: truncated header")
        magic, rows, cols, _ = _HEADER.unpack(head)
        if magic != _MAGIC:
            raise DatasetError(f"{path}: bad magic {magic!r}")
        body = fh.read(rows * cols * 8)
    if len(body) != rows * cols * 8:
        raise DatasetError(f"{path}: truncated payload")
    return np.frombuffer(body, dtype="<f8").reshape(rows, cols).astype(np.float64)


def read_csv_matrix(path: str) -> np.ndarray:
    """Comma-separated numeric matrix; a non-numeric first row is a header."""
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if not rows:
        raise DatasetError(f"{path}: empty CSV")
    start = 0
    try:
        [float(x) for x in rows[0]]
    except ValueError:
        start = 1
    if start == len(rows):
        raise DatasetError(f"{path}: CSV has a header but no data")
    try:
        mat = np.array([[float(x) for x in r] for r in rows[start:]], dtype=np.float64)
    except ValueError as e:
        raise DatasetError(f"{path}: non-numeric CSV entry ({e})") from None
    if mat.ndim != 2:
        raise DatasetError(f"{path}: ragged CSV rows")
    return mat


def _read_any(path: str) -> np.ndarray:
    if path.endswith(".csv"):
        return read_csv_matrix(path)
    return read_matrix(path)


def write_dataset(dirpath: str, ds: MultiViewDataset) -> str:
    """Write manifest + matrix files under `dirpath`; returns manifest path."""
    ds.validate()
    os.makedirs(dirpath, exist_ok=True)
    files = {"views": [f"view_{i}.bin" for i in range(ds.n_views)],
             "labels": "labels.bin", "view_mask": "view_mask.bin",
             "label_mask": "label_mask.bin"}
    for name, v in zip(files["views"], ds.views):
        write_matrix(os.path.join(dirpath, name), v)
    write_matrix(os.path.join(dirpath, files["labels"]), ds.labels)
    write_matrix(os.path.join(dirpath, files["view_mask"]), ds.view_mask)
    write_matrix(os.path.join(dirpath, files["label_mask"]), ds.label_mask)
    if ds.split is not None:
        files["split"] = "split.bin"
        write_matrix(os.path.join(dirpath, files["split"]),
                     ds.split.astype(np.float64).reshape(-1, 1))
    manifest = {"n": ds.n_samples, "v": ds.n_views, "c": ds.n_labels,
                "d_v": ds.view_dims, "files": files, "meta": ds.meta}
    manifest_path = os.path.join(dirpath, "manifest.json")
    with open(manifest_path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest_path


def load_dataset(manifest_path: str) -> MultiViewDataset:
    """Load and validate a dataset; fails rather than silently padding."""
    if os.path.isdir(manifest_path):
        manifest_path = os.path.join(manifest_path, "manifest.json")
    try:
        with open(manifest_path) as fh:
            m = json.load(fh)
    except FileNotFoundError:
        raise DatasetError(f"manifest not found: {manifest_path}") from None
    except json.JSONDecodeError as e:
        raise DatasetError(f"manifest is not valid JSON: {e}") from None
    base = os.path.dirname(manifest_path)
    files = m.get("files", {})
    try:
        views = [_read_any(os.path.join(base, f)) for f in files["views"]]
        labels = _read_any(os.path.join(base, files["labels"]))
        view_mask = _read_any(os.path.join(base, files["view_mask"]))
        label_mask = _read_any(os.path.join(base, files["label_mask"]))
    except KeyError as e:
        raise DatasetError(f"manifest missing file entry {e}") from None
    except FileNotFoundError as e:
        raise DatasetError(f"referenced matrix file missing: {e.filename}") from None
    split = None
    if "split" in files:
        split = _read_any(os.path.join(base, files["split"]))
        split = split.reshape(-1).astype(np.int64)
    ds = MultiViewDataset(views, labels, view_mask, label_mask, split,
                          dict(m.get("meta", {})))
    ds.validate()
    if ds.n_samples != m["n"] or ds.n_views != m["v"] or ds.n_labels != m["c"]:
        raise DatasetError("manifest dimensions disagree with matrix files")
    if ds.view_dims != list(m["d_v"]):
        raise DatasetError("manifest d_v disagrees with view files")
    return ds


# ---------------------------------------------------------------------------
# splitting and missingness
# ---------------------------------------------------------------------------

def parse_ratios(text: str) -> tuple[float, float, float]:
    parts = [float(p) for p in text.split(":")]
    if len(parts) != 3 or min(parts) < 0 or sum(parts) <= 0:
        raise DatasetError(f"bad split ratio spec {text!r}")
    total = sum(parts)
    return tuple(p / total for p in parts)  # type: ignore[return-value]


def split_dataset(ds: MultiViewDataset, ratios=(0.7, 0.1, 0.2),
                  seed: int = 0) -> MultiViewDataset:
    """Tag samples train/val/test by contiguous blocks of a random permutation."""
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise DatasetError("split ratios must sum to 1")
    n = ds.n_samples
    n_train = int(np.floor(ratios[0] * n))
    n_val = int(np.floor(ratios[1] * n))
    n_test = n - n_train - n_val
    for size, ratio in zip((n_train, n_val, n_test), ratios):
        if ratio > 0 and size == 0:
            raise DatasetError(f"empty split: n={n} cannot honour ratios {ratios}")
    perm = RngStream(seed, 0).permutation(n)
    split = np.empty(n, dtype=np.int64)
    split[perm[:n_train]] = SPLIT_TRAIN
    split[perm[n_train:n_train + n_val]] = SPLIT_VAL
    split[perm[n_train + n_val:]] = SPLIT_TEST
    out = ds.copy()
    out.split = split
    out.meta["split_seed"] = seed
    out.meta["split_ratios"] = list(ratios)
    return out


def apply_missingness(ds: MultiViewDataset, spec: MissingnessSpec) -> MultiViewDataset:
    """Populate W and G with simulated feature / label missingness.

    Per view, floor(fmr*N) entries of W are zeroed uniformly at random, then
    rows left with no view get one uniformly chosen view re-enabled and a
    compensating removal elsewhere in the same view (when some other row can
    spare one). Per label column the same fraction of observed positives and
    of negatives is discarded; test rows always keep G = 1 because evaluation
    uses the complete label matrix.
    """
    if not (ds.view_mask == 1).all() or not (ds.label_mask == 1).all():
        raise DatasetError("apply_missingness expects all-ones masks")
    out = ds.copy()
    n, v = out.n_samples, out.n_views

    w_rng = RngStream(spec.seed, 1)
    w = out.view_mask
    n_drop = int(np.floor(spec.fmr * n))
    for view in range(v):
        if n_drop:
            w[w_rng.choice(n, n_drop), view] = 0.0
    # repair: every sample must keep at least one available view
    for i in np.flatnonzero(w.sum(axis=1) < 1):
        pick = int(w_rng.integer(0, v - 1))
        w[i, pick] = 1.0
        donors = np.flatnonzero((w[:, pick] == 1) & (w.sum(axis=1) >= 2))
        donors = donors[donors != i]
        if donors.size:
            w[donors[int(w_rng.integer(0, donors.size - 1))], pick] = 0.0

    g_rng = RngStream(spec.seed, 2)
    g = out.label_mask
    if out.split is not None:
        eligible = np.flatnonzero(out.split != SPLIT_TEST)
    else:
        eligible = np.arange(n)
    for c in range(out.n_labels):
        pos = eligible[out.labels[eligible, c] == 1]
        negs = eligible[out.labels[eligible, c] == 0]
        for group in (pos, negs):
            m = int(np.floor(spec.lmr * group.size))
            if m:
                g[group[g_rng.choice(group.size, m)], c] = 0.0

    # zero unavailable features so W is the single source of truth
    for view in range(v):
        out.views[view][w[:, view] == 0] = 0.0

    out.meta["fmr"] = spec.fmr
    out.meta["lmr"] = spec.lmr
    out.meta["missingness_seed"] = spec.seed
    return out.validate()


# ---------------------------------------------------------------------------
# synthetic data with known shared/private structure
# ---------------------------------------------------------------------------

def generate_synthetic(n: int, v: int, c: int, shared_dim: int = 8,
                       private_dim: int = 4, noise: float = 0.1,
                       seed: int = 0) -> MultiViewDataset:
    """Draw views from a shared latent plus per-view private latents.

    Each view is a fixed random linear map of [shared ; private] plus
    isotropic noise. Labels threshold linear scores of the shared latent so
    per-label positive rates land in [0.2, 0.5]; consecutive label pairs
    partially share weight vectors, which induces co-occurrence structure.
    """
    if min(n, v, c, shared_dim, private_dim) < 1:
        raise DatasetError("all synthetic dimensions must be >= 1")
    rng = RngStream(seed, 0)
    shared = rng.normal((n, shared_dim))
    d_v = shared_dim + private_dim

    views = []
    for view in range(v):
        private = rng.normal((n, private_dim))
        lin = rng.normal((shared_dim + private_dim, d_v))
        lin /= np.sqrt((lin * lin).sum(axis=0, keepdims=True))
        x = np.concatenate([shared, private], axis=1) @ lin
        if noise > 0:
            x = x + noise * rng.normal((n, d_v))
        views.append(x)

    weights = np.zeros((c, shared_dim))
    for j in range(c):
        if j % 2 == 1:
            fresh = rng.normal((shared_dim,))
            weights[j] = 0.85 * weights[j - 1] + 0.55 * fresh
        else:
            weights[j] = rng.normal((shared_dim,))
        weights[j] /= np.sqrt((weights[j] ** 2).sum())

    scores = shared @ weights.T
    rates = rng.uniform(0.2, 0.5, (c,))
    labels = np.zeros((n, c))
    for j in range(c):
        cut = np.quantile(scores[:, j], 1.0 - rates[j])
        labels[:, j] = (scores[:, j] > cut).astype(np.float64)

    ds = MultiViewDataset(
        views=views, labels=labels,
        view_mask=np.ones((n, v)), label_mask=np.ones((n, c)),
        meta={"synthetic_seed": seed, "shared_dim": shared_dim,
              "private_dim": private_dim, "noise": noise},
    )
    return ds.validate()
