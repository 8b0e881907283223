"""Labeled datasets: manifests, feature stores, SMOTE balancing and stratified folds."""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    BadFeatureStore,
    ClassTooSmall,
    ConfigError,
    DegenerateFeatures,
    EmptyManifest,
    MissingColumn,
    TooFewSamples,
    UnknownLabel,
    UnreadableRow,
)

FSTR_MAGIC = b"FSTR"


@dataclass(frozen=True)
class LabeledDataset:
    """``features`` is ``(N, D)``, ``labels`` holds ``N`` ints in ``[0, C)``."""

    features: np.ndarray
    labels: np.ndarray
    class_names: tuple

    def __post_init__(self):
        x = np.asarray(self.features, dtype=np.float64)
        y = np.asarray(self.labels, dtype=np.int64)
        if x.ndim != 2:
            raise DegenerateFeatures(f"features must be 2-D, got shape {x.shape}")
        if x.shape[1] == 0:
            raise DegenerateFeatures("feature dimension D must be > 0")
        if y.shape != (x.shape[0],):
            raise ConfigError(f"{x.shape[0]} feature rows but {y.size} labels")
        c = len(self.class_names)
        if y.size and (y.min() < 0 or y.max() >= c):
            raise ConfigError(f"labels must lie in [0, {c})")
        missing = sorted(set(range(c)) - set(np.unique(y).tolist()))
        if missing:
            raise TooFewSamples(f"classes {[self.class_names[i] for i in missing]} have no samples")
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "labels", y)
        object.__setattr__(self, "class_names", tuple(self.class_names))

    def __len__(self):
        return self.labels.size

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.n_classes)


@dataclass(frozen=True)
class ManifestEntry:
    path: Path
    label: int


@dataclass(frozen=True)
class Manifest:
    entries: tuple
    class_names: tuple

    def __len__(self):
        return len(self.entries)


def load_manifest(path) -> Manifest:
    """Read a ``path,label`` CSV; labels map to indices in sorted name order.

    Relative paths are resolved against the manifest's directory. Duplicate
    rows are kept.
    """
    path = Path(path)
    base = path.parent
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        fields = [f.strip() for f in (reader.fieldnames or [])]
        for col in ("path", "label"):
            if col not in fields:
                raise MissingColumn(f"manifest {path} lacks a {col!r} column")
        reader.fieldnames = fields
        rows = []
        for lineno, row in enumerate(reader, start=2):
            p, lab = row.get("path"), row.get("label")
            if p is None or lab is None or None in row:
                raise UnreadableRow(f"{path}:{lineno}: malformed row")
            p, lab = p.strip(), lab.strip()
            if not p:
                raise UnreadableRow(f"{path}:{lineno}: empty path")
            if not lab:
                raise UnknownLabel(f"{path}:{lineno}: empty label")
            rows.append((p, lab))
    if not rows:
        raise EmptyManifest(f"manifest {path} has no rows")

    names = tuple(sorted({lab for _, lab in rows}))
    index = {n: i for i, n in enumerate(names)}
    entries = tuple(
        ManifestEntry(Path(p) if Path(p).is_absolute() else base / p, index[lab]) for p, lab in rows
    )
    return Manifest(entries, names)


# -- feature store -----------------------------------------------------------

def save_feature_store(path, ds: LabeledDataset) -> None:
    """Write ``FSTR`` header, f32 rows, u16 labels and the class-name table."""
    n, d = ds.features.shape
    parts = [
        struct.pack("<4sIII", FSTR_MAGIC, n, d, ds.n_classes),
        np.ascontiguousarray(ds.features, dtype="<f4").tobytes(),
        ds.labels.astype("<u2").tobytes(),
    ]
    for name in ds.class_names:
        raw = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw)) + raw)
    Path(path).write_bytes(b"".join(parts))


def load_feature_store(path) -> LabeledDataset:
    data = Path(path).read_bytes()
    if len(data) < 16 or data[:4] != FSTR_MAGIC:
        raise BadFeatureStore(f"{path} is not a feature store")
    _, n, d, c = struct.unpack_from("<4sIII", data)
    pos = 16
    need = pos + 4 * n * d + 2 * n
    if len(data) < need:
        raise BadFeatureStore(f"{path} is truncated")
    feats = np.frombuffer(data, dtype="<f4", count=n * d, offset=pos).reshape(n, d)
    pos += 4 * n * d
    labels = np.frombuffer(data, dtype="<u2", count=n, offset=pos).astype(np.int64)
    pos += 2 * n
    names = []
    for _ in range(c):
        if pos + 2 > len(data):
            raise BadFeatureStore(f"{path} class table is truncated")
        (ln,) = struct.unpack_from("<H", data, pos)
        names.append(data[pos + 2 : pos + 2 + ln].decode("utf-8"))
        pos += 2 + ln
    return LabeledDataset(feats.astype(np.float64), labels, tuple(names))


# -- SMOTE -------------------------------------------------------------------

@dataclass(frozen=True)
class SmoteParams:
    k_neighbors: int = 5
    rng_seed: int = 0

    def __post_init__(self):
        if int(self.k_neighbors) < 1:
            raise ConfigError(f"k_neighbors must be >= 1, got {self.k_neighbors}")


def nearest_neighbors(x: np.ndarray, k: int) -> np.ndarray:
    """Indices of the ``k`` nearest rows of ``x`` for each row (self excluded).

    Euclidean distance; ties go to the lower index.
    """
    sq = np.einsum("ij,ij->i", x, x)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (x @ x.T)
    np.fill_diagonal(d2, np.inf)
    return np.argsort(d2, axis=1, kind="stable")[:, :k]


@dataclass(frozen=True)
class SmoteProvenance:
    """For synthetic row ``j``: ``base[j] + lam[j] * (neighbor[j] - base[j])``."""

    base: np.ndarray
    neighbor: np.ndarray
    lam: np.ndarray


def smote_balance(ds: LabeledDataset, params: SmoteParams = SmoteParams(),
                  return_provenance: bool = False):
    """Oversample every class up to the majority count.

    Each synthetic vector interpolates an original sample of the class with
    one of its ``k`` nearest same-class neighbours, at a uniform ``lambda``
    drawn from a generator seeded with ``params.rng_seed``. Originals come
    first, unchanged; synthetic rows follow grouped by class index.
    ``k`` is clamped to ``class_count - 1``.
    """
    x, y = ds.features, ds.labels
    if x.shape[1] == 0:
        raise DegenerateFeatures("feature dimension D must be > 0")
    counts = ds.class_counts()
    target = int(counts.max())
    rng = np.random.default_rng(params.rng_seed)

    new_x, new_y, base, nbr, lams = [], [], [], [], []
    for c in range(ds.n_classes):
        need = target - int(counts[c])
        if need == 0:
            continue
        members = np.flatnonzero(y == c)
        if members.size < 2:
            raise TooFewSamples(f"class {ds.class_names[c]!r} has {members.size} sample(s); SMOTE needs 2")
        k = min(int(params.k_neighbors), members.size - 1)
        xc = x[members]
        knn = nearest_neighbors(xc, k)
        b = rng.integers(0, members.size, size=need)
        pick = rng.integers(0, k, size=need)
        lam = rng.random(need)
        nn = knn[b, pick]
        new_x.append(xc[b] + lam[:, None] * (xc[nn] - xc[b]))
        new_y.append(np.full(need, c))
        base.append(members[b])
        nbr.append(members[nn])
        lams.append(lam)

    if not new_x:
        out = ds
        prov = SmoteProvenance(np.empty(0, int), np.empty(0, int), np.empty(0))
    else:
        out = LabeledDataset(
            np.vstack([x] + new_x), np.concatenate([y] + new_y), ds.class_names
        )
        prov = SmoteProvenance(np.concatenate(base), np.concatenate(nbr), np.concatenate(lams))
    return (out, prov) if return_provenance else out


# -- stratified folds ----------------------------------------------------------

@dataclass(frozen=True)
class FoldPlan:
    k: int
    assignments: np.ndarray

    def split(self, fold: int) -> tuple[np.ndarray, np.ndarray]:
        """``(train_indices, validation_indices)`` for one fold."""
        val = np.flatnonzero(self.assignments == fold)
        train = np.flatnonzero(self.assignments != fold)
        return train, val

    def __iter__(self):
        return (self.split(i) for i in range(self.k))


def stratified_kfold(ds_or_labels, k: int = 10, seed: int = 0) -> FoldPlan:
    """Shuffle each class with ``seed`` and deal it round-robin into ``k`` folds.

    The dealing position carries over from one class to the next so total
    fold sizes also stay within one of each other.
    """
    labels = np.asarray(getattr(ds_or_labels, "labels", ds_or_labels), dtype=np.int64)
    if int(k) < 2:
        raise ConfigError(f"k must be >= 2, got {k}")
    k = int(k)
    rng = np.random.default_rng(seed)
    assign = np.full(labels.size, -1, dtype=np.int64)
    offset = 0
    for c in np.unique(labels):
        members = np.flatnonzero(labels == c)
        if members.size < k:
            raise ClassTooSmall(f"class {c} has {members.size} samples, fewer than k={k}")
        perm = rng.permutation(members)
        assign[perm] = (offset + np.arange(perm.size)) % k
        offset = (offset + perm.size) % k
    return FoldPlan(k, assign)
