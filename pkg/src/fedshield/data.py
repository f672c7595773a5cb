"""Dataset handling: synthetic blob generation, CSV ingestion, Dirichlet
non-IID partitioning across clients, stratified splitting, and the
label-flipping attack transform.

CSV format: comma separated, optional header row, UTF-8, decimal-point
floats. All non-label columns must be numeric; the label column may hold
arbitrary tokens and is densely re-encoded to 0..C-1 (numeric token sets
sort numerically, anything else lexicographically, so re-encoding an
already-encoded file is a no-op). Feature columns are z-score normalized
per column at ingestion; a constant column normalizes to all zeros.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np


class InvalidSpecError(ValueError):
    """Synthetic-data or attack parameters outside their valid range."""


class CsvParseError(ValueError):
    """Structurally malformed CSV (reports the offending row)."""


class NonNumericFeatureError(ValueError):
    """A feature cell failed float parsing (reports row and column)."""


class MissingLabelColumnError(ValueError):
    """The requested label column does not exist in the file."""


class InvalidAlphaError(ValueError):
    """Dirichlet concentration must be strictly positive."""


class NoSourceSamplesWarning(UserWarning):
    """flip_labels found no samples of the source class; data returned unchanged."""


@dataclass
class Dataset:
    """A dense labelled dataset: (N, D) float64 features, N integer labels."""

    features: np.ndarray
    labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2 or self.features.shape[0] == 0 or self.features.shape[1] == 0:
            raise InvalidSpecError(f"features must be a non-empty 2-D matrix, got shape {self.features.shape}")
        if self.labels.shape != (self.features.shape[0],):
            raise InvalidSpecError("labels must be one integer per feature row")
        if not np.all(np.isfinite(self.features)):
            raise InvalidSpecError("features contain non-finite values")
        if self.num_classes < 1 or self.labels.min() < 0 or self.labels.max() >= self.num_classes:
            raise InvalidSpecError("labels must lie in [0, num_classes)")

    @property
    def num_samples(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def copy(self) -> "Dataset":
        return Dataset(self.features.copy(), self.labels.copy(), self.num_classes)

    def subset(self, indices: np.ndarray) -> "Dataset":
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(self.features[idx].copy(), self.labels[idx].copy(), self.num_classes)


@dataclass(frozen=True)
class AttackSpec:
    """Label-flipping attack: relabel a fraction of source-class samples as
    the target class, features untouched."""

    source_class: int
    target_class: int
    flip_fraction: float = 1.0

    def validate_for(self, num_classes: int) -> None:
        if self.source_class == self.target_class:
            raise InvalidSpecError("source_class must differ from target_class")
        for name, cls in (("source_class", self.source_class), ("target_class", self.target_class)):
            if not 0 <= cls < num_classes:
                raise InvalidSpecError(f"{name}={cls} outside [0, {num_classes})")
        if not 0.0 < self.flip_fraction <= 1.0:
            raise InvalidSpecError(f"flip_fraction={self.flip_fraction} outside (0, 1]")


@dataclass(frozen=True)
class PartitionPlan:
    """Per-client row indices into a parent Dataset (disjoint, covering)."""

    client_indices: list[np.ndarray]
    alpha: float
    seed: int

    @property
    def num_clients(self) -> int:
        return len(self.client_indices)


def _spread_centers(num_classes: int, dim: int, separation: float, rng: np.random.Generator) -> np.ndarray:
    """Class centers with pairwise distance >= separation.

    When they fit, centers form a zero-mean regular simplex with every
    pairwise distance exactly equal to the separation (the tightest legal
    placement, so the stated separation is the real difficulty of the
    problem); otherwise rejection-samples Gaussian candidates on a growing
    radius.
    """
    if num_classes <= dim + 1:
        # regular (C-1)-simplex: start from scaled identity columns, center
        # it, then rescale so pairwise distances equal `separation`
        corners = np.zeros((num_classes, dim))
        corners[:, :num_classes] = np.eye(num_classes)
        centered = corners - corners.mean(axis=0)
        return centered * (separation / np.sqrt(2.0))
    centers: list[np.ndarray] = []
    radius = separation
    attempts = 0
    while len(centers) < num_classes:
        cand = rng.normal(0.0, radius, size=dim)
        if all(np.linalg.norm(cand - c) >= separation for c in centers):
            centers.append(cand)
        attempts += 1
        if attempts % 200 == 0:
            radius *= 1.5
    return np.asarray(centers)


def generate_synthetic(
    num_classes: int,
    samples_per_class: int,
    dim: int,
    class_separation: float,
    seed: int,
) -> Dataset:
    """Isotropic unit-variance Gaussian blobs, one per class, with class
    centers at pairwise distance >= class_separation. Deterministic per seed;
    rows are grouped by class with exact per-class counts."""
    if num_classes < 2:
        raise InvalidSpecError("need at least 2 classes")
    if dim < 2:
        raise InvalidSpecError("need dim >= 2")
    if class_separation <= 0:
        raise InvalidSpecError("class_separation must be positive")
    if samples_per_class < 1:
        raise InvalidSpecError("need at least one sample per class")
    rng = np.random.default_rng(seed)
    centers = _spread_centers(num_classes, dim, class_separation, rng)
    features = np.concatenate(
        [centers[c] + rng.standard_normal((samples_per_class, dim)) for c in range(num_classes)]
    )
    labels = np.repeat(np.arange(num_classes, dtype=np.int64), samples_per_class)
    return Dataset(features, labels, num_classes)


def _encode_labels(tokens: list[str]) -> tuple[np.ndarray, int]:
    unique = sorted(set(tokens))
    try:
        unique.sort(key=int)
    except ValueError:
        pass  # non-numeric tokens keep lexicographic order
    mapping = {tok: i for i, tok in enumerate(unique)}
    return np.asarray([mapping[t] for t in tokens], dtype=np.int64), len(unique)


def load_csv(path: str | Path, label_column: str | int) -> Dataset:
    """Parse a delimited file into a normalized Dataset.

    label_column selects by header name (requires a header row) or by
    0-based position. The header row is auto-detected: if any feature cell
    of the first row fails float parsing, the row is treated as a header.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        rows = [row for row in csv.reader(fh) if row]
    if not rows:
        raise CsvParseError(f"{path}: file contains no rows")

    width = len(rows[0])
    if isinstance(label_column, str):
        if label_column not in rows[0]:
            raise MissingLabelColumnError(f"{path}: no column named {label_column!r} in header {rows[0]}")
        label_idx = rows[0].index(label_column)
        data_rows = rows[1:]
        first_data_row = 2
    else:
        label_idx = label_column
        if not 0 <= label_idx < width:
            raise MissingLabelColumnError(f"{path}: label column index {label_idx} outside 0..{width - 1}")
        header = False
        for j, cell in enumerate(rows[0]):
            if j == label_idx:
                continue
            try:
                float(cell)
            except ValueError:
                header = True
                break
        data_rows = rows[1:] if header else rows
        first_data_row = 2 if header else 1
    if not data_rows:
        raise CsvParseError(f"{path}: no data rows")

    features = np.empty((len(data_rows), width - 1))
    tokens: list[str] = []
    for i, row in enumerate(data_rows):
        if len(row) != width:
            raise CsvParseError(f"{path}: row {first_data_row + i} has {len(row)} fields, expected {width}")
        k = 0
        for j, cell in enumerate(row):
            if j == label_idx:
                tokens.append(cell.strip())
                continue
            try:
                features[i, k] = float(cell)
            except ValueError:
                raise NonNumericFeatureError(
                    f"{path}: non-numeric feature {cell!r} at row {first_data_row + i}, column {j + 1}"
                ) from None
            k += 1

    mean = features.mean(axis=0)
    std = features.std(axis=0)
    std[std < 1e-12] = 1.0  # constant columns normalize to zero
    features = (features - mean) / std
    labels, num_classes = _encode_labels(tokens)
    return Dataset(features, labels, num_classes)


def write_csv(data: Dataset, path: str | Path, label_name: str = "label") -> None:
    """Serialize a Dataset with a header row; inverse-friendly with load_csv."""
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"f{j}" for j in range(data.dim)] + [label_name])
        for x, y in zip(data.features, data.labels):
            writer.writerow([f"{v:.17g}" for v in x] + [int(y)])


def dirichlet_partition(data: Dataset, num_clients: int, alpha: float, seed: int) -> PartitionPlan:
    """Split sample indices across clients with per-class Dirichlet draws.

    For each class, client proportions p ~ Dirichlet(alpha * 1) are drawn
    and that class's samples are dealt out multinomially by p. Smaller
    alpha means more skew. If any client ends up empty the whole draw is
    retried (up to 10 times), after which the emptiest clients are topped
    up round-robin from the largest ones, so the plan is always disjoint,
    covering, and leaves no client empty.
    """
    if alpha <= 0 or not np.isfinite(alpha):
        raise InvalidAlphaError(f"alpha must be positive and finite, got {alpha}")
    if num_clients < 2:
        raise InvalidSpecError("need at least 2 clients")
    if data.num_samples < num_clients:
        raise InvalidSpecError(f"{data.num_samples} samples cannot cover {num_clients} clients")
    rng = np.random.default_rng(seed)

    assignments: list[list[int]] = []
    for _ in range(10):
        per_client: list[list[int]] = [[] for _ in range(num_clients)]
        for c in range(data.num_classes):
            idx = np.nonzero(data.labels == c)[0]
            rng.shuffle(idx)
            counts = rng.multinomial(idx.size, rng.dirichlet(np.full(num_clients, alpha)))
            start = 0
            for client, count in enumerate(counts):
                per_client[client].extend(idx[start : start + count].tolist())
                start += count
        if all(per_client):
            assignments = per_client
            break
    else:
        assignments = per_client
        # round-robin top-up: move one sample at a time from the currently
        # largest client to each still-empty one
        for client in range(num_clients):
            if assignments[client]:
                continue
            donor = max(range(num_clients), key=lambda i: (len(assignments[i]), -i))
            assignments[client].append(assignments[donor].pop())

    client_indices = [np.asarray(sorted(ids), dtype=np.int64) for ids in assignments]
    return PartitionPlan(client_indices=client_indices, alpha=alpha, seed=seed)


def flip_labels(data: Dataset, spec: AttackSpec, seed: int) -> Dataset:
    """Return a copy with a uniformly chosen flip_fraction of source-class
    labels rewritten to the target class. Features are untouched. The flip
    count is floor(fraction * count), but at least 1 when any source sample
    exists. With no source samples a NoSourceSamplesWarning is emitted and
    the copy is returned unchanged."""
    spec.validate_for(data.num_classes)
    out = data.copy()
    source_rows = np.nonzero(out.labels == spec.source_class)[0]
    if source_rows.size == 0:
        warnings.warn(
            f"no samples of source class {spec.source_class}; labels unchanged",
            NoSourceSamplesWarning,
            stacklevel=2,
        )
        return out
    n_flip = max(1, int(spec.flip_fraction * source_rows.size))
    rng = np.random.default_rng(seed)
    chosen = rng.choice(source_rows, size=n_flip, replace=False)
    out.labels[chosen] = spec.target_class
    return out


def stratified_split(data: Dataset, test_fraction: float = 0.2, seed: int = 0) -> tuple[Dataset, Dataset]:
    """Split into (train, test) with per-class proportional sampling.

    Every class keeps at least one training sample; classes with at least
    two samples contribute at least one test sample so held-out metrics
    (in particular source-class recall) stay defined.
    """
    if not 0.0 < test_fraction < 1.0:
        raise InvalidSpecError("test_fraction must be in (0, 1)")
    rng = np.random.default_rng(seed)
    test_idx: list[int] = []
    for c in range(data.num_classes):
        idx = np.nonzero(data.labels == c)[0]
        if idx.size < 2:
            continue
        n_test = min(idx.size - 1, max(1, round(test_fraction * idx.size)))
        test_idx.extend(rng.choice(idx, size=n_test, replace=False).tolist())
    test_mask = np.zeros(data.num_samples, dtype=bool)
    test_mask[test_idx] = True
    return data.subset(np.nonzero(~test_mask)[0]), data.subset(np.nonzero(test_mask)[0])
