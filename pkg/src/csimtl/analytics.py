"""Feature statistics that justify segmenting the dataset by subregion.

Power angular spectrum / power delay profile per sample, empirical
distributions, energy-coverage intervals, and sample Pearson correlation
matrices, plus CSV emission for external plotting.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

PAS = "PAS"
PDP = "PDP"


@dataclass
class FeatureVector:
    """Per-bin energy vector of one sample (PAS over angle, PDP over delay)."""

    kind: str
    values: np.ndarray
    sample_id: int = -1


@dataclass
class CorrelationMatrix:
    matrix: np.ndarray
    task_slices: dict[int, tuple[int, int]] = field(default_factory=dict)
    degenerate: list[int] = field(default_factory=list)


def pas(tensor: np.ndarray, sample_id: int = -1) -> FeatureVector:
    """Energy per angle bin: (1/n_tx) * ||angle-bin slice||^2, length n_tx."""
    t = np.asarray(tensor, dtype=np.float64)
    vals = (t ** 2).sum(axis=(1, 2)) / t.shape[0]
    return FeatureVector(kind=PAS, values=vals, sample_id=sample_id)


def pdp(tensor: np.ndarray, sample_id: int = -1) -> FeatureVector:
    """Energy per delay bin: (1/n_c) * ||delay-bin slice||^2, length n_c."""
    t = np.asarray(tensor, dtype=np.float64)
    vals = (t ** 2).sum(axis=(0, 2)) / t.shape[1]
    return FeatureVector(kind=PDP, values=vals, sample_id=sample_id)


def batch_pas(tensors: np.ndarray) -> np.ndarray:
    t = np.asarray(tensors, dtype=np.float64)
    return (t ** 2).sum(axis=(2, 3)) / t.shape[1]


def batch_pdp(tensors: np.ndarray) -> np.ndarray:
    t = np.asarray(tensors, dtype=np.float64)
    return (t ** 2).sum(axis=(1, 3)) / t.shape[2]


def coverage_interval(features: list[FeatureVector],
                      level: float = 0.95) -> tuple[int, int]:
    """Smallest contiguous bin interval holding >= level of aggregate energy.

    Ties break toward the lower starting index.  Returns inclusive (lo, hi).
    """
    if not (0.0 < level <= 1.0):
        raise ValueError("level must lie in (0, 1]")
    if not features:
        raise ValueError("no feature vectors given")
    kinds = {f.kind for f in features}
    lengths = {len(f.values) for f in features}
    if len(kinds) != 1 or len(lengths) != 1:
        raise ValueError("feature vectors must share kind and length")
    energy = np.sum([f.values for f in features], axis=0)
    total = energy.sum()
    if total <= 0:
        return (0, 0)
    target = level * total
    prefix = np.concatenate([[0.0], np.cumsum(energy)])
    n = len(energy)
    for width in range(1, n + 1):
        sums = prefix[width:] - prefix[:-width]
        hits = np.nonzero(sums >= target - 1e-12 * total)[0]
        if hits.size:
            lo = int(hits[0])
            return (lo, lo + width - 1)
    return (0, n - 1)


def pearson_matrix(samples, task_slices: dict[int, tuple[int, int]] | None = None
                   ) -> CorrelationMatrix:
    """Pearson correlation between flattened samples.

    Samples with zero variance are reported as degenerate and their
    off-diagonal entries set to 0 instead of NaN.
    """
    flat = np.stack([np.asarray(s, dtype=np.float64).ravel() for s in samples])
    if flat.shape[0] < 2:
        raise ValueError("need at least two samples")
    centered = flat - flat.mean(axis=1, keepdims=True)
    norms = np.sqrt((centered ** 2).sum(axis=1))
    degenerate = [int(i) for i in np.nonzero(norms == 0)[0]]
    safe = np.where(norms == 0, 1.0, norms)
    unit = centered / safe[:, None]
    mat = unit @ unit.T
    np.clip(mat, -1.0, 1.0, out=mat)
    if degenerate:
        mat[degenerate, :] = 0.0
        mat[:, degenerate] = 0.0
    np.fill_diagonal(mat, 1.0)
    return CorrelationMatrix(matrix=mat, task_slices=task_slices or {},
                             degenerate=degenerate)


def histogram(features: list[FeatureVector], bins: int):
    """Empirical PDF over all per-bin feature values (density normalized)."""
    if bins < 1:
        raise ValueError("bins must be >= 1")
    values = np.concatenate([np.asarray(f.values, dtype=np.float64).ravel()
                             for f in features])
    density, edges = np.histogram(values, bins=bins, density=True)
    return density, edges


def write_histogram_csv(path, density: np.ndarray, edges: np.ndarray) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["bin_lo", "bin_hi", "density"])
        for lo, hi, d in zip(edges[:-1], edges[1:], density):
            writer.writerow([f"{lo:.9g}", f"{hi:.9g}", f"{d:.9g}"])


def write_intervals_csv(path, rows: list[tuple[int, str, int, int]]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["task", "kind", "lo_bin", "hi_bin"])
        for task, kind, lo, hi in rows:
            writer.writerow([task, kind, lo, hi])


def write_correlation_csv(path, corr: CorrelationMatrix) -> None:
    """Row-major matrix dump; the header row records task boundaries."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        bounds = ";".join(f"{k}:{lo}-{hi}" for k, (lo, hi)
                          in sorted(corr.task_slices.items()))
        writer.writerow(["task_boundaries", bounds,
                         "degenerate", ";".join(map(str, corr.degenerate))])
        for row in corr.matrix:
            writer.writerow([f"{v:.6f}" for v in row])
