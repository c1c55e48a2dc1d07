"""Partition comparison and stability analysis.

Similarity between two partitions of the same node set is measured with
mutual information and a normalized variation of information,

    VI(A, B) = 1 - I(A, B) / H(A, B),

where I is the mutual information and H the joint entropy of the label
pair of a uniformly drawn node (natural logarithms). VI is 0 for
identical partitions, 1 for independent ones, and satisfies the triangle
inequality. Repeated detections are summarized by a co-occurrence matrix
ordered with average-linkage clustering.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.cluster.hierarchy import linkage
from scipy.spatial.distance import squareform

from .community import Partition, detect
from .panels import (
    RESOLUTION_STEPS,
    Resolution,
    ReturnPanel,
    SpreadPanel,
    log_returns,
    standardize,
    windows,
)
from .rng import derive_seed


def _labels(partition) -> np.ndarray:
    if isinstance(partition, Partition):
        return np.asarray(partition.labels)
    return np.asarray(partition, dtype=int)


def _joint_terms(a, b):
    """Joint, row, and column probabilities of the nonzero contingency cells."""
    a = _labels(a)
    b = _labels(b)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError(
            f"partitions must label the same nodes, got shapes {a.shape} and {b.shape}"
        )
    if a.shape[0] == 0:
        raise ValueError("partitions must be non-empty")
    _, a_idx = np.unique(a, return_inverse=True)
    _, b_idx = np.unique(b, return_inverse=True)
    n_a = int(a_idx.max()) + 1
    n_b = int(b_idx.max()) + 1
    counts = np.zeros((n_a, n_b), dtype=np.int64)
    np.add.at(counts, (a_idx, b_idx), 1)
    total = a.shape[0]
    rows, cols = np.nonzero(counts)
    p_ab = counts[rows, cols] / total
    p_a = counts.sum(axis=1) / total
    p_b = counts.sum(axis=0) / total
    return p_ab, p_a[rows], p_b[cols]


def mutual_information(a, b) -> float:
    """Mutual information of two labelings, in nats."""
    p_ab, p_a, p_b = _joint_terms(a, b)
    terms = [
        p * (math.log(p) - (math.log(pa) + math.log(pb)))
        for p, pa, pb in zip(p_ab, p_a, p_b)
    ]
    return max(0.0, math.fsum(terms))


def joint_entropy(a, b) -> float:
    """Entropy of the joint label distribution, in nats."""
    p_ab, _, _ = _joint_terms(a, b)
    return max(0.0, -math.fsum(p * math.log(p) for p in p_ab))


def variation_of_information(a, b) -> float:
    """Normalized variation of information, 1 - I/H.

    Zero joint entropy happens only when both partitions are the trivial
    single community; the distance is then 0 (the partitions coincide)
    and a warning is raised because the normalization is degenerate.
    """
    p_ab, p_a, p_b = _joint_terms(a, b)
    info_terms = [
        p * (math.log(p) - (math.log(pa) + math.log(pb)))
        for p, pa, pb in zip(p_ab, p_a, p_b)
    ]
    entropy_terms = [-p * math.log(p) for p in p_ab]
    info = math.fsum(info_terms)
    entropy = math.fsum(entropy_terms)
    if entropy <= 0.0:
        warnings.warn(
            "joint entropy is zero (both partitions are a single community); "
            "normalized distance defaults to 0",
            stacklevel=2,
        )
        return 0.0
    vi = 1.0 - info / entropy
    return min(1.0, max(0.0, vi))


@dataclass
class CooccurrenceMatrix:
    """Fraction of partitions placing each node pair together.

    ``order`` arranges nodes by average-linkage clustering of the
    co-occurrence distances, with the deterministic convention that the
    subtree containing the smaller original index comes first.
    """

    entries: np.ndarray
    order: np.ndarray

    @property
    def n_nodes(self) -> int:
        return self.entries.shape[0]

    def ordered(self) -> np.ndarray:
        return self.entries[np.ix_(self.order, self.order)]


def _linkage_leaf_order(merge_table: np.ndarray, n: int) -> np.ndarray:
    """Leaf order with the smaller-minimum-index subtree first at each merge."""
    orders: dict[int, list[int]] = {}
    minima: dict[int, int] = {}
    for leaf in range(n):
        orders[leaf] = [leaf]
        minima[leaf] = leaf
    for step in range(merge_table.shape[0]):
        left = int(merge_table[step, 0])
        right = int(merge_table[step, 1])
        if minima[right] < minima[left]:
            left, right = right, left
        node = n + step
        orders[node] = orders.pop(left) + orders.pop(right)
        minima[node] = min(minima.pop(left), minima.pop(right))
    return np.asarray(orders[n + merge_table.shape[0] - 1], dtype=int)


def cooccurrence(partitions) -> CooccurrenceMatrix:
    """Co-occurrence frequencies across a sequence of partitions."""
    partitions = list(partitions)
    if not partitions:
        raise ValueError("need at least one partition")
    label_sets = [_labels(p) for p in partitions]
    n = label_sets[0].shape[0]
    for labels in label_sets:
        if labels.shape[0] != n:
            raise ValueError("all partitions must cover the same node set")
    acc = np.zeros((n, n))
    for labels in label_sets:
        onehot = np.zeros((n, int(labels.max()) + 1))
        onehot[np.arange(n), labels] = 1.0
        acc += onehot @ onehot.T
    entries = acc / len(label_sets)
    np.fill_diagonal(entries, 1.0)
    if n == 1:
        order = np.zeros(1, dtype=int)
    else:
        distance = 1.0 - entries
        np.fill_diagonal(distance, 0.0)
        condensed = squareform((distance + distance.T) / 2.0, checks=False)
        merge_table = linkage(condensed, method="average")
        order = _linkage_leaf_order(merge_table, n)
    return CooccurrenceMatrix(entries=entries, order=order)


@dataclass
class StabilityReport:
    """Partition stability across resolutions or time windows.

    ``vi_matrix`` holds all pairwise distances between the listed
    partitions; in sliding-window mode the full-period partition is
    appended as the final row and column (unless the single window already
    is the full period). ``vi_vs_first`` compares each partition against
    the first one.
    """

    mode: str
    labels: list[str]
    partitions: list[Partition]
    vi_matrix: np.ndarray
    vi_vs_first: np.ndarray
    cooccurrence: CooccurrenceMatrix


def _pairwise_vi(parts: list[Partition]) -> np.ndarray:
    k = len(parts)
    out = np.zeros((k, k))
    for i in range(k):
        for j in range(i + 1, k):
            value = variation_of_information(parts[i], parts[j])
            out[i, j] = value
            out[j, i] = value
    return out


def stability_study(
    panel: SpreadPanel,
    mode: str,
    *,
    seed: int = 0,
    restarts: int = 10,
    resolutions=tuple(RESOLUTION_STEPS.values()),
    window_days: int = 126,
    include_below_bulk: bool = True,
    market_sign_threshold: float = 0.95,
) -> StabilityReport:
    """Re-run detection across sampling resolutions or time windows.

    ``mode="multiresolution"`` detects on log-returns at each requested
    resolution; ``mode="sliding_window"`` detects on consecutive windows
    of ``window_days`` daily returns, each standardized on its own
    observations, and additionally on the full period.
    """
    if mode == "multiresolution":
        parts: list[Partition] = []
        labels: list[str] = []
        for step in resolutions:
            res = Resolution.parse(step)
            returns = standardize(log_returns(panel, res))
            parts.append(
                detect(
                    returns,
                    seed=derive_seed(seed, "stability/resolution", res.step),
                    restarts=restarts,
                    include_below_bulk=include_below_bulk,
                    market_sign_threshold=market_sign_threshold,
                )
            )
            labels.append(res.label)
        vi_matrix = _pairwise_vi(parts)
        return StabilityReport(
            mode=mode,
            labels=labels,
            partitions=parts,
            vi_matrix=vi_matrix,
            vi_vs_first=vi_matrix[0].copy(),
            cooccurrence=cooccurrence(parts),
        )

    if mode == "sliding_window":
        daily = log_returns(panel, 1)
        pieces = windows(daily, window_days)
        if not pieces:
            raise ValueError(
                f"panel yields no window of {window_days} observations"
            )
        parts = []
        labels = []
        for w_index, piece in enumerate(pieces):
            parts.append(
                detect(
                    standardize(piece),
                    seed=derive_seed(seed, "stability/window", w_index),
                    restarts=restarts,
                    include_below_bulk=include_below_bulk,
                    market_sign_threshold=market_sign_threshold,
                )
            )
            labels.append(
                f"{piece.dates[0].isoformat()}..{piece.dates[-1].isoformat()}"
            )
        window_parts = list(parts)
        window_vi = _pairwise_vi(window_parts)
        covers_everything = (
            len(pieces) == 1 and pieces[0].n_obs == daily.n_obs
        )
        if not covers_everything:
            full = detect(
                standardize(daily),
                seed=derive_seed(seed, "stability/full", 0),
                restarts=restarts,
                include_below_bulk=include_below_bulk,
                market_sign_threshold=market_sign_threshold,
            )
            parts = window_parts + [full]
            labels = labels + ["full"]
            vi_matrix = _pairwise_vi(parts)
        else:
            vi_matrix = window_vi
        return StabilityReport(
            mode=mode,
            labels=labels,
            partitions=parts,
            vi_matrix=vi_matrix,
            vi_vs_first=window_vi[0].copy(),
            cooccurrence=cooccurrence(window_parts),
        )

    raise ValueError(
        f"mode must be 'multiresolution' or 'sliding_window', got {mode!r}"
    )
