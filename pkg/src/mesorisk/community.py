"""Community detection on noise-filtered correlation matrices.

Communities maximize a correlation modularity in which the null model is
the sum of the random (noise-band) and market spectral components, so only
mesoscale structure contributes. The score of a partition is

    Q = (1 / norm) * sum over within-community pairs of the filtered matrix

with norm equal to the sum of all entries of the raw correlation matrix.
Optimization uses a two-phase local-move heuristic on the dense signed
filtered matrix.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import NumericalError
from .panels import ReturnPanel, standardize
from .rmt import CorrelationMatrix, SpectralDecomposition, correlation, decompose
from .rng import derive_seed

_MIN_GAIN = 1e-12


def canonical_labels(labels) -> np.ndarray:
    """Relabel communities 0..k-1 in order of first occurrence."""
    labels = np.asarray(labels)
    mapping: dict[int, int] = {}
    out = np.empty(labels.shape[0], dtype=int)
    for pos, lab in enumerate(labels):
        key = int(lab)
        if key not in mapping:
            mapping[key] = len(mapping)
        out[pos] = mapping[key]
    return out


def community_name(index: int) -> str:
    """Spreadsheet-style community names: 0 -> A, 25 -> Z, 26 -> AA."""
    if index < 0:
        raise ValueError(f"community index must be >= 0, got {index}")
    name = ""
    i = index
    while True:
        name = chr(ord("A") + i % 26) + name
        i = i // 26 - 1
        if i < 0:
            return name


@dataclass(frozen=True)
class Partition:
    """Community assignment with its modularity score.

    Labels are canonical: communities are numbered 0..k-1 in order of
    first occurrence along the node axis.
    """

    labels: np.ndarray
    quality: float

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=int)
        if labels.ndim != 1 or labels.shape[0] == 0:
            raise ValueError("labels must be a non-empty 1-d integer array")
        canonical = canonical_labels(labels)
        if not np.array_equal(labels, canonical):
            labels = canonical
        labels.flags.writeable = False
        object.__setattr__(self, "labels", labels)

    @property
    def n_nodes(self) -> int:
        return self.labels.shape[0]

    @property
    def n_communities(self) -> int:
        return int(self.labels.max()) + 1

    @property
    def is_trivial(self) -> bool:
        """True for the all-singletons or single-community partition."""
        k = self.n_communities
        return k == 1 or k == self.n_nodes

    def sizes(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.n_communities)

    def members(self, community: int) -> np.ndarray:
        return np.flatnonzero(self.labels == community)


def modularity(filtered_matrix, norm: float, partition) -> float:
    """Modularity of a partition: within-community filtered weight over norm.

    ``partition`` may be a :class:`Partition` or a plain label vector. The
    diagonal is included, matching the optimizer's objective. Meaningful
    scores lie in [-1, 1].
    """
    w = np.asarray(filtered_matrix, dtype=float)
    if isinstance(partition, Partition):
        labels = np.asarray(partition.labels, dtype=int)
    else:
        labels = np.asarray(partition, dtype=int)
    if w.ndim != 2 or w.shape[0] != w.shape[1]:
        raise ValueError(f"filtered matrix must be square, got {w.shape}")
    if labels.shape[0] != w.shape[0]:
        raise ValueError("label count does not match matrix size")
    if not norm > 0:
        raise ValueError(f"norm must be positive, got {norm}")
    total = 0.0
    for community in np.unique(labels):
        idx = np.flatnonzero(labels == community)
        total += float(w[np.ix_(idx, idx)].sum())
    return total / norm


def _phase_one(w, norm, q, rng):
    """Greedy single-node moves until no move improves the score."""
    n = w.shape[0]
    labels = np.arange(n)
    moved_any = False
    while True:
        moved = False
        for i in rng.permutation(n):
            row = w[i]
            gathered = np.bincount(labels, weights=row, minlength=n)
            current = labels[i]
            gathered[current] -= row[i]
            gains = 2.0 * (gathered - gathered[current]) / norm
            gains[current] = 0.0
            best = int(np.argmax(gains))
            if best != current and gains[best] > _MIN_GAIN:
                q += gains[best]
                labels[i] = best
                moved = True
                moved_any = True
        if not moved:
            return labels, q, moved_any


def _aggregate(w, labels, k):
    onehot = np.zeros((w.shape[0], k))
    onehot[np.arange(w.shape[0]), labels] = 1.0
    return onehot.T @ w @ onehot


def louvain(filtered_matrix, norm: float, seed: int = 0) -> Partition:
    """Two-phase modularity optimization on a dense signed matrix.

    Phase one sweeps nodes in a seeded random order and applies the best
    positive-gain relocation (ties go to the lowest community index);
    phase two collapses communities to supernodes and repeats. The score
    is tracked incrementally across moves and aggregation preserves it, so
    the returned quality equals a from-scratch evaluation up to roundoff.
    """
    w = np.array(filtered_matrix, dtype=float)
    if w.ndim != 2 or w.shape[0] != w.shape[1]:
        raise ValueError(f"filtered matrix must be square, got {w.shape}")
    if not np.allclose(w, w.T, atol=1e-10, rtol=0.0):
        raise ValueError("filtered matrix must be symmetric")
    if not norm > 0:
        raise ValueError(f"norm must be positive, got {norm}")
    rng = np.random.default_rng(seed)
    node_labels = np.arange(w.shape[0])
    q = float(np.trace(w)) / norm
    while True:
        labels, q, moved = _phase_one(w, norm, q, rng)
        if not moved:
            break
        compact = canonical_labels(labels)
        k = int(compact.max()) + 1
        node_labels = compact[node_labels]
        if k == w.shape[0]:
            break
        w = _aggregate(w, compact, k)
    return Partition(labels=canonical_labels(node_labels), quality=q)


def _best_of_restarts(filtered, norm, seed, restarts, label) -> Partition:
    best: Partition | None = None
    for r in range(restarts):
        candidate = louvain(filtered, norm, derive_seed(seed, label, r))
        if best is None:
            best = candidate
            continue
        if candidate.quality > best.quality + _MIN_GAIN:
            best = candidate
        elif abs(candidate.quality - best.quality) <= _MIN_GAIN:
            if tuple(candidate.labels) < tuple(best.labels):
                best = candidate
    assert best is not None
    return best


@dataclass
class DetectionContext:
    """Inputs and intermediates of one detection run, for reporting."""

    partition: Partition
    corr: CorrelationMatrix
    decomposition: SpectralDecomposition
    norm: float
    filtered: np.ndarray


def _detect_context(
    panel: ReturnPanel,
    seed: int,
    restarts: int,
    include_below_bulk: bool,
    market_sign_threshold: float,
) -> DetectionContext:
    work = panel if panel.standardized else standardize(panel)
    corr = correlation(work)
    dec = decompose(corr, market_sign_threshold=market_sign_threshold)
    filtered = dec.structure_matrix(include_below_bulk=include_below_bulk)
    norm = corr.total_weight()
    if not norm > 0:
        raise NumericalError(
            f"correlation matrix total weight {norm:.3g} is not positive; "
            "modularity is undefined"
        )
    if not np.any(filtered):
        partition = Partition(labels=np.arange(corr.n_series), quality=0.0)
    else:
        partition = _best_of_restarts(filtered, norm, seed, restarts, "detect")
    if partition.is_trivial:
        warnings.warn(
            "no mesoscopic structure: detection returned a trivial partition",
            stacklevel=3,
        )
    return DetectionContext(
        partition=partition,
        corr=corr,
        decomposition=dec,
        norm=norm,
        filtered=filtered,
    )


def detect(
    panel: ReturnPanel,
    seed: int = 0,
    restarts: int = 10,
    *,
    include_below_bulk: bool = True,
    market_sign_threshold: float = 0.95,
) -> Partition:
    """Detect communities in a return panel.

    The panel is standardized if needed, its correlation matrix is
    decomposed against the noise band, the random and market components
    are removed, and the optimizer runs ``restarts`` times with derived
    seeds. The best partition by quality wins; ties go to the
    lexicographically smallest label vector. A trivial outcome (all
    singletons or a single community) signals no mesoscopic structure and
    raises a warning.
    """
    return _detect_context(
        panel, seed, restarts, include_below_bulk, market_sign_threshold
    ).partition


def detect_strength_null(
    panel: ReturnPanel,
    seed: int = 0,
    restarts: int = 10,
) -> Partition:
    """Baseline detection with the strength-product null model.

    The null expectation s_i s_j / (2W) borrowed from weighted-graph
    modularity is known to be biased for correlation matrices (it ignores
    the noise band entirely); this variant exists only as a comparison
    baseline.
    """
    work = panel if panel.standardized else standardize(panel)
    corr = correlation(work)
    c = corr.entries
    strength = c.sum(axis=1)
    two_w = float(c.sum())
    if not two_w > 0:
        raise NumericalError(
            f"correlation matrix total weight {two_w:.3g} is not positive"
        )
    filtered = c - np.outer(strength, strength) / two_w
    return _best_of_restarts(filtered, two_w, seed, restarts, "detect_strength_null")


@dataclass
class CommunityNode:
    """One community in the hierarchy, with optional nested subdivisions."""

    name: str
    members: np.ndarray
    quality_share: float
    depth: int
    children: list["CommunityNode"] = field(default_factory=list)

    @property
    def size(self) -> int:
        return int(self.members.shape[0])

    def walk(self):
        yield self
        for child in self.children:
            yield from child.walk()


@dataclass
class Hierarchy:
    """Nested community structure from recursive detection.

    Each node names its community with a letter path: top-level
    communities are A, B, C, ...; the subdivisions of A are A1, A2, ...;
    deeper levels append dotted indices. A community left undivided has no
    children and is its own subcommunity.
    """

    partition: Partition
    roots: list[CommunityNode]
    issuers: list[str]
    max_depth: int
    min_size: int

    def walk(self):
        for root in self.roots:
            yield from root.walk()

    def _deepest(self, stop_depth: int) -> dict[int, str]:
        assignment: dict[int, str] = {}

        def visit(node: CommunityNode):
            subdivided = bool(node.children) and node.depth < stop_depth
            if subdivided:
                for child in node.children:
                    visit(child)
            else:
                for idx in node.members:
                    assignment[int(idx)] = node.name

        for root in self.roots:
            visit(root)
        return assignment

    def community_of(self) -> list[str]:
        """Top-level community name per panel column."""
        assignment = {int(i): root.name for root in self.roots for i in root.members}
        return [assignment[j] for j in range(len(self.issuers))]

    def subcommunity_of(self) -> list[str]:
        """Deepest community name per panel column (depth capped at 2)."""
        assignment = self._deepest(stop_depth=2)
        return [assignment[j] for j in range(len(self.issuers))]


def _community_shares(filtered, labels, norm) -> np.ndarray:
    shares = np.zeros(int(labels.max()) + 1)
    for community in range(shares.shape[0]):
        idx = np.flatnonzero(labels == community)
        shares[community] = float(filtered[np.ix_(idx, idx)].sum()) / norm
    return shares


def hierarchy(
    panel: ReturnPanel,
    partition: Partition | None = None,
    max_depth: int = 2,
    seed: int = 0,
    *,
    restarts: int = 10,
    min_size: int = 4,
    include_below_bulk: bool = True,
    market_sign_threshold: float = 0.95,
) -> Hierarchy:
    """Recursive detection inside communities.

    Within each community of at least ``min_size`` members the panel is
    restricted to the member columns, the restricted correlation matrix is
    decomposed against its own noise band, and both the noise bulk and the
    leading eigenvalue (the community's own collective mode) are removed
    before re-running detection. Recursion stops at ``max_depth`` levels
    (the top-level partition is depth 1) or when a community does not
    subdivide into a non-trivial partition.
    """
    if max_depth < 1:
        raise ValueError(f"max_depth must be >= 1, got {max_depth}")
    work = panel if panel.standardized else standardize(panel)
    if partition is None:
        context = _detect_context(
            work, seed, restarts, include_below_bulk, market_sign_threshold
        )
        partition = context.partition
        root_filtered = context.filtered
        root_norm = context.norm
    else:
        if partition.n_nodes != work.n_series:
            raise ValueError(
                f"partition covers {partition.n_nodes} nodes but panel has "
                f"{work.n_series} series"
            )
        corr = correlation(work)
        dec = decompose(corr, market_sign_threshold=market_sign_threshold)
        root_filtered = dec.structure_matrix(include_below_bulk=include_below_bulk)
        root_norm = corr.total_weight()

    shares = _community_shares(root_filtered, partition.labels, root_norm)

    def subdivide(name: str, members: np.ndarray, depth: int) -> list[CommunityNode]:
        if depth >= max_depth or members.shape[0] < min_size:
            return []
        sub_panel = work.restrict(members)
        corr = correlation(sub_panel)
        norm = corr.total_weight()
        if not norm > 0:
            return []
        dec = decompose(corr, market_rule="always_leading")
        filtered = dec.structure_matrix(include_below_bulk=include_below_bulk)
        if not np.any(filtered):
            return []
        sub = _best_of_restarts(
            filtered, norm, seed, restarts, f"hierarchy/{name}"
        )
        if sub.is_trivial:
            return []
        sub_shares = _community_shares(filtered, sub.labels, norm)
        children = []
        for c in range(sub.n_communities):
            child_members = members[sub.members(c)]
            child_name = (
                f"{name}{c + 1}" if depth == 1 else f"{name}.{c + 1}"
            )
            node = CommunityNode(
                name=child_name,
                members=child_members,
                quality_share=float(sub_shares[c]),
                depth=depth + 1,
            )
            node.children = subdivide(child_name, child_members, depth + 1)
            children.append(node)
        return children

    roots = []
    for c in range(partition.n_communities):
        members = partition.members(c)
        node = CommunityNode(
            name=community_name(c),
            members=members,
            quality_share=float(shares[c]),
            depth=1,
        )
        node.children = subdivide(node.name, members, 1)
        roots.append(node)

    return Hierarchy(
        partition=partition,
        roots=roots,
        issuers=list(work.issuers),
        max_depth=max_depth,
        min_size=min_size,
    )
