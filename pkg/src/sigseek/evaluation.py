"""Retrieval evaluation machinery.

Covers the ranked-retrieval pipeline (candidate scoring against a query
set, spatial non-maxima suppression, top-k ranking), one-to-one matching
of predictions to ground truth with rank preference, interpolated
precision and precision/recall curves, the iterative verify-and-requery
workflow, and K-means cluster purity.

Spatial distance is Euclidean between patch centers throughout.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import ContractViolation, SigseekError
from .mih import MihIndex, query_candidates
from .sigcore import VoxelCoord, hamming


@dataclass(frozen=True)
class RankedPrediction:
    coord: VoxelCoord
    distance: float
    rank: int  # 1-based


@dataclass
class QuerySet:
    """Growing set of verified exemplars; distance to it is a min over members.

    Holds either signatures (Hamming distance) or real embeddings
    (Euclidean); the two kinds do not mix.
    """

    kind: str
    coords: list[VoxelCoord] = field(default_factory=list)
    signatures: list[int] = field(default_factory=list)
    vectors: list[np.ndarray] = field(default_factory=list)

    @classmethod
    def from_signatures(cls, members: Sequence[tuple[VoxelCoord, int]]) -> "QuerySet":
        qs = cls(kind="signature")
        for coord, sig in members:
            qs.add_signature(coord, sig)
        qs._require_non_empty()
        return qs

    @classmethod
    def from_embeddings(
        cls, members: Sequence[tuple[VoxelCoord, np.ndarray]]
    ) -> "QuerySet":
        qs = cls(kind="embedding")
        for coord, vec in members:
            qs.add_embedding(coord, vec)
        qs._require_non_empty()
        return qs

    def _require_non_empty(self):
        if not self.coords:
            raise ContractViolation("query set must be non-empty")

    def _check_new_coord(self, coord: VoxelCoord):
        if coord in self.coords:
            raise ContractViolation(f"duplicate query source coordinate {coord}")

    def add_signature(self, coord: VoxelCoord, sig: int) -> None:
        if self.kind != "signature":
            raise ContractViolation("cannot add a signature to an embedding query set")
        self._check_new_coord(coord)
        self.coords.append(coord)
        self.signatures.append(sig)

    def add_embedding(self, coord: VoxelCoord, vec: np.ndarray) -> None:
        if self.kind != "embedding":
            raise ContractViolation("cannot add an embedding to a signature query set")
        self._check_new_coord(coord)
        self.coords.append(coord)
        self.vectors.append(np.asarray(vec, dtype=np.float64))

    def __len__(self) -> int:
        return len(self.coords)


def queryset_distance(qs: QuerySet, item) -> float:
    """Minimum distance from ``item`` to any query-set member."""
    qs._require_non_empty()
    if qs.kind == "signature":
        if not isinstance(item, (int, np.integer)):
            raise ContractViolation("signature query set expects an integer signature")
        return float(min(hamming(int(item), q) for q in qs.signatures))
    vec = np.asarray(item, dtype=np.float64)
    if vec.shape != qs.vectors[0].shape:
        raise ContractViolation(
            f"embedding shape {vec.shape} does not match query set {qs.vectors[0].shape}"
        )
    return float(min(np.linalg.norm(vec - q) for q in qs.vectors))


def nms_filter(
    candidates: Sequence[tuple[VoxelCoord, float]], t: float
) -> list[tuple[VoxelCoord, float]]:
    """Spatial non-maxima suppression.

    A candidate is dropped when any better candidate (smaller distance, or
    equal distance with lower coordinate) lies strictly within spatial
    distance ``t`` — "any" over the whole input, not just survivors, per the
    suppression rule's plain reading. Output is sorted by (distance, coord).
    """
    if t <= 0:
        raise ContractViolation(f"NMS threshold must be > 0, got {t}")
    ordered = sorted(candidates, key=lambda c: (c[1], c[0].as_tuple()))
    if not ordered:
        return []
    pts = np.array([c[0].as_tuple() for c in ordered], dtype=np.float64)
    kept = []
    for i, cand in enumerate(ordered):
        if i == 0:
            kept.append(cand)
            continue
        d = np.linalg.norm(pts[:i] - pts[i], axis=1)
        if not np.any(d < t):
            kept.append(cand)
    return kept


def match_one_to_one(
    predictions: Sequence[VoxelCoord],
    truth: Sequence[VoxelCoord],
    radius: float,
) -> list[bool]:
    """Maximum one-to-one matching of predictions to truth sites.

    A prediction may match any truth site within ``radius`` (inclusive).
    Predictions are processed in rank order with augmenting paths, so the
    matching has maximum cardinality and earlier ranks are never displaced
    by later ones.
    """
    if radius <= 0:
        raise ContractViolation(f"match radius must be > 0, got {radius}")
    if not truth:
        return [False] * len(predictions)
    t_arr = np.array([c.as_tuple() for c in truth], dtype=np.float64)
    owner: dict[int, int] = {}  # truth index -> prediction index

    def neighbors(pred: VoxelCoord) -> list[int]:
        d = np.linalg.norm(t_arr - np.array(pred.as_tuple(), dtype=np.float64), axis=1)
        return [int(j) for j in np.flatnonzero(d <= radius)]

    adjacency = [neighbors(p) for p in predictions]

    def augment(i: int, visited: set[int]) -> bool:
        for j in adjacency[i]:
            if j in visited:
                continue
            visited.add(j)
            if j not in owner or augment(owner[j], visited):
                owner[j] = i
                return True
        return False

    flags = []
    for i in range(len(predictions)):
        flags.append(augment(i, set()))
    return flags


def interpolated_precision(flags: Sequence[bool]) -> np.ndarray:
    """p(i) = max over j >= i of precision at rank j."""
    if len(flags) == 0:
        raise ContractViolation("flags must be non-empty")
    arr = np.asarray(flags, dtype=np.float64)
    raw = np.cumsum(arr) / np.arange(1, len(arr) + 1)
    return np.maximum.accumulate(raw[::-1])[::-1]


def precision_recall(
    flags: Sequence[bool], truth_count: int
) -> list[tuple[float, float]]:
    """(precision, recall) at each rank; recall out of ``truth_count``."""
    if truth_count <= 0:
        raise ContractViolation("truth_count must be positive")
    if sum(flags) > truth_count:
        raise ContractViolation("more true flags than ground-truth sites")
    tp = 0
    out = []
    for j, flag in enumerate(flags, start=1):
        tp += bool(flag)
        out.append((tp / j, tp / truth_count))
    return out


@dataclass
class MatchReport:
    flags: list[bool]
    interpolated: np.ndarray
    pr: list[tuple[float, float]]
    matched_truth: int


def score_predictions(
    predictions: Sequence[RankedPrediction],
    truth: Sequence[VoxelCoord],
    radius: float,
    truth_count: int | None = None,
) -> MatchReport:
    flags = match_one_to_one([p.coord for p in predictions], truth, radius)
    return MatchReport(
        flags=flags,
        interpolated=interpolated_precision(flags) if flags else np.array([]),
        pr=precision_recall(flags, truth_count or len(truth)) if flags else [],
        matched_truth=sum(flags),
    )


@dataclass
class EmbeddingTable:
    """Exhaustive real-valued companion to the signature index."""

    coords: list[VoxelCoord]
    vectors: np.ndarray

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors, dtype=np.float64)
        if len(self.coords) != len(self.vectors):
            raise ContractViolation("coords and vectors must align")


def run_query(
    target: MihIndex | EmbeddingTable,
    qs: QuerySet,
    t: float,
    k: int,
) -> list[RankedPrediction]:
    """Score, suppress, rank: the full single- or multi-query pipeline.

    Against a signature index, candidates are the union of per-query table
    collisions; against an embedding table every stored vector is scored.
    """
    if k < 1:
        raise ContractViolation(f"k must be >= 1, got {k}")
    if isinstance(target, EmbeddingTable):
        if qs.kind != "embedding":
            raise ContractViolation("embedding table requires an embedding query set")
        qvecs = np.stack(qs.vectors)
        d = np.linalg.norm(
            target.vectors[:, None, :] - qvecs[None, :, :], axis=2
        ).min(axis=1)
        scored = list(zip(target.coords, (float(v) for v in d)))
    else:
        if qs.kind != "signature":
            raise ContractViolation("signature index requires a signature query set")
        by_coord: dict[tuple[int, int, int], tuple[VoxelCoord, int]] = {}
        for q in qs.signatures:
            for res in query_candidates(target, q):
                by_coord[res.record.coord.as_tuple()] = (res.record.coord, res.record.sig)
        scored = [
            (coord, queryset_distance(qs, sig)) for coord, sig in by_coord.values()
        ]
    survivors = nms_filter(scored, t)[:k]
    return [
        RankedPrediction(coord=c, distance=d, rank=i + 1)
        for i, (c, d) in enumerate(survivors)
    ]


class WorkflowExhausted(SigseekError):
    """Candidate list ran out before the target number of true matches."""

    def __init__(self, message: str, labels_used: int, verified: int):
        super().__init__(message)
        self.labels_used = labels_used
        self.verified = verified


@dataclass
class WorkflowResult:
    queryset: QuerySet
    labels_used: int
    verified: int
    label_history: list[tuple[VoxelCoord, bool]]


def semi_automated_workflow(
    index: MihIndex,
    q0: tuple[VoxelCoord, int],
    rank_n: int,
    target_true: int,
    oracle: Callable[[VoxelCoord], bool],
    t: float,
    k: int,
) -> WorkflowResult:
    """Iterative verify-and-requery loop.

    Presents predictions from rank ``rank_n`` onward; each true label adds
    the site's signature to the query set and restarts presentation at
    ``rank_n`` under the recomputed ranking. Already-labeled coordinates are
    never presented twice. Stops after ``target_true`` verified additions.
    """
    if rank_n < 1 or rank_n > k:
        raise ContractViolation(f"need 1 <= rank_n <= k, got rank_n={rank_n}, k={k}")
    qs = QuerySet.from_signatures([q0])
    labeled: dict[tuple[int, int, int], bool] = {}
    history: list[tuple[VoxelCoord, bool]] = []
    verified = 0
    while verified < target_true:
        preds = run_query(index, qs, t, k)
        advanced = False
        for pred in preds[rank_n - 1 :]:
            key = pred.coord.as_tuple()
            if key in labeled or pred.coord in qs.coords:
                continue
            verdict = bool(oracle(pred.coord))
            labeled[key] = verdict
            history.append((pred.coord, verdict))
            if verdict:
                rec = index.record_at(pred.coord)
                assert rec is not None  # candidates come from the index
                qs.add_signature(rec.coord, rec.sig)
                verified += 1
                advanced = True
                break
        if not advanced:
            raise WorkflowExhausted(
                f"candidates exhausted after {len(history)} labels "
                f"({verified}/{target_true} verified)",
                labels_used=len(history),
                verified=verified,
            )
    return WorkflowResult(
        queryset=qs, labels_used=len(history), verified=verified, label_history=history
    )


@dataclass
class KmeansResult:
    assignments: np.ndarray
    centroids: np.ndarray
    purity: float


def kmeans_purity(
    vectors: np.ndarray,
    labels: Sequence[int],
    k: int = 2,
    seed: int = 0,
    max_iter: int = 100,
) -> KmeansResult:
    """Lloyd's algorithm with seeded farthest-first init, plus label purity.

    Assignment ties go to the lowest centroid index; empty clusters keep
    their previous centroid. Purity is the accuracy of the best one-to-one
    cluster-to-class mapping (both mappings evaluated for K=2; exhaustive
    over permutations while the class count stays small).
    """
    x = np.asarray(vectors, dtype=np.float64)
    labels = np.asarray(labels)
    if k < 2:
        raise ContractViolation("k must be >= 2")
    if len(x) < k:
        raise ContractViolation(f"need at least {k} vectors, got {len(x)}")

    rng = np.random.default_rng(seed)
    centroids = np.empty((k, x.shape[1]))
    first = int(rng.integers(0, len(x)))
    centroids[0] = x[first]
    min_d = np.linalg.norm(x - centroids[0], axis=1)
    for c in range(1, k):
        nxt = int(np.argmax(min_d))  # argmax takes the lowest index on ties
        centroids[c] = x[nxt]
        min_d = np.minimum(min_d, np.linalg.norm(x - centroids[c], axis=1))

    assign: np.ndarray | None = None
    for _ in range(max(1, max_iter)):
        d = np.linalg.norm(x[:, None, :] - centroids[None, :, :], axis=2)
        new_assign = d.argmin(axis=1)  # argmin ties resolve to lowest index
        if assign is not None and np.array_equal(new_assign, assign):
            break
        assign = new_assign
        for c in range(k):
            members = x[assign == c]
            if len(members):
                centroids[c] = members.mean(axis=0)
    assert assign is not None

    classes = sorted(set(int(v) for v in labels))
    contingency = np.zeros((k, len(classes)), dtype=np.int64)
    class_pos = {cls: i for i, cls in enumerate(classes)}
    for a, lbl in zip(assign, labels):
        contingency[a, class_pos[int(lbl)]] += 1

    from itertools import permutations

    best = 0
    if len(classes) <= 8:
        for perm in permutations(range(len(classes)), min(k, len(classes))):
            best = max(best, sum(contingency[c, perm[c]] for c in range(len(perm))))
    else:
        best = int(contingency.max(axis=1).sum())
    return KmeansResult(
        assignments=assign, centroids=centroids, purity=best / len(x)
    )
