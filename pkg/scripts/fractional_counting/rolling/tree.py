"""
Decision-tree fractional counters with incremental, change-bounded updates.

A tree routes each record by ``x[feature] <= threshold`` to one leaf whose
outcome-probability vector gives the record's counters: over {in scope,
erroneous} for the ``erroneous`` target, over listed positions plus
displaced for the ``placement`` target. Leaves keep their observations with
the epoch they were seen in, so old evidence can be down-weighted.

Splits are installed only when the information-gain gap between the best
and the second-best feature exceeds the Hoeffding bound. Rolling to a new
epoch scores candidate edits (leaf refresh, new split, subtree collapse) on
held-out fresh labels (improvement Δε) and on the records without fresh
labels (share of predictions moving more than η, Δ_M), and accepts edits
greedily under a bound on one of the two.
"""

import copy
import logging
import math
import zlib
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..estimation.base import FractionalCounter
from ..simulation.base import PersonRecord
from .base import TreeError

logger = logging.getLogger(__name__)

TARGETS = ("erroneous", "placement")
MODES = ("max_improvement", "min_change")
MAX_THRESHOLDS = 64
LOSS_FLOOR = 1e-12


def feature_names(target: str, n_covariates: int, max_q: int) -> List[str]:
    names = [f"z{j}" for j in range(n_covariates)] + ["sol_score"]
    if target == "placement":
        names += [f"agreement_{j}" for j in range(max_q)]
    return names


def tree_features(records: Sequence[PersonRecord], target: str, n_covariates: int, max_q: int) -> np.ndarray:
    """
    Feature matrix: covariates and sign-of-life score, plus the agreement
    share of each listed position (−1 when not listed) for placement.
    """
    if target not in TARGETS:
        raise TreeError(f"Unknown tree target '{target}'", "tree_features")
    width = n_covariates + 1 + (max_q if target == "placement" else 0)
    F = np.zeros((len(records), width))
    for k, r in enumerate(records):
        if r.covariates.shape != (n_covariates,):
            raise TreeError(f"record {r.id} has {r.covariates.size} covariates, expected {n_covariates}",
                            "tree_features")
        F[k, :n_covariates] = r.covariates
        F[k, n_covariates] = r.sol_score
        if target == "placement":
            agreement = np.full(max_q, -1.0)
            n = min(r.q, max_q)
            agreement[:n] = r.address_features[:n, 0]
            F[k, n_covariates + 1:] = agreement
    return F


def tree_outcomes(records: Sequence[PersonRecord], target: str, max_q: int) -> np.ndarray:
    """Observed outcome index per record, −1 where the label says nothing."""
    y = np.full(len(records), -1, dtype=int)
    for k, r in enumerate(records):
        if r.label is None:
            continue
        if target == "erroneous":
            y[k] = 0 if r.label.in_scope else 1
        elif r.label.in_scope:
            position = r.label.position
            if position is None:
                y[k] = max_q
            elif position < max_q:
                y[k] = position
    return y


def allowed_outcomes(records: Sequence[PersonRecord], target: str, max_q: int) -> np.ndarray:
    """Outcomes each record can take: positions it lists plus displaced."""
    if target == "erroneous":
        return np.ones((len(records), 2), dtype=bool)
    allowed = np.zeros((len(records), max_q + 1), dtype=bool)
    for k, r in enumerate(records):
        allowed[k, :min(r.q, max_q)] = True
        allowed[k, max_q] = True
    return allowed


@dataclass
class LeafStats:
    """Observations held at a leaf with the epoch each was seen in."""
    features: np.ndarray
    outcomes: np.ndarray
    epochs: np.ndarray

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=float)
        self.outcomes = np.asarray(self.outcomes, dtype=int)
        self.epochs = np.asarray(self.epochs, dtype=int)

    def __len__(self) -> int:
        return int(self.outcomes.shape[0])

    @classmethod
    def empty(cls, n_features: int) -> "LeafStats":
        return cls(np.zeros((0, n_features)), np.zeros(0, dtype=int), np.zeros(0, dtype=int))

    def extend(self, other: "LeafStats") -> "LeafStats":
        return LeafStats(
            np.vstack([self.features, other.features]),
            np.concatenate([self.outcomes, other.outcomes]),
            np.concatenate([self.epochs, other.epochs]),
        )

    def select(self, mask: np.ndarray) -> "LeafStats":
        return LeafStats(self.features[mask], self.outcomes[mask], self.epochs[mask])


def evidence_weights(epochs: np.ndarray, now: int, half_life: float) -> np.ndarray:
    """
    Weight 0.5^(age / half_life) per observation; 1 at age 0.

    Raises:
        TreeError: On a negative half-life or observations from the future
    """
    if math.isnan(half_life) or half_life < 0:
        raise TreeError(f"half-life must be non-negative, got {half_life}", "stale_evidence_weight")
    ages = now - np.asarray(epochs, dtype=float)
    if np.any(ages < 0):
        raise TreeError("observations are newer than the evaluation epoch", "stale_evidence_weight")
    if math.isinf(half_life):
        return np.ones_like(ages)
    if half_life == 0:
        return (ages == 0).astype(float)
    return np.power(0.5, ages / half_life)


def stale_evidence_weight(stats: LeafStats, now: int, half_life: float, n_outcomes: int) -> np.ndarray:
    """Age-weighted outcome counts of a leaf."""
    w = evidence_weights(stats.epochs, now, half_life)
    return np.bincount(stats.outcomes, weights=w, minlength=n_outcomes)[:n_outcomes].astype(float)


@dataclass
class TreeNode:
    """Internal node (feature, threshold, children) or leaf (observations)."""
    id: int
    parent: Optional[int]
    depth: int
    feature: Optional[int] = None
    threshold: Optional[float] = None
    left: Optional[int] = None
    right: Optional[int] = None
    stats: Optional[LeafStats] = None
    stamp: int = 0

    @property
    def is_leaf(self) -> bool:
        return self.feature is None


@dataclass
class TreeModel:
    """A binary tree of fractional-counter leaves."""
    target: str
    n_covariates: int
    max_q: int
    nodes: Dict[int, TreeNode] = field(default_factory=dict)
    smoothing: float = 0.5
    half_life: float = math.inf
    epoch: int = 0
    next_id: int = 1

    @property
    def n_outcomes(self) -> int:
        return 2 if self.target == "erroneous" else self.max_q + 1

    @property
    def n_features(self) -> int:
        return len(feature_names(self.target, self.n_covariates, self.max_q))

    @property
    def root(self) -> TreeNode:
        return self.nodes[0]

    def leaves(self) -> List[TreeNode]:
        return [self.nodes[i] for i in sorted(self.nodes) if self.nodes[i].is_leaf]

    def depth(self) -> int:
        return max(node.depth for node in self.nodes.values())

    def copy(self) -> "TreeModel":
        return copy.deepcopy(self)

    def leaf_vector(self, node: TreeNode) -> np.ndarray:
        """Smoothed outcome frequencies of a leaf, aged to its stamp epoch."""
        K = self.n_outcomes
        counts = stale_evidence_weight(node.stats, node.stamp, self.half_life, K)
        total = counts.sum() + self.smoothing * K
        if total <= 0:
            return np.full(K, 1.0 / K)
        return (counts + self.smoothing) / total

    def route(self, F: np.ndarray) -> np.ndarray:
        """Leaf id of every feature row."""
        ids = np.zeros(F.shape[0], dtype=int)
        frontier = [self.root]
        while frontier:
            node = frontier.pop()
            if node.is_leaf:
                continue
            here = ids == node.id
            go_left = here & (F[:, node.feature] <= node.threshold)
            ids[go_left] = node.left
            ids[here & ~go_left] = node.right
            frontier.extend([self.nodes[node.left], self.nodes[node.right]])
        return ids

    def predict_features(self, F: np.ndarray, allowed: Optional[np.ndarray] = None) -> np.ndarray:
        """Outcome probabilities per row, restricted to allowed outcomes and renormalised."""
        K = self.n_outcomes
        if F.shape[0] == 0:
            return np.zeros((0, K))
        vectors = {leaf.id: self.leaf_vector(leaf) for leaf in self.leaves()}
        P = np.vstack([vectors[i] for i in self.route(F)])
        if allowed is None:
            return P
        P = np.where(allowed, P, 0.0)
        totals = P.sum(axis=1, keepdims=True)
        uniform = allowed / allowed.sum(axis=1, keepdims=True)
        return np.where(totals > 0, P / np.where(totals > 0, totals, 1.0), uniform)

    def predict(self, records: Sequence[PersonRecord]) -> np.ndarray:
        F = tree_features(records, self.target, self.n_covariates, self.max_q)
        return self.predict_features(F, allowed_outcomes(records, self.target, self.max_q))

    def to_dict(self) -> Dict[str, Any]:
        """Node-list form for TOML files."""
        nodes = []
        for i in sorted(self.nodes):
            node = self.nodes[i]
            entry: Dict[str, Any] = {
                "id": node.id,
                "parent": -1 if node.parent is None else node.parent,
                "depth": node.depth,
                "stamp": node.stamp,
            }
            if node.is_leaf:
                entry["leaf_vector"] = self.leaf_vector(node).tolist()
                entry["obs_features"] = node.stats.features.tolist()
                entry["obs_outcomes"] = node.stats.outcomes.tolist()
                entry["obs_epochs"] = node.stats.epochs.tolist()
            else:
                entry.update(feature=node.feature, threshold=float(node.threshold),
                             left=node.left, right=node.right)
            nodes.append(entry)
        return {
            "target": self.target,
            "n_covariates": self.n_covariates,
            "max_q": self.max_q,
            "smoothing": self.smoothing,
            "half_life": str(self.half_life),
            "epoch": self.epoch,
            "next_id": self.next_id,
            "feature_names": feature_names(self.target, self.n_covariates, self.max_q),
            "nodes": nodes,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "TreeModel":
        model = cls(
            target=data["target"],
            n_covariates=int(data["n_covariates"]),
            max_q=int(data["max_q"]),
            smoothing=float(data["smoothing"]),
            half_life=float(data["half_life"]),
            epoch=int(data["epoch"]),
            next_id=int(data["next_id"]),
        )
        width = model.n_features
        for entry in data["nodes"]:
            node = TreeNode(
                id=int(entry["id"]),
                parent=None if entry["parent"] < 0 else int(entry["parent"]),
                depth=int(entry["depth"]),
                stamp=int(entry.get("stamp", 0)),
            )
            if "feature" in entry:
                node.feature = int(entry["feature"])
                node.threshold = float(entry["threshold"])
                node.left, node.right = int(entry["left"]), int(entry["right"])
            else:
                features = np.asarray(entry.get("obs_features", []), dtype=float).reshape(-1, width)
                node.stats = LeafStats(features, entry.get("obs_outcomes", []), entry.get("obs_epochs", []))
            model.nodes[node.id] = node
        if 0 not in model.nodes:
            raise TreeError("tree has no root node", "from_dict")
        return model


@dataclass
class SplitRule:
    """Growth limits shared by initial growing and rolling."""
    hoeffding_delta: float = 1e-6
    min_leaf: int = 20
    grace_period: int = 200
    max_depth: int = 6

    def __post_init__(self):
        if not 0 < self.hoeffding_delta < 1:
            raise TreeError(f"hoeffding_delta must be in (0, 1), got {self.hoeffding_delta}")


def hoeffding_bound(value_range: float, delta: float, n: float) -> float:
    """ε = √(R² ln(1/δ) / 2n)."""
    if n <= 0:
        return math.inf
    return math.sqrt(value_range ** 2 * math.log(1.0 / delta) / (2.0 * n))


def _entropy(counts: np.ndarray) -> np.ndarray:
    """Entropy in bits of each row of weighted counts."""
    totals = counts.sum(axis=-1, keepdims=True)
    p = np.divide(counts, totals, out=np.zeros_like(counts), where=totals > 0)
    logs = np.log2(p, out=np.zeros_like(p), where=p > 0)
    return -(p * logs).sum(axis=-1)


def split_gains(F: np.ndarray, y: np.ndarray, w: np.ndarray, n_outcomes: int,
                min_leaf: int) -> List[Tuple[float, int, float]]:
    """Best (information gain, feature, threshold) per feature with both sides ≥ min_leaf."""
    onehot = np.zeros((y.size, n_outcomes))
    onehot[np.arange(y.size), y] = w
    total = onehot.sum(axis=0)
    W = total.sum()
    if W <= 0:
        return []
    parent = float(_entropy(total))
    best: List[Tuple[float, int, float]] = []
    for j in range(F.shape[1]):
        order = np.argsort(F[:, j], kind="stable")
        x = F[order, j]
        values = np.unique(x)
        if values.size < 2:
            continue
        if values.size > MAX_THRESHOLDS:
            values = np.unique(np.quantile(x, np.linspace(0.0, 1.0, MAX_THRESHOLDS + 1)))
        thresholds = 0.5 * (values[:-1] + values[1:])
        cut = np.searchsorted(x, thresholds, side="right")
        ok = (cut >= min_leaf) & (y.size - cut >= min_leaf)
        if not ok.any():
            continue
        thresholds, cut = thresholds[ok], cut[ok]
        cumulative = np.vstack([np.zeros(n_outcomes), np.cumsum(onehot[order], axis=0)])
        left = cumulative[cut]
        right = total - left
        wl, wr = left.sum(axis=1), right.sum(axis=1)
        gains = parent - (wl * _entropy(left) + wr * _entropy(right)) / W
        i = int(np.argmax(gains))
        best.append((float(gains[i]), j, float(thresholds[i])))
    best.sort(key=lambda g: (-g[0], g[1]))
    return best


def find_split(model: TreeModel, node: TreeNode, rule: SplitRule, now: int) -> Optional[Tuple[int, float]]:
    """
    Split of a leaf that passes the Hoeffding guard, if any.

    The best feature's gain must beat the runner-up (or no split) by more
    than ε, with n the age-weighted number of observations at the leaf.
    """
    stats = node.stats
    if len(stats) < max(rule.grace_period, 2 * rule.min_leaf) or node.depth >= rule.max_depth:
        return None
    w = evidence_weights(stats.epochs, now, model.half_life)
    gains = split_gains(stats.features, stats.outcomes, w, model.n_outcomes, rule.min_leaf)
    if not gains or gains[0][0] <= 0:
        return None
    runner_up = max(gains[1][0], 0.0) if len(gains) > 1 else 0.0
    epsilon = hoeffding_bound(math.log2(model.n_outcomes), rule.hoeffding_delta, float(w.sum()))
    if gains[0][0] - runner_up <= epsilon:
        return None
    return gains[0][1], gains[0][2]


def _install_split(model: TreeModel, node_id: int, feature: int, threshold: float, now: int) -> None:
    node = model.nodes[node_id]
    left_mask = node.stats.features[:, feature] <= threshold
    left = TreeNode(model.next_id, node.id, node.depth + 1, stats=node.stats.select(left_mask), stamp=now)
    right = TreeNode(model.next_id + 1, node.id, node.depth + 1, stats=node.stats.select(~left_mask), stamp=now)
    model.next_id += 2
    model.nodes[left.id] = left
    model.nodes[right.id] = right
    node.feature, node.threshold = feature, threshold
    node.left, node.right = left.id, right.id
    node.stats = None


def _collapse(model: TreeModel, node_id: int, now: int) -> None:
    node = model.nodes[node_id]
    left, right = model.nodes.pop(node.left), model.nodes.pop(node.right)
    node.stats = left.stats.extend(right.stats)
    node.feature = node.threshold = node.left = node.right = None
    node.stamp = now


def _grow(model: TreeModel, start: int, rule: SplitRule, now: int) -> int:
    """Split leaves below ``start`` while the guard passes; returns the number of splits."""
    splits = 0
    queue = [start]
    while queue:
        node = model.nodes[queue.pop(0)]
        if not node.is_leaf:
            continue
        split = find_split(model, node, rule, now)
        if split is None:
            continue
        _install_split(model, node.id, split[0], split[1], now)
        splits += 1
        queue.extend([node.left, node.right])
    return splits


def _informative(records: Sequence[PersonRecord], target: str, max_q: int):
    records = list(records)
    y = tree_outcomes(records, target, max_q)
    keep = [r for r, o in zip(records, y) if o >= 0]
    return keep, y[y >= 0]


def grow_initial(records: Sequence[PersonRecord], target: str = "erroneous", n_covariates: Optional[int] = None,
                 max_q: int = 5, hoeffding_delta: float = 1e-6, min_leaf: int = 20, grace_period: int = 200,
                 max_depth: int = 6, smoothing: float = 0.5, half_life: float = math.inf,
                 epoch: int = 0) -> TreeModel:
    """
    Grow the census-year tree on labelled core records.

    Raises:
        TreeError: If no record carries an informative label
    """
    if target not in TARGETS:
        raise TreeError(f"Unknown tree target '{target}'", "grow_initial")
    labelled, y = _informative(records, target, max_q)
    if not labelled:
        raise TreeError("no labelled records to grow a tree from", "grow_initial")
    d = labelled[0].covariates.shape[0] if n_covariates is None else n_covariates
    model = TreeModel(target=target, n_covariates=d, max_q=max_q, smoothing=smoothing,
                      half_life=half_life, epoch=epoch)
    F = tree_features(labelled, target, d, max_q)
    model.nodes[0] = TreeNode(0, None, 0, stats=LeafStats(F, y, np.full(y.size, epoch)), stamp=epoch)
    rule = SplitRule(hoeffding_delta, min_leaf, grace_period, max_depth)
    splits = _grow(model, 0, rule, epoch)
    logger.info(f"Grew {target} tree on {y.size} records: {splits} splits, {len(model.leaves())} leaves")
    return model


@dataclass
class UpdateReport:
    """Outcome of one tree roll."""
    delta_eps: float = 0.0
    delta_m: float = 0.0
    accepted: bool = False
    edits: List[str] = field(default_factory=list)
    n_train: int = 0
    n_validation: int = 0
    mode: str = "max_improvement"

    def to_dict(self) -> Dict[str, Any]:
        return {
            "delta_eps": self.delta_eps,
            "delta_m": self.delta_m,
            "accepted": self.accepted,
            "edits": ";".join(self.edits),
            "n_train": self.n_train,
            "n_validation": self.n_validation,
            "mode": self.mode,
        }


def validation_split(records: Sequence[PersonRecord]) -> Tuple[List[PersonRecord], List[PersonRecord]]:
    """Deterministic 50/50 train/validation split by a hash of the record id."""
    train, validation = [], []
    for r in records:
        (train if zlib.crc32(str(r.id).encode()) % 2 == 0 else validation).append(r)
    return train, validation


def mean_log_loss(P: np.ndarray, y: np.ndarray) -> float:
    if y.size == 0:
        return 0.0
    return float(-np.mean(np.log(np.clip(P[np.arange(y.size), y], LOSS_FLOOR, None))))


def prediction_change(before: np.ndarray, after: np.ndarray, eta: float) -> float:
    """Share of records whose predicted vector moves by more than η in L1."""
    if before.shape[0] == 0:
        return 0.0
    return float(np.mean(np.abs(after - before).sum(axis=1) > eta))


@dataclass
class _Candidate:
    node_id: int
    kind: str
    model: TreeModel
    pending: Dict[int, LeafStats]
    delta_eps: float = 0.0
    delta_m: float = 0.0

    @property
    def label(self) -> str:
        return f"{self.kind}:{self.node_id}"


class _Scorer:
    """Δε and Δ_M of candidate trees against the previous model."""

    def __init__(self, base: TreeModel, validation: Sequence[PersonRecord], others: Sequence[PersonRecord],
                 eta: float):
        self.eta = eta
        target, d, q = base.target, base.n_covariates, base.max_q
        self.F_val = tree_features(validation, target, d, q)
        self.A_val = allowed_outcomes(validation, target, q)
        self.y_val = tree_outcomes(validation, target, q)
        self.F_oth = tree_features(others, target, d, q)
        self.A_oth = allowed_outcomes(others, target, q)
        self.base_loss = mean_log_loss(base.predict_features(self.F_val, self.A_val), self.y_val)
        self.base_oth = base.predict_features(self.F_oth, self.A_oth)

    def score(self, candidate: _Candidate) -> _Candidate:
        loss = mean_log_loss(candidate.model.predict_features(self.F_val, self.A_val), self.y_val)
        candidate.delta_eps = self.base_loss - loss
        candidate.delta_m = prediction_change(self.base_oth, candidate.model.predict_features(self.F_oth, self.A_oth),
                                              self.eta)
        return candidate


def _candidates(model: TreeModel, pending: Dict[int, LeafStats], rule: SplitRule, now: int) -> List[_Candidate]:
    found: List[_Candidate] = []
    for leaf_id, new in sorted(pending.items()):
        refreshed = model.copy()
        leaf = refreshed.nodes[leaf_id]
        leaf.stats = leaf.stats.extend(new)
        leaf.stamp = now
        rest = {k: v for k, v in pending.items() if k != leaf_id}
        found.append(_Candidate(leaf_id, "refresh", refreshed, rest))

        split = find_split(refreshed, leaf, rule, now)
        if split is not None:
            grown = refreshed.copy()
            _install_split(grown, leaf_id, split[0], split[1], now)
            found.append(_Candidate(leaf_id, "split", grown, dict(rest)))

    for node in model.nodes.values():
        if node.is_leaf:
            continue
        left, right = model.nodes[node.left], model.nodes[node.right]
        if not (left.is_leaf and right.is_leaf):
            continue
        merged = model.copy()
        _collapse(merged, node.id, now)
        target = merged.nodes[node.id]
        for child in (left.id, right.id):
            if child in pending:
                target.stats = target.stats.extend(pending[child])
        rest = {k: v for k, v in pending.items() if k not in (left.id, right.id)}
        found.append(_Candidate(node.id, "collapse", merged, rest))
    return found


def roll_tree(model: TreeModel, updated: Sequence[PersonRecord], others: Sequence[PersonRecord] = (),
              bound: float = 0.05, eta: float = 0.05, epoch: Optional[int] = None,
              mode: str = "max_improvement", min_improvement: float = 0.005, error_lower_bound: float = 0.0,
              hoeffding_delta: float = 1e-6, min_leaf: int = 20, grace_period: int = 200,
              max_depth: int = 6) -> Tuple[TreeModel, UpdateReport]:
    """
    Roll the tree forward with the fresh labels D_t.

    Half of D_t (by record-id hash) feeds the candidate edits, the other half
    scores them by Δε; Δ_M is measured on ``others``, the records without
    fresh labels. In ``max_improvement`` mode edits are accepted greedily by
    largest Δε while Δ_M ≤ bound and each edit adds at least
    ``min_improvement``; in ``min_change`` mode edits with the smallest Δ_M
    are accepted until Δε reaches ``error_lower_bound``. Ties go to the
    smaller Δ_M, then the lower node id. Without an acceptable edit the
    previous model is returned unchanged with ``accepted=False``.

    Raises:
        TreeError: On a negative bound or tolerance or an unknown mode
    """
    if bound < 0:
        raise TreeError(f"change bound must be non-negative, got {bound}", "roll_tree")
    if eta < 0:
        raise TreeError(f"prediction-change tolerance must be non-negative, got {eta}", "roll_tree")
    if mode not in MODES:
        raise TreeError(f"Unknown roll mode '{mode}'. Available: {list(MODES)}", "roll_tree")
    now = model.epoch + 1 if epoch is None else epoch

    labelled, _ = _informative(updated, model.target, model.max_q)
    train, validation = validation_split(labelled)
    report = UpdateReport(n_train=len(train), n_validation=len(validation), mode=mode)
    if not train or not validation:
        return model, report

    scorer = _Scorer(model, validation, list(others), eta)
    rule = SplitRule(hoeffding_delta, min_leaf, grace_period, max_depth)

    F_train = tree_features(train, model.target, model.n_covariates, model.max_q)
    y_train = tree_outcomes(train, model.target, model.max_q)
    leaf_ids = model.route(F_train)
    pending = {
        int(i): LeafStats(F_train[leaf_ids == i], y_train[leaf_ids == i], np.full(int((leaf_ids == i).sum()), now))
        for i in np.unique(leaf_ids)
    }

    working = model
    accepted: Optional[_Candidate] = None
    edits: List[str] = []
    while pending:
        scored = [scorer.score(c) for c in _candidates(working, pending, rule, now)]
        current_eps = accepted.delta_eps if accepted else 0.0
        if mode == "max_improvement":
            admissible = [c for c in scored
                          if c.delta_m <= bound and c.delta_eps >= current_eps + min_improvement]
            key = (lambda c: (-c.delta_eps, c.delta_m, c.node_id))
        else:
            if current_eps >= error_lower_bound:
                break
            admissible = [c for c in scored if c.delta_eps > current_eps]
            key = (lambda c: (c.delta_m, -c.delta_eps, c.node_id))
        if not admissible:
            break
        accepted = min(admissible, key=key)
        working, pending = accepted.model, accepted.pending
        edits.append(accepted.label)

    if accepted is None or (mode == "min_change" and accepted.delta_eps < error_lower_bound):
        logger.info(f"Tree roll at epoch {now}: no acceptable edit")
        return model, report

    working.epoch = now
    report.delta_eps = accepted.delta_eps
    report.delta_m = accepted.delta_m
    report.accepted = True
    report.edits = edits
    logger.info(f"Tree roll at epoch {now}: {len(edits)} edits, Δε {accepted.delta_eps:.4g}, "
                f"Δ_M {accepted.delta_m:.4g}")
    return working, report


def tree_counters(model: TreeModel, pd: Sequence[PersonRecord],
                  base: Optional[Sequence[FractionalCounter]] = None) -> List[FractionalCounter]:
    """
    Counters from the tree's leaf vectors.

    An erroneous tree sets θ and keeps (μ, ξ) from ``base`` (uniform without
    one); a placement tree sets (μ, ξ) and keeps θ from ``base`` (0 without one).
    """
    records = list(pd)
    if base is not None and len(base) != len(records):
        raise TreeError(f"{len(base)} base counters for {len(records)} records", "tree_counters")
    P = model.predict(records)
    counters: List[FractionalCounter] = []
    for k, r in enumerate(records):
        if model.target == "erroneous":
            previous = base[k] if base is not None else FractionalCounter.uniform(r.q)
            counters.append(previous.with_theta(float(np.clip(P[k, 1], 0.0, 1.0))))
        else:
            mu = np.zeros(r.q)
            n = min(r.q, model.max_q)
            mu[:n] = P[k, :n]
            theta = base[k].theta if base is not None else 0.0
            counters.append(FractionalCounter(mu, max(0.0, 1.0 - mu.sum()), theta))
    return counters
