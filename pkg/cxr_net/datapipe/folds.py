"""
Grouped stratified fold planning

Groups (patients) are assigned whole to one validation fold. The initial
split comes from scikit-learn's StratifiedGroupKFold; a deterministic
refinement then moves or swaps groups between folds until every fold's
validation size is near N/k and its positive count is within one sample of
the global class ratio.

With single-image groups the refinement always reaches that bound. Patients
with several same-label images can make it unreachable, so by default a miss
is logged and recorded as advisory; ``strict=True`` turns it into a
FoldBalanceError.
"""

import logging
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Dict, List, Sequence, Tuple

import numpy as np
from sklearn.model_selection import StratifiedGroupKFold

from ..errors import FoldBalanceError, ParameterError, ValidationError
from .samples import Sample, positive_flags

logger = logging.getLogger(__name__)

RATIO_WEIGHT = 4.0
MAX_REFINE_STEPS = 10_000


@dataclass
class FoldPlan:
    """
    k cross-validation folds.

    Attributes:
        assignment: Validation fold of every sample
        seed: Seed used for the initial split
        class_ratio: Per fold {"n_val", "pos_val", "expected_pos"}
    """
    assignment: np.ndarray
    seed: int
    class_ratio: List[Dict[str, float]] = field(default_factory=list)

    @property
    def k(self) -> int:
        return len(self.class_ratio)

    @property
    def folds(self) -> List[Tuple[np.ndarray, np.ndarray]]:
        return [self.fold(i) for i in range(self.k)]

    def fold(self, i: int) -> Tuple[np.ndarray, np.ndarray]:
        """(train indices, validation indices) of fold ``i``."""
        return np.flatnonzero(self.assignment != i), np.flatnonzero(self.assignment == i)

    def check(self, groups: Sequence[str]):
        """Raise ValidationError if a group straddles train and validation."""
        for i in range(self.k):
            train, val = self.fold(i)
            shared = {groups[j] for j in train} & {groups[j] for j in val}
            if shared:
                raise ValidationError(f"fold {i}: groups on both sides: {sorted(shared)[:5]}")


def _cost(sizes, pos, target_size, ratio) -> float:
    return float(np.sum((sizes - target_size) ** 2) + RATIO_WEIGHT * np.sum((pos - ratio * sizes) ** 2))


def _transfer(sizes, pos, src, dst, d_size, d_pos):
    sizes, pos = sizes.copy(), pos.copy()
    sizes[src] -= d_size
    pos[src] -= d_pos
    sizes[dst] += d_size
    pos[dst] += d_pos
    return sizes, pos


def _refine(assignment_g, g_size, g_pos, k, target_size, ratio) -> np.ndarray:
    """Greedy best-improvement moves and swaps of whole groups between folds."""
    assignment_g = assignment_g.copy()
    sizes = np.bincount(assignment_g, weights=g_size, minlength=k)
    pos = np.bincount(assignment_g, weights=g_pos, minlength=k)
    for _ in range(MAX_REFINE_STEPS):
        # groups with the same (size, positives) are interchangeable
        buckets = defaultdict(list)
        for g in range(len(assignment_g)):
            buckets[(assignment_g[g], g_size[g], g_pos[g])].append(g)
        current = _cost(sizes, pos, target_size, ratio)
        best, best_change = current - 1e-9, None
        keys = sorted(buckets)
        for (fa, sa, pa) in keys:
            for fb in range(k):
                if fb == fa:
                    continue
                c = _cost(*_transfer(sizes, pos, fa, fb, sa, pa), target_size, ratio)
                if c < best:
                    best, best_change = c, (buckets[(fa, sa, pa)][0], fb, None)
            for (fb, sb, pb) in keys:
                if fb <= fa or (sa, pa) == (sb, pb):
                    continue
                c = _cost(*_transfer(sizes, pos, fa, fb, sa - sb, pa - pb), target_size, ratio)
                if c < best:
                    best, best_change = c, (buckets[(fa, sa, pa)][0], fb, buckets[(fb, sb, pb)][0])
        if best_change is None:
            break
        g, fb, h = best_change
        fa = assignment_g[g]
        sizes, pos = _transfer(sizes, pos, fa, fb, g_size[g], g_pos[g])
        assignment_g[g] = fb
        if h is not None:
            sizes, pos = _transfer(sizes, pos, fb, fa, g_size[h], g_pos[h])
            assignment_g[h] = fa
    return assignment_g


def plan_folds_arrays(labels, groups: Sequence[str], k: int = 6, seed: int = 0,
                      strict: bool = False) -> FoldPlan:
    """
    Plan k grouped, stratified folds.

    Args:
        labels: 1 for positive, 0 for negative, per sample
        groups: Patient group per sample
        k: Number of folds
        seed: Seed of the initial split
        strict: Raise FoldBalanceError instead of warning when a fold's
            positive count misses the global ratio by more than one

    Returns:
        FoldPlan
    """
    labels = np.asarray(labels, dtype=int)
    groups = [str(g) for g in groups]
    n = labels.size
    if k < 2:
        raise ParameterError(f"need at least 2 folds, got {k}")
    group_names = sorted(set(groups))
    if len(group_names) < k:
        raise ValidationError(f"{len(group_names)} groups cannot fill {k} folds")
    group_of = {g: i for i, g in enumerate(group_names)}
    g_index = np.array([group_of[g] for g in groups])
    g_size = np.bincount(g_index, minlength=len(group_names)).astype(float)
    g_pos = np.bincount(g_index, weights=labels, minlength=len(group_names))
    if g_size.max() > n / k:
        logger.warning("Largest group has %d samples, more than 1/%d of the data; "
                       "fold plan is best effort", int(g_size.max()), k)

    splitter = StratifiedGroupKFold(n_splits=k, shuffle=True, random_state=seed)
    assignment_g = np.zeros(len(group_names), dtype=int)
    for fold, (_, val) in enumerate(splitter.split(np.zeros((n, 1)), labels, groups=g_index)):
        assignment_g[g_index[val]] = fold

    ratio = labels.sum() / n if n else 0.0
    assignment_g = _refine(assignment_g, g_size, g_pos, k, n / k, ratio)
    assignment = assignment_g[g_index]

    class_ratio = []
    for i in range(k):
        in_fold = assignment == i
        n_val, pos_val = int(in_fold.sum()), int(labels[in_fold].sum())
        expected = ratio * n_val
        if abs(pos_val - expected) > 1.0:
            message = f"fold {i}: {pos_val} positives, {expected:.1f} expected from the global ratio"
            if strict:
                raise FoldBalanceError(message)
            logger.warning("%s (advisory)", message.capitalize())
        class_ratio.append({"n_val": n_val, "pos_val": pos_val, "expected_pos": expected})
    plan = FoldPlan(assignment=assignment, seed=seed, class_ratio=class_ratio)
    plan.check(groups)
    logger.info("Planned %d folds; validation sizes %s", k, [c["n_val"] for c in class_ratio])
    return plan


def plan_folds(samples: Sequence[Sample], k: int = 6, seed: int = 0,
               strict: bool = False) -> FoldPlan:
    return plan_folds_arrays(positive_flags(samples), [s.group for s in samples], k, seed, strict)
