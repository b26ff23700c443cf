"""Subset relational importance, group rankings and local-dynamics perturbations."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .data import FeatureMapSequence, group_by_length, stack_frames
from .model import InterpreterNetwork
from .regions import enumerate_pairs, format_regions


def objects_from_pairs(n_pairs: int) -> int:
    """Invert ``P = N (N - 1) / 2``."""
    n = int(round((1 + math.sqrt(1 + 8 * n_pairs)) / 2))
    if n * (n - 1) // 2 != n_pairs or n < 2:
        raise ValueError(f"{n_pairs} is not a pair count N(N-1)/2 for any N >= 2")
    return n


@dataclass
class SubsetImportance:
    n_i: int
    n_objects: int
    entries: list[tuple[tuple[int, ...], float]]  # sorted: chi desc, then subset asc

    @property
    def n_r(self) -> int:
        return len(self.entries)

    def chi(self, subset: Sequence[int]) -> float:
        key = tuple(sorted(subset))
        for s, value in self.entries:
            if s == key:
                return value
        raise KeyError(key)

    def rank_of(self, subset: Sequence[int]) -> int:
        """0-based rank of ``subset`` in the ordering."""
        key = tuple(sorted(subset))
        for k, (s, _) in enumerate(self.entries):
            if s == key:
                return k
        raise KeyError(key)

    def top(self, k: int) -> list[tuple[tuple[int, ...], float]]:
        return self.entries[:k]

    def rows(self, names: Sequence[str] | None = None) -> list[dict]:
        out = []
        for rank, (s, value) in enumerate(self.entries, start=1):
            row = {"rank": rank, "regions": format_regions(s), "chi": value}
            if names is not None:
                row["names"] = " + ".join(names[k] for k in s)
            out.append(row)
        return out

    def to_dict(self, names: Sequence[str] | None = None) -> dict:
        return {"n_i": self.n_i, "n_objects": self.n_objects, "n_r": self.n_r, "ranking": self.rows(names)}


def subset_importance(lam: Sequence[float], n_i: int) -> SubsetImportance:
    """Sum pairwise importance over every pair inside each ``n_i``-object subset.

    ``lam`` is indexed by the lexicographic pair order of
    :func:`~fdin.regions.enumerate_pairs`.  Within a subset the pair terms
    are added in that same order.
    """
    lam = np.asarray(lam, dtype=np.float64)
    n = objects_from_pairs(lam.size)
    if not 2 <= n_i <= n:
        raise ValueError(f"subset size must lie in [2, {n}], got {n_i}")
    index = {p: k for k, p in enumerate(enumerate_pairs(n))}
    entries = []
    for subset in itertools.combinations(range(n), n_i):
        total = 0.0
        for pair in itertools.combinations(subset, 2):
            total += float(lam[index[pair]])
        entries.append((subset, total))
    entries.sort(key=lambda e: (-e[1], e[0]))
    return SubsetImportance(n_i, n, entries)


# ---------------------------------------------------------------------------
# group rankings
# ---------------------------------------------------------------------------


def importance_vectors(model: InterpreterNetwork, data: Sequence[FeatureMapSequence],
                       batch_size: int = 256) -> np.ndarray:
    """Per-sequence importance ``[n, P]`` in input order."""
    if model.config.baseline != "none":
        raise ValueError(f"the {model.config.baseline} baseline produces no pairwise importance")
    out = np.empty((len(data), len(model.pairs)))
    for _, idx in group_by_length(data).items():
        for k in range(0, len(idx), batch_size):
            chunk = idx[k:k + batch_size]
            out[chunk] = model.predict(stack_frames(data, chunk)).importance
    return out


@dataclass
class GroupRanking:
    name: str
    n_sequences: int
    mean_importance: np.ndarray
    subsets: SubsetImportance


@dataclass
class RankingResult:
    groups: list[GroupRanking]
    skipped: list[str] = field(default_factory=list)  # names of empty groups


def label_bins(spec: str) -> dict[str, Callable[[float], bool]]:
    """Parse ``"13-19,20-36,66+"`` into named inclusive label ranges."""
    bins: dict[str, Callable[[float], bool]] = {}
    for part in spec.split(","):
        part = part.strip()
        if not part:
            continue
        if part.endswith("+"):
            lo = float(part[:-1])
            bins[part] = lambda y, lo=lo: y >= lo
        elif "-" in part:
            lo_s, hi_s = part.split("-", 1)
            lo, hi = float(lo_s), float(hi_s)
            if hi < lo:
                raise ValueError(f"empty label bin {part!r}")
            # integer-year bins: 13-19 covers [13, 20)
            bins[part] = lambda y, lo=lo, hi=hi: lo <= y < hi + 1
        else:
            value = float(part)
            bins[part] = lambda y, v=value: y == v
    if not bins:
        raise ValueError("no label bins given")
    return bins


def rank_relations(model: InterpreterNetwork, data: Sequence[FeatureMapSequence],
                   groups: Mapping[str, Callable[[float], bool]] | None, n_i: int) -> RankingResult:
    """Average importance within each label group, then rank ``n_i``-subsets.

    Every sequence weighs equally in its group mean.  Groups that receive no
    sequences are listed in ``skipped``.
    """
    lam = importance_vectors(model, data)
    if groups is None:
        groups = {"all": lambda y: True}
    result = RankingResult([])
    for name, member in groups.items():
        idx = [k for k, seq in enumerate(data) if member(seq.label)]
        if not idx:
            result.skipped.append(name)
            continue
        mean = lam[idx].mean(axis=0)
        result.groups.append(GroupRanking(name, len(idx), mean, subset_importance(mean, n_i)))
    return result


# ---------------------------------------------------------------------------
# perturbations of local dynamic features
# ---------------------------------------------------------------------------


def prediction_error(model: InterpreterNetwork, y: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Absolute error for regression; ``1 - p(true class)`` for classification."""
    if model.config.task == "regression":
        return np.abs(y - labels)
    return 1.0 - y[np.arange(len(labels)), labels.astype(np.int64)]


@dataclass
class PerturbationEntry:
    regions: tuple[int, ...]
    kind: str  # "zero" or "swap"
    errors: np.ndarray  # per-sample perturbed error
    deltas: np.ndarray  # perturbed - baseline
    donor: int | None = None

    @property
    def mean_error(self) -> float:
        return float(self.errors.mean())

    @property
    def mean_abs_delta(self) -> float:
        return float(np.abs(self.deltas).mean())

    def to_dict(self) -> dict:
        n = self.errors.size
        return {
            "regions": format_regions(self.regions), "kind": self.kind, "donor": self.donor,
            "mean_error": self.mean_error, "stderr_error": standard_error(self.errors),
            "mean_delta": float(self.deltas.mean()), "stderr_delta": standard_error(self.deltas),
            "mean_abs_delta": self.mean_abs_delta, "n": n,
            "errors": self.errors.tolist(), "deltas": self.deltas.tolist(),
        }


@dataclass
class PerturbationReport:
    baseline_errors: np.ndarray
    entries: list[PerturbationEntry]

    @property
    def baseline_error(self) -> float:
        return float(self.baseline_errors.mean())

    def to_dict(self) -> dict:
        return {"baseline_error": self.baseline_error,
                "baseline_stderr": standard_error(self.baseline_errors),
                "n": int(self.baseline_errors.size),
                "baseline_errors": self.baseline_errors.tolist(),
                "entries": [e.to_dict() for e in self.entries]}


def standard_error(x: np.ndarray) -> float:
    x = np.asarray(x, dtype=np.float64)
    if x.size < 2:
        return 0.0
    return float(x.std(ddof=1) / np.sqrt(x.size))


def _check_regions(model: InterpreterNetwork, regions: Sequence[int]) -> tuple[int, ...]:
    for k in regions:
        if not 0 <= int(k) < model.n_regions:
            raise ValueError(f"region index {int(k) + 1} outside 1..{model.n_regions}")
    return tuple(sorted(int(k) for k in regions))


def _dynamics_and_labels(model, data):
    if model.config.baseline == "holistic":
        raise ValueError("the holistic baseline has no local dynamic features to perturb")
    dyn = np.empty((len(data), model.n_regions, model.config.dynamic_width))
    for _, idx in group_by_length(data).items():
        dyn[idx] = model.encode(stack_frames(data, idx))
    labels = np.array([s.label for s in data], dtype=np.float64)
    return dyn, labels


def perturb_zero(model: InterpreterNetwork, data: Sequence[FeatureMapSequence] | FeatureMapSequence,
                 targets: Sequence[Sequence[int]]) -> PerturbationReport:
    """Zero the local dynamic features of each target region set and re-estimate.

    Each target set is zeroed jointly; the encoder is not re-run.
    """
    if isinstance(data, FeatureMapSequence):
        data = [data]
    targets = [_check_regions(model, t) for t in targets]
    dyn, labels = _dynamics_and_labels(model, data)
    base = prediction_error(model, model.predict_from_dynamics(dyn).y, labels)
    entries = []
    for regions in targets:
        pert = dyn.copy()
        pert[:, list(regions), :] = 0.0
        err = prediction_error(model, model.predict_from_dynamics(pert).y, labels)
        entries.append(PerturbationEntry(regions, "zero", err, err - base))
    return PerturbationReport(base, entries)


def perturb_swap(model: InterpreterNetwork, seq_a: FeatureMapSequence, seq_b: FeatureMapSequence,
                 region: int, donor: int | None = None) -> PerturbationEntry:
    """Replace one region's dynamic feature in ``seq_a`` with the one from ``seq_b``."""
    (region,) = _check_regions(model, [region])
    if seq_a.frames.shape[1:] != seq_b.frames.shape[1:]:
        raise ValueError(f"sequences have different feature-map shapes "
                         f"{seq_a.frames.shape[1:]} and {seq_b.frames.shape[1:]}")
    dyn_a, labels = _dynamics_and_labels(model, [seq_a])
    dyn_b, _ = _dynamics_and_labels(model, [seq_b])
    base = prediction_error(model, model.predict_from_dynamics(dyn_a).y, labels)
    pert = dyn_a.copy()
    pert[:, region, :] = dyn_b[:, region, :]
    err = prediction_error(model, model.predict_from_dynamics(pert).y, labels)
    return PerturbationEntry((region,), "swap", err, err - base, donor)
