"""Global interaction detection on a trained model.

The detector picks a handful of representative rows from the dataset,
scores candidate variable subsets at each of them by exact cross
partials of the model output, and aggregates the per-row values into a
single ranking per interaction order.  Orders up to ``full_order`` are
scored exhaustively; beyond that, each representative extends its own
top-k subsets one variable at a time, so the candidate count stays
polynomial while anything strong at a lower order keeps its lineage.

Models can be ``Mlp`` instances (scored in one batched lattice forward
pass per order) or plain callables taking a length-p vector (scored one
cross partial at a time), which is how the analytic benchmark functions
are plugged in directly.
"""

from __future__ import annotations

import logging
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from itertools import combinations
from typing import Callable, Mapping, Sequence

import numpy as np

from .autodiff import MAX_TAGS, CapacityError, DomainError, cross_partial
from .mlp import ActivationError, Dataset, Mlp, forward_lattice, softmax_lattice

log = logging.getLogger(__name__)

REPRESENTATIVE_LABELS = ("mean", "median", "min", "max", "mode", "random")
AGGREGATION_LABELS = ("mean", "median", "min", "max", "mode")

_REP_DISPLAY = {
    "mean": "Mean",
    "median": "Med",
    "min": "Min",
    "max": "Max",
    "mode": "Mode",
    "random": "Rand",
}
_AGG_DISPLAY = {
    "mean": "Mean",
    "median": "Median",
    "min": "Min",
    "max": "Max",
    "mode": "Mode",
}


def binned_mode(values) -> float:
    """Mode of a continuous sample: midpoint of the most populated of 10
    equal-width bins over the observed range, leftmost bin on ties."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.size == 0:
        raise ValueError("mode of an empty sample")
    lo, hi = float(arr.min()), float(arr.max())
    if lo == hi:
        return lo
    counts, edges = np.histogram(arr, bins=10, range=(lo, hi))
    b = int(np.argmax(counts))
    return float((edges[b] + edges[b + 1]) / 2.0)


@dataclass(frozen=True)
class DetectConfig:
    max_order: int = 5
    full_order: int = 2
    top_k: int = 10
    representatives: tuple[str, ...] = ("mean", "min", "mode", "random")
    aggregation: str = "mean"
    task: str = "regression"
    class_index: int = 0
    use_logit: bool = False
    squared_multiclass: bool = False
    seed: int = 0

    def __post_init__(self):
        if not (2 <= self.full_order <= self.max_order <= MAX_TAGS):
            raise ValueError(
                f"need 2 <= full_order <= max_order <= {MAX_TAGS}, "
                f"got full_order={self.full_order}, max_order={self.max_order}"
            )
        if self.top_k < 1:
            raise ValueError("top_k must be at least 1")
        reps = tuple(self.representatives)
        if not reps:
            raise ValueError("at least one representative label is required")
        for r in reps:
            if r not in REPRESENTATIVE_LABELS:
                raise ValueError(f"unknown representative {r!r}; expected one of {REPRESENTATIVE_LABELS}")
        if len(set(reps)) != len(reps):
            raise ValueError("duplicate representative labels")
        object.__setattr__(self, "representatives", reps)
        if self.aggregation not in AGGREGATION_LABELS:
            raise ValueError(f"unknown aggregation {self.aggregation!r}; expected one of {AGGREGATION_LABELS}")
        if self.task not in ("regression", "classification"):
            raise ValueError(f"task must be 'regression' or 'classification', got {self.task!r}")
        if self.class_index < 0:
            raise ValueError("class_index must be non-negative")

    def to_dict(self) -> dict:
        return {
            "max_order": self.max_order,
            "full_order": self.full_order,
            "top_k": self.top_k,
            "representatives": list(self.representatives),
            "aggregation": self.aggregation,
            "task": self.task,
            "class_index": self.class_index,
            "use_logit": self.use_logit,
            "squared_multiclass": self.squared_multiclass,
            "seed": self.seed,
        }


@dataclass(frozen=True)
class Representative:
    label: str
    row_index: int
    row: np.ndarray


@dataclass(frozen=True)
class InteractionRanking:
    """Aggregated subset strengths per order, with full per-representative
    provenance so rankings can be re-aggregated without re-scoring."""

    orders: dict[int, tuple[tuple[tuple[int, ...], float], ...]]
    representatives: tuple[Representative, ...]
    per_representative: dict[str, dict[int, dict[tuple[int, ...], float]]]
    top_parents: dict[int, dict[str, tuple[tuple[int, ...], ...]]]
    config: DetectConfig

    def __post_init__(self):
        for order, rows in self.orders.items():
            seen = set()
            for subset, strength in rows:
                if subset in seen:
                    raise ValueError(f"duplicate subset {subset} at order {order}")
                seen.add(subset)
                if tuple(sorted(subset)) != subset:
                    raise ValueError(f"subset {subset} is not sorted")
                if not np.isfinite(strength):
                    raise ValueError(f"non-finite strength for {subset} at order {order}")

    def top(self, order: int, k: int) -> tuple[tuple[tuple[int, ...], float], ...]:
        return self.orders.get(order, ())[:k]


def representative_samples(data: Dataset, labels: Sequence[str], seed: int) -> list[Representative]:
    """One dataset row per aggregate label: the row nearest (L2) to the
    per-feature aggregate vector, ties to the lowest index; ``random``
    draws a row uniformly.  Labels are processed in canonical order."""
    if data.n == 0:
        raise ValueError("cannot pick representatives from an empty dataset")
    for lab in labels:
        if lab not in REPRESENTATIVE_LABELS:
            raise ValueError(f"unknown representative {lab!r}; expected one of {REPRESENTATIVE_LABELS}")
    x = data.features
    rng = np.random.default_rng(seed)
    out = []
    for lab in REPRESENTATIVE_LABELS:
        if lab not in labels:
            continue
        if lab == "random":
            idx = int(rng.integers(data.n))
        else:
            if lab == "mean":
                agg = x.mean(axis=0)
            elif lab == "median":
                agg = np.median(x, axis=0)
            elif lab == "min":
                agg = x.min(axis=0)
            elif lab == "max":
                agg = x.max(axis=0)
            else:
                agg = np.array([binned_mode(x[:, j]) for j in range(x.shape[1])])
            d = np.linalg.norm(x - agg, axis=1)
            idx = int(np.argmin(d))
        out.append(Representative(lab, idx, x[idx].copy()))
    return out


class _ModelEvaluator:
    """Scores every same-order candidate at a row in one batched lattice
    forward pass; row b of the batch carries candidate b's tags."""

    def __init__(self, model: Mlp, cfg: DetectConfig):
        self.model = model
        self.cfg = cfg

    def scores(self, row: np.ndarray, order: int, candidates: Sequence[tuple[int, ...]]) -> dict:
        if not candidates:
            return {}
        k = 1 << order
        arr = np.zeros((len(candidates), row.size, k))
        arr[:, :, 0] = row
        for b, cand in enumerate(candidates):
            for t, idx in enumerate(cand):
                arr[b, idx, 1 << t] = 1.0
        out = forward_lattice(self.model, arr, order)
        if self.cfg.task == "classification":
            if not self.cfg.use_logit:
                out = softmax_lattice(out, order)
            series = out[:, self.cfg.class_index, :]
        else:
            series = out[:, 0, :]
        full = series[:, k - 1]
        return {cand: float(full[b]) for b, cand in enumerate(candidates)}


class _FunctionEvaluator:
    """Scores candidates on a plain callable, one cross partial each.
    Rows where the callable raises a domain error drop that candidate."""

    def __init__(self, fn: Callable):
        self.fn = fn

    def scores(self, row: np.ndarray, order: int, candidates: Sequence[tuple[int, ...]]) -> dict:
        out = {}
        dropped = 0
        for cand in candidates:
            try:
                out[cand] = cross_partial(self.fn, row, cand)
            except DomainError:
                dropped += 1
        if dropped:
            warnings.warn(f"dropped {dropped} candidate(s) at one representative (domain error)")
        return out


def _check_order(model, order: int):
    if order > MAX_TAGS:
        raise CapacityError(f"order {order} exceeds the {MAX_TAGS}-tag limit")
    if isinstance(model, Mlp) and model.config.activation == "relu" and order >= 2:
        raise ActivationError(
            "relu has an identically zero second derivative, so cross partials "
            f"of order {order} are meaningless; train with gelu instead"
        )


def _make_evaluator(model, cfg: DetectConfig):
    if isinstance(model, Mlp):
        if cfg.task == "classification" and cfg.class_index >= model.config.output_dim:
            raise ValueError(
                f"class_index {cfg.class_index} out of range for output_dim {model.config.output_dim}"
            )
        return _ModelEvaluator(model, cfg)
    if callable(model):
        return _FunctionEvaluator(model)
    raise TypeError(f"model must be an Mlp or a callable, got {type(model).__name__}")


def local_ies(
    model,
    sample: np.ndarray,
    order: int,
    candidates: Sequence[Sequence[int]],
    *,
    task: str = "regression",
    class_index: int = 0,
    use_logit: bool = False,
) -> dict[tuple[int, ...], float]:
    """Raw signed cross partials of the model output at one sample, for
    every candidate subset of the given order."""
    _check_order(model, order)
    cands = []
    for c in candidates:
        c = tuple(sorted(c))
        if len(c) != order or len(set(c)) != order:
            raise ValueError(f"candidate {c} is not a distinct index set of size {order}")
        cands.append(c)
    cfg = DetectConfig(
        max_order=max(order, 2), task=task, class_index=class_index, use_logit=use_logit
    )
    ev = _make_evaluator(model, cfg)
    return ev.scores(np.asarray(sample, dtype=np.float64), order, cands)


def _transform(cfg: DetectConfig, raw: float) -> float:
    if cfg.task == "regression" or cfg.squared_multiclass:
        return raw * raw
    return raw


def _rep_profile(evaluator, rep: Representative, dim: int, cfg: DetectConfig):
    """Candidate schedule and raw scores for one representative: all
    subsets up to full_order, then single-element extensions of this
    representative's own top-k at each later order."""
    raw: dict[int, dict[tuple[int, ...], float]] = {}
    parents: dict[int, tuple[tuple[int, ...], ...]] = {}
    for order in range(2, cfg.max_order + 1):
        if order <= cfg.full_order:
            cands = [tuple(c) for c in combinations(range(dim), order)]
        else:
            prev = sorted(raw[order - 1].items(), key=lambda kv: (-abs(kv[1]), kv[0]))
            top = tuple(s for s, _ in prev[: cfg.top_k])
            parents[order] = top
            cands = sorted(
                {tuple(sorted(set(p) | {j})) for p in top for j in range(dim) if j not in p}
            )
        raw[order] = evaluator.scores(rep.row, order, cands)
    return raw, parents


def _aggregate(
    profiles: Mapping[str, dict[int, dict[tuple[int, ...], float]]],
    labels: Sequence[str],
    cfg: DetectConfig,
) -> dict[int, tuple[tuple[tuple[int, ...], float], ...]]:
    """Combine per-representative raw values into one strength per subset,
    aggregating only over the representatives that scored it."""
    agg = {
        "mean": lambda v: float(np.mean(v)),
        "median": lambda v: float(np.median(v)),
        "min": min,
        "max": max,
        "mode": binned_mode,
    }[cfg.aggregation]
    orders = {}
    for order in range(2, cfg.max_order + 1):
        union = sorted({s for lab in labels for s in profiles[lab].get(order, {})})
        rows = []
        for s in union:
            vals = [
                _transform(cfg, profiles[lab][order][s])
                for lab in labels
                if s in profiles[lab].get(order, {})
            ]
            rows.append((s, float(agg(vals))))
        rows.sort(key=lambda kv: (-abs(kv[1]), kv[0]))
        orders[order] = tuple(rows)
    return orders


def detect(model, data: Dataset, cfg: DetectConfig, threads: int = 1) -> InteractionRanking:
    """Rank variable subsets of every order 2..max_order by aggregated
    cross-partial strength at the configured representatives."""
    _check_order(model, cfg.max_order)
    if isinstance(model, Mlp):
        if model.config.input_dim != data.dim:
            raise ValueError(
                f"model expects {model.config.input_dim} features, data has {data.dim}"
            )
        if not data.normalized:
            raise ValueError("normalize the dataset before detecting on a trained model")
    evaluator = _make_evaluator(model, cfg)
    reps = representative_samples(data, cfg.representatives, cfg.seed)

    def job(rep):
        return _rep_profile(evaluator, rep, data.dim, cfg)

    if threads > 1 and len(reps) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(job, reps))
    else:
        results = [job(r) for r in reps]

    profiles = {rep.label: raw for rep, (raw, _) in zip(reps, results)}
    top_parents: dict[int, dict[str, tuple[tuple[int, ...], ...]]] = {}
    for rep, (_, parents) in zip(reps, results):
        for order, pts in parents.items():
            top_parents.setdefault(order, {})[rep.label] = pts

    orders = _aggregate(profiles, [r.label for r in reps], cfg)
    return InteractionRanking(
        orders=orders,
        representatives=tuple(reps),
        per_representative=profiles,
        top_parents=top_parents,
        config=cfg,
    )


def verify_extension_schedule(ranking: InteractionRanking) -> int:
    """Check that every subset reported beyond full_order contains a
    top-k parent of some representative.  Returns the number of subsets
    checked; raises if the lineage is broken anywhere."""
    cfg = ranking.config
    checked = 0
    for order, rows in ranking.orders.items():
        if order <= cfg.full_order:
            continue
        by_label = ranking.top_parents.get(order, {})
        for subset, _ in rows:
            s = set(subset)
            ok = any(
                any(set(p) < s for p in parents) for parents in by_label.values()
            )
            if not ok:
                raise ValueError(
                    f"order-{order} subset {subset} contains no top-{cfg.top_k} parent"
                )
            checked += 1
    return checked


@dataclass(frozen=True)
class SweepRow:
    label: str
    representatives: tuple[str, ...]
    aggregation: str
    score: float


def aggregation_sweep(
    model,
    data: Dataset,
    cfg: DetectConfig,
    score_fn: Callable[[InteractionRanking], float],
    threads: int = 1,
) -> list[SweepRow]:
    """Score every non-empty representative subset crossed with every
    aggregation: (2^6 - 1) * 5 = 315 rows, sorted by descending score.

    Each representative's candidate schedule depends only on its own
    local values, so all six profiles are computed once and the 315
    combinations just re-aggregate them.
    """
    base = replace(cfg, representatives=REPRESENTATIVE_LABELS)
    _check_order(model, base.max_order)
    evaluator = _make_evaluator(model, base)
    reps = representative_samples(data, REPRESENTATIVE_LABELS, base.seed)

    def job(rep):
        return _rep_profile(evaluator, rep, data.dim, base)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(job, reps))
    else:
        results = [job(r) for r in reps]
    profiles = {rep.label: raw for rep, (raw, _) in zip(reps, results)}
    parents_by_rep = {rep.label: parents for rep, (_, parents) in zip(reps, results)}

    rows = []
    for mask in range(1, 1 << len(REPRESENTATIVE_LABELS)):
        labels = tuple(
            lab for i, lab in enumerate(REPRESENTATIVE_LABELS) if mask & (1 << i)
        )
        active_reps = tuple(r for r in reps if r.label in labels)
        top_parents: dict[int, dict[str, tuple[tuple[int, ...], ...]]] = {}
        for lab in labels:
            for order, pts in parents_by_rep[lab].items():
                top_parents.setdefault(order, {})[lab] = pts
        for agg in AGGREGATION_LABELS:
            combo = replace(base, representatives=labels, aggregation=agg)
            ranking = InteractionRanking(
                orders=_aggregate(profiles, labels, combo),
                representatives=active_reps,
                per_representative={lab: profiles[lab] for lab in labels},
                top_parents=top_parents,
                config=combo,
            )
            name = f"{_AGG_DISPLAY[agg]} Of {'-'.join(_REP_DISPLAY[l] for l in labels)}"
            rows.append(SweepRow(name, labels, agg, float(score_fn(ranking))))
    rows.sort(key=lambda r: (-r.score, r.label))
    return rows


def ranking_document(ranking: InteractionRanking) -> dict:
    """JSON-ready view of a ranking: config echo, per-order subset lists,
    and the representatives that produced them."""
    return {
        "config": ranking.config.to_dict(),
        "orders": {
            str(order): [{"set": list(s), "strength": v} for s, v in rows]
            for order, rows in sorted(ranking.orders.items())
        },
        "representatives": [
            {"label": r.label, "row_index": r.row_index} for r in ranking.representatives
        ],
    }
