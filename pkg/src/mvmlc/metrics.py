"""Six multi-label evaluation measures plus ranking/reporting helpers.

Scores are ranked per sample in descending order with ties broken toward the
smaller label index; pairwise metrics (ranking loss, AUC) give ties half
credit. Hamming loss thresholds at 0.5. Coverage is normalised by the label
count so its 1-x report stays in [0, 1]. Samples without any relevant label
are excluded from the rank-based metrics, whose per-sample formulas are
undefined there (ranking loss additionally skips samples without any
irrelevant label); Hamming loss and AUC use every sample. The loss-like
measures are reported as 1-x so that higher is uniformly better.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, fields

import numpy as np

METRIC_NAMES = ("ap", "one_minus_hl", "one_minus_rl", "auc",
                "one_minus_oe", "one_minus_cov")

_LABELS = {"ap": "AP", "one_minus_hl": "1-HL", "one_minus_rl": "1-RL",
           "auc": "AUC", "one_minus_oe": "1-OE", "one_minus_cov": "1-Cov"}


@dataclass
class MetricsReport:
    ap: float
    one_minus_hl: float
    one_minus_rl: float
    auc: float
    one_minus_oe: float
    one_minus_cov: float

    def values(self) -> dict[str, float]:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def to_json(self) -> str:
        return json.dumps(self.values(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        return cls(**{k: float(d[k]) for k in METRIC_NAMES})


def _ranks_desc(scores: np.ndarray) -> np.ndarray:
    """1-based ranks, descending score, ties toward the smaller index."""
    c = scores.shape[0]
    order = np.lexsort((np.arange(c), -scores))
    ranks = np.empty(c, dtype=np.int64)
    ranks[order] = np.arange(1, c + 1)
    return ranks


def evaluate(scores: np.ndarray, labels: np.ndarray) -> MetricsReport:
    """Score one prediction matrix against binary ground truth."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    if scores.ndim != 2 or scores.shape != labels.shape:
        raise ValueError(f"shape mismatch: scores {scores.shape} vs labels "
                         f"{labels.shape}")
    n, c = scores.shape
    if n == 0 or c == 0:
        raise ValueError("need at least one sample and one label")
    if not np.isin(labels, (0.0, 1.0)).all():
        raise ValueError("labels must be binary")

    hl = float(((scores >= 0.5) != (labels == 1.0)).mean())

    ap_terms, rl_terms, oe_terms, cov_terms = [], [], [], []
    for i in range(n):
        rel = np.flatnonzero(labels[i] == 1.0)
        if rel.size == 0:
            continue
        irr = np.flatnonzero(labels[i] == 0.0)
        ranks = _ranks_desc(scores[i])

        oe_terms.append(0.0 if labels[i, np.argmin(ranks)] == 1.0 else 1.0)
        cov_terms.append((ranks[rel].max() - 1) / c)

        rel_ranks = np.sort(ranks[rel])
        ap_terms.append(np.mean(np.arange(1, rel.size + 1) / rel_ranks))

        if irr.size > 0:
            s_rel = scores[i, rel][:, None]
            s_irr = scores[i, irr][None, :]
            bad = (s_rel < s_irr).sum() + 0.5 * (s_rel == s_irr).sum()
            rl_terms.append(bad / (rel.size * irr.size))

    aucs = []
    for j in range(c):
        pos = scores[labels[:, j] == 1.0, j]
        neg = scores[labels[:, j] == 0.0, j]
        if pos.size == 0 or neg.size == 0:
            continue
        good = (pos[:, None] > neg[None, :]).sum() \
            + 0.5 * (pos[:, None] == neg[None, :]).sum()
        aucs.append(good / (pos.size * neg.size))

    mean = lambda xs: float(np.mean(xs)) if xs else 0.0
    return MetricsReport(
        ap=mean(ap_terms),
        one_minus_hl=1.0 - hl,
        one_minus_rl=1.0 - mean(rl_terms),
        auc=mean(aucs),
        one_minus_oe=1.0 - mean(oe_terms),
        one_minus_cov=1.0 - mean(cov_terms),
    )


# ---------------------------------------------------------------------------
# aggregation over repetitions and method ranking
# ---------------------------------------------------------------------------

def aggregate(reports: list[MetricsReport]) -> tuple[MetricsReport, MetricsReport]:
    """Per-metric mean and (population) standard deviation."""
    if not reports:
        raise ValueError("nothing to aggregate")
    stack = {k: np.array([r.values()[k] for r in reports]) for k in METRIC_NAMES}
    mean = MetricsReport(**{k: float(v.mean()) for k, v in stack.items()})
    std = MetricsReport(**{k: float(v.std()) for k, v in stack.items()})
    return mean, std


def format_mean_std(mean: float, std: float) -> str:
    """Table-convention cell, e.g. 0.438(0.006)."""
    return f"{mean:.3f}({std:.3f})"


def _average_rank_desc(values: np.ndarray) -> np.ndarray:
    """Rank 1 is the largest value; tied values share the mean rank."""
    order = np.argsort(-values, kind="stable")
    ranks = np.empty(len(values), dtype=np.float64)
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and values[order[j + 1]] == values[order[i]]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2 + 1
        i = j + 1
    return ranks


def average_rank(method_reports: dict[str, MetricsReport]) -> dict[str, float]:
    """Mean rank of each method across the six metrics (rank 1 = best)."""
    if len(method_reports) < 2:
        raise ValueError("ranking needs at least two methods")
    methods = list(method_reports)
    total = np.zeros(len(methods))
    for key in METRIC_NAMES:
        vals = np.array([method_reports[m].values()[key] for m in methods])
        total += _average_rank_desc(vals)
    return {m: float(t / len(METRIC_NAMES)) for m, t in zip(methods, total)}


def format_table(rows: dict[str, tuple[MetricsReport, MetricsReport]]) -> str:
    """Aligned text table of mean(std) cells, one row per method/run."""
    header = ["method"] + [_LABELS[k] for k in METRIC_NAMES]
    lines = [header]
    for name, (mean, std) in rows.items():
        cells = [format_mean_std(mean.values()[k], std.values()[k])
                 for k in METRIC_NAMES]
        lines.append([name] + cells)
    widths = [max(len(row[i]) for row in lines) for i in range(len(header))]
    return "\n".join("  ".join(cell.ljust(w) for cell, w in zip(row, widths))
                     for row in lines)
