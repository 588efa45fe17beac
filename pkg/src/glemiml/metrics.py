"""Multi-label evaluation metrics and cross-method rank aggregation."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateInputError, ShapeError

METRIC_DIRECTIONS = {
    "hamming_loss": "lower",
    "ranking_loss": "lower",
    "macro_avg_precision": "higher",
    "macro_f1": "higher",
}

METRIC_LABELS = {
    "hamming_loss": "HL",
    "ranking_loss": "RL",
    "macro_avg_precision": "mAP",
    "macro_f1": "Ma-F1",
}


@dataclass
class MetricsReport:
    hamming_loss: float
    ranking_loss: float
    macro_avg_precision: float
    macro_f1: float
    per_label_f1: list[float] | None = None
    # Which mAP reading produced this report (label-wise macro averaging).
    map_definition: str = "label-wise"

    def as_dict(self) -> dict:
        return {
            "hamming_loss": self.hamming_loss,
            "ranking_loss": self.ranking_loss,
            "macro_avg_precision": self.macro_avg_precision,
            "macro_f1": self.macro_f1,
            "map_definition": self.map_definition,
        }


def _check_shapes(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape or a.ndim != 2:
        raise ShapeError(f"expected matching 2-D shapes, got {a.shape} and {b.shape}")


def hamming_loss(pred: np.ndarray, truth: np.ndarray) -> float:
    """Fraction of (bag, label) cells where prediction and truth disagree."""
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    _check_shapes(pred, truth)
    return float(np.mean(pred != truth))


def ranking_loss(scores: np.ndarray, truth: np.ndarray) -> float:
    """Mean fraction of mis-ordered (positive, negative) label pairs per bag.

    Ties count as violations; bags without both a positive and a negative
    label are skipped.
    """
    scores = np.asarray(scores, dtype=np.float64)
    truth = np.asarray(truth)
    _check_shapes(scores, truth)
    per_bag = []
    for i in range(scores.shape[0]):
        pos = np.flatnonzero(truth[i] == 1)
        neg = np.flatnonzero(truth[i] == 0)
        if pos.size == 0 or neg.size == 0:
            continue
        violations = np.sum(scores[i, pos][:, None] <= scores[i, neg][None, :])
        per_bag.append(violations / (pos.size * neg.size))
    if not per_bag:
        raise DegenerateInputError("no bag has both positive and negative labels")
    return float(np.mean(per_bag))


def macro_average_precision(scores: np.ndarray, truth: np.ndarray) -> float:
    """Label-wise average precision over bag rankings, macro-averaged.

    Per label: bags ranked by score descending (ties broken by bag index
    ascending); AP is the mean over positive bags of precision at their rank.
    Labels without any positive bag are excluded.
    """
    scores = np.asarray(scores, dtype=np.float64)
    truth = np.asarray(truth)
    _check_shapes(scores, truth)
    aps = []
    for j in range(scores.shape[1]):
        pos_mask = truth[:, j] == 1
        if not pos_mask.any():
            continue
        order = np.lexsort((np.arange(scores.shape[0]), -scores[:, j]))
        ranked_pos = pos_mask[order]
        cum_pos = np.cumsum(ranked_pos)
        ranks = np.arange(1, scores.shape[0] + 1)
        aps.append(float(np.mean((cum_pos / ranks)[ranked_pos])))
    if not aps:
        raise DegenerateInputError("no label has a positive bag")
    return float(np.mean(aps))


def macro_f1(pred: np.ndarray, truth: np.ndarray) -> tuple[float, list[float]]:
    """Per-label F1 (0/0 counts as 0), averaged over all labels."""
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    _check_shapes(pred, truth)
    f1s = []
    for j in range(pred.shape[1]):
        tp = int(np.sum((pred[:, j] == 1) & (truth[:, j] == 1)))
        fp = int(np.sum((pred[:, j] == 1) & (truth[:, j] == 0)))
        fn = int(np.sum((pred[:, j] == 0) & (truth[:, j] == 1)))
        denom = 2 * tp + fp + fn
        f1s.append(2 * tp / denom if denom > 0 else 0.0)
    return float(np.mean(f1s)), f1s


def compute_report(probs: np.ndarray, pred: np.ndarray, truth: np.ndarray) -> MetricsReport:
    ma_f1, per_label = macro_f1(pred, truth)
    return MetricsReport(
        hamming_loss=hamming_loss(pred, truth),
        ranking_loss=ranking_loss(probs, truth),
        macro_avg_precision=macro_average_precision(probs, truth),
        macro_f1=ma_f1,
        per_label_f1=per_label,
    )


def average_rank(table: dict, directions: dict) -> dict:
    """Mean rank per method over all (dataset, metric) columns.

    `table` maps method -> column -> score (None for missing cells, which get
    the worst rank). Rank 1 is best per the column's direction; ties share the
    minimum rank.
    """
    if not table:
        raise DegenerateInputError("empty score grid")
    methods = list(table.keys())
    columns = sorted({col for scores in table.values() for col in scores})
    if not columns:
        raise DegenerateInputError("score grid has no columns")
    totals = {m: 0.0 for m in methods}
    for col in columns:
        metric = col[1] if isinstance(col, tuple) else col
        higher = directions.get(metric, "lower") == "higher"
        vals = {m: table[m].get(col) for m in methods}
        worst_rank = len(methods)
        for m in methods:
            v = vals[m]
            if v is None:
                totals[m] += worst_rank
                continue
            better = sum(
                1 for other, ov in vals.items()
                if other != m and ov is not None
                and ((ov > v) if higher else (ov < v))
            )
            totals[m] += better + 1
        # ties naturally share the minimum rank: equal scores count no 'better'
    return {m: totals[m] / len(columns) for m in methods}


def format_report_table(reports: dict) -> str:
    """Aligned text table: metric rows with direction markers, one method per column.

    `reports` maps method name -> MetricsReport. Parenthesized ranks follow
    each value when more than one method is present.
    """
    methods = list(reports.keys())
    metric_keys = list(METRIC_DIRECTIONS.keys())
    table = {
        m: {k: getattr(reports[m], k) for k in metric_keys} for m in methods
    }
    lines = []
    header = f"{'Metric':<10}" + "".join(f"{m:>18}" for m in methods)
    lines.append(header)
    for k in metric_keys:
        arrow = "v" if METRIC_DIRECTIONS[k] == "lower" else "^"
        row = f"{METRIC_LABELS[k] + arrow:<10}"
        vals = {m: table[m][k] for m in methods}
        for m in methods:
            v = vals[m]
            if v is None:
                cell = f"N/A({len(methods)})"
            elif len(methods) > 1:
                higher = METRIC_DIRECTIONS[k] == "higher"
                better = sum(
                    1 for other, ov in vals.items()
                    if other != m and ov is not None
                    and ((ov > v) if higher else (ov < v))
                )
                cell = f"{v:.4f}({better + 1})"
            else:
                cell = f"{v:.4f}"
            row += f"{cell:>18}"
        lines.append(row)
    return "\n".join(lines) + "\n"
