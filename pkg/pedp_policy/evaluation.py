"""
Standard (corpus) and interactive (simulator) metrics, and run comparison.
"""

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from jinja2 import Environment, PackageLoader

from pedp_policy.actions import MacroAction

STANDARD_METRICS = ("precision", "recall", "f1")
INTERACTIVE_METRICS = ("inform_precision", "inform_recall", "inform_f1", "match_rate", "success_rate", "avg_turns")


class MetricError(ValueError):
    """Raised for empty or mismatched metric inputs."""
    pass


def _f1(precision: float, recall: float) -> float:
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


@dataclass
class StandardReport:
    precision: float
    recall: float
    f1: float
    n_samples: int
    per_sample: List[Dict[str, float]] = field(default_factory=list)
    run_digest: Optional[str] = None

    def metrics(self) -> Dict[str, float]:
        return {name: getattr(self, name) for name in STANDARD_METRICS}

    def to_dict(self) -> Dict:
        return asdict(self)


def sample_scores(prediction: MacroAction, gold: MacroAction) -> Dict[str, float]:
    tp = len(prediction.members & gold.members)
    if prediction.members:
        precision = tp / len(prediction)
    else:
        precision = 1.0 if not gold.members else 0.0
    recall = tp / len(gold) if gold.members else 1.0
    return {"precision": precision, "recall": recall, "f1": _f1(precision, recall)}


def standard_metrics(predictions: Sequence[MacroAction], golds: Sequence[MacroAction]) -> StandardReport:
    """Sample-wise precision, recall and F1 of predicted macro-actions, averaged over samples."""
    if len(predictions) != len(golds):
        raise MetricError(f"{len(predictions)} predictions for {len(golds)} gold macro-actions")
    if not golds:
        raise MetricError("No samples to evaluate")
    per_sample = [sample_scores(p, g) for p, g in zip(predictions, golds)]
    means = {name: float(np.mean([s[name] for s in per_sample])) for name in STANDARD_METRICS}
    return StandardReport(n_samples=len(golds), per_sample=per_sample, **means)


@dataclass
class EpisodeScores:
    inform_precision: float
    inform_recall: float
    inform_f1: float
    match: bool
    success: bool
    turns: int


@dataclass
class InteractiveReport:
    inform_precision: float
    inform_recall: float
    inform_f1: float
    match_rate: float
    success_rate: float
    avg_turns: float
    n_episodes: int
    episodes: List[Dict] = field(default_factory=list)
    run_digest: Optional[str] = None

    def metrics(self) -> Dict[str, float]:
        return {name: getattr(self, name) for name in INTERACTIVE_METRICS}

    def to_dict(self) -> Dict:
        return asdict(self)


def episode_scores(provided: Sequence[str], requested: Sequence[str], match: bool, turns: int) -> EpisodeScores:
    """
    Inform scores over requestable "domain-slot" names; success needs every
    requested slot provided and a matching booking.
    """
    provided, requested = set(provided), set(requested)
    hits = len(provided & requested)
    recall = hits / len(requested) if requested else 1.0
    if provided:
        precision = hits / len(provided)
    else:
        precision = 1.0 if not requested else 0.0
    return EpisodeScores(precision, recall, _f1(precision, recall), bool(match),
                         recall == 1.0 and bool(match), int(turns))


def interactive_metrics(episodes: Sequence) -> InteractiveReport:
    """
    :param episodes: EpisodeLog-like objects with provided, requested, match and n_turns
    """
    if not episodes:
        raise MetricError("No episodes to evaluate")
    scores = [episode_scores(e.provided, e.requested, e.match, e.n_turns) for e in episodes]
    return InteractiveReport(
        inform_precision=float(np.mean([s.inform_precision for s in scores])),
        inform_recall=float(np.mean([s.inform_recall for s in scores])),
        inform_f1=float(np.mean([s.inform_f1 for s in scores])),
        match_rate=float(np.mean([s.match for s in scores])),
        success_rate=float(np.mean([s.success for s in scores])),
        avg_turns=float(np.mean([s.turns for s in scores])),
        n_episodes=len(scores),
        episodes=[asdict(s) for s in scores],
    )


@dataclass
class MetricSummary:
    mean_a: float
    std_a: float
    mean_b: float
    std_b: float
    delta: float


def _mean_std(values: Sequence[float]) -> Tuple[float, float]:
    values = np.asarray(values, dtype=float)
    std = float(np.std(values, ddof=1)) if len(values) > 1 else 0.0
    return float(np.mean(values)), std


def _metric_dicts(reports: Sequence) -> List[Dict[str, float]]:
    out = []
    for report in reports:
        if hasattr(report, "metrics"):
            out.append(report.metrics())
        else:
            out.append({k: report[k] for k in STANDARD_METRICS + INTERACTIVE_METRICS if k in report})
    return out


def compare_runs(reports_a: Sequence, reports_b: Sequence, label_a: str = "a", label_b: str = "b") -> Dict:
    """
    Per-metric mean and sample standard deviation over the runs (seeds) of two
    configurations, plus the difference of means (b - a).
    """
    if not reports_a or not reports_b:
        raise MetricError("Both sides of a comparison need at least one report")
    a, b = _metric_dicts(reports_a), _metric_dicts(reports_b)
    names = set(a[0])
    if any(set(m) != names for m in a + b):
        raise MetricError("Reports being compared do not share one metric set")
    ordered = [n for n in STANDARD_METRICS + INTERACTIVE_METRICS if n in names] + \
        sorted(names - set(STANDARD_METRICS + INTERACTIVE_METRICS))
    metrics = {}
    for name in ordered:
        mean_a, std_a = _mean_std([m[name] for m in a])
        mean_b, std_b = _mean_std([m[name] for m in b])
        metrics[name] = asdict(MetricSummary(mean_a, std_a, mean_b, std_b, mean_b - mean_a))
    return {"label_a": label_a, "label_b": label_b, "runs_a": len(a), "runs_b": len(b), "metrics": metrics}


def summarize_runs(reports: Sequence) -> Dict[str, Dict[str, float]]:
    """Mean and sample standard deviation per metric over runs of one configuration."""
    if not reports:
        raise MetricError("No reports to summarize")
    metrics = _metric_dicts(reports)
    summary = {}
    for name in metrics[0]:
        mean, std = _mean_std([m[name] for m in metrics])
        summary[name] = {"mean": mean, "std": std}
    return summary


def _fmt(value: float) -> str:
    if math.isnan(value):
        return "nan"
    return f"{value:.4f}"


def render_comparison(comparison: Dict, run_digest: Optional[str] = None) -> str:
    """Render a compare_runs result as an aligned plain-text table."""
    env = Environment(loader=PackageLoader("pedp_policy", "templates"), keep_trailing_newline=True)
    env.filters["fmt"] = _fmt
    template = env.get_template("comparison.txt")
    width = max([len(name) for name in comparison["metrics"]] + [len("metric")])
    return template.render(comparison=comparison, width=width, run_digest=run_digest)


def load_report(path: Path) -> Dict:
    try:
        with Path(path).open("r", encoding="utf-8") as f:
            return json.load(f)
    except (OSError, json.JSONDecodeError) as err:
        raise MetricError(f"Unable to read report {path}: {err}") from err
