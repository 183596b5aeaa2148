"""Evaluation runs: metrics per run and averaged over runs, seen/unseen sub-reports, ablations and cost tables."""
from dataclasses import asdict, dataclass, field
import logging
from typing import List, Optional, Tuple

import numpy as np

from background_worker import ProgressMonitor, run_parallel
from diagnosis.dxcore import STAGE1_SOURCES, ConfigError, DiagnosisError
from diagnosis.runrecord import RunRecord

from .metrics import reasoning_recall, first_hit_rank

logger = logging.getLogger(__name__)

HIT_WINDOWS = (1, 5, 10)
STRATEGY_NAMES = ("vote", "differential")
MODULE_ORDER = STAGE1_SOURCES + ("stage1", "stage2", "judge")


@dataclass(frozen=True)
class CaseOutcome:
    """Scoring of one case in one run. A failed case has `error` set and no scores.

    An unlabeled case has no gold diagnosis, so it has no hit rank and stays out of the hit fractions.
    """

    case_id: str
    hit_rank: Optional[int] = None
    recall: Optional[float] = None
    latencies: dict = field(default_factory=dict)
    tokens: dict = field(default_factory=dict)
    error: Optional[str] = None
    unlabeled: bool = False

    @property
    def failed(self):
        return self.error is not None


@dataclass(frozen=True)
class RunMetrics:
    """Metrics of one run. `n_cases` counts the cases behind the hit fractions.

    On a report's mean row the counts are per-run means as well.
    """

    hit_at_1: float
    hit_at_5: float
    hit_at_10: float
    reasoning_recall: Optional[float]
    n_cases: int
    excluded: int = 0
    recall_skipped: int = 0
    unlabeled: int = 0

    def __post_init__(self):
        hits = (self.hit_at_1, self.hit_at_5, self.hit_at_10)
        if any(h < 0.0 or h > 1.0 for h in hits):
            raise ValueError(f"hit fractions out of [0, 1]: {hits}")
        if not self.hit_at_1 <= self.hit_at_5 <= self.hit_at_10:
            raise ValueError(f"hit fractions are not monotone: {hits}")
        if self.reasoning_recall is not None and not 0.0 <= self.reasoning_recall <= 1.0:
            raise ValueError(f"reasoning recall {self.reasoning_recall} out of [0, 1]")


@dataclass(frozen=True)
class ModuleCost:
    module: str
    latency_minutes: float
    total_tokens: float


@dataclass(frozen=True)
class MetricReport:
    label: str
    runs: Tuple[RunMetrics, ...]
    mean: RunMetrics
    cost: Tuple[ModuleCost, ...] = ()
    seen: Optional["MetricReport"] = None
    unseen: Optional["MetricReport"] = None


@dataclass(frozen=True)
class Variant:
    label: str
    sources: Tuple[str, ...]
    strategy: str

    @property
    def single_source(self):
        return len(self.sources) == 1


def compute_run_metrics(outcomes: List[CaseOutcome]) -> RunMetrics:
    """compute_run_metrics() folds case outcomes into run metrics.

    Failed cases leave every denominator; unlabeled cases leave the hit denominators only.
    """
    scored = [o for o in outcomes if not o.failed]
    excluded = len(outcomes) - len(scored)
    labeled = [o for o in scored if not o.unlabeled]
    unlabeled = len(scored) - len(labeled)

    hits = [0.0] * len(HIT_WINDOWS)
    if labeled:
        ranks = np.array([o.hit_rank or 0 for o in labeled])
        hits = [float(np.mean((ranks >= 1) & (ranks <= k))) for k in HIT_WINDOWS]

    recalls = [o.recall for o in scored if o.recall is not None]
    recall = float(np.mean(recalls)) if recalls else None
    return RunMetrics(hits[0], hits[1], hits[2], recall, len(labeled), excluded, len(scored) - len(recalls), unlabeled)


def _mean_count(counts):
    mean = float(np.mean(counts))
    return int(mean) if mean.is_integer() else mean


def mean_metrics(runs: List[RunMetrics]) -> RunMetrics:
    recalls = [r.reasoning_recall for r in runs if r.reasoning_recall is not None]
    return RunMetrics(
        float(np.mean([r.hit_at_1 for r in runs])),
        float(np.mean([r.hit_at_5 for r in runs])),
        float(np.mean([r.hit_at_10 for r in runs])),
        float(np.mean(recalls)) if recalls else None,
        _mean_count([r.n_cases for r in runs]),
        _mean_count([r.excluded for r in runs]),
        _mean_count([r.recall_skipped for r in runs]),
        _mean_count([r.unlabeled for r in runs]),
    )


def _module_rank(module):
    return (MODULE_ORDER.index(module) if module in MODULE_ORDER else len(MODULE_ORDER), module)


def compute_cost(outcomes: List[CaseOutcome]) -> Tuple[ModuleCost, ...]:
    """Mean latency (minutes) and mean total tokens per case for every module seen in the records."""
    scored = [o for o in outcomes if not o.failed]
    if not scored:
        return ()

    modules = sorted({m for o in scored for m in list(o.latencies) + list(o.tokens)}, key=_module_rank)
    cost = []
    for module in modules:
        latency = np.mean([o.latencies.get(module, 0.0) for o in scored]) / 60.0
        tokens = np.mean([o.tokens.get(module, 0) for o in scored])
        cost.append(ModuleCost(module, float(latency), float(tokens)))
    return tuple(cost)


def _record_usage(records):
    latencies, tokens = {}, {}
    for record in records:
        for module, seconds in record.latencies.items():
            latencies[module] = latencies.get(module, 0.0) + seconds
        for module in record.modules():
            total = record.total_tokens(module)
            if total:
                tokens[module] = tokens.get(module, 0) + total
    return latencies, tokens


class Evaluator:
    """Evaluator scores pipeline runs with a matcher and an optional step judge."""

    def __init__(self, matcher, step_judge=None, recall_batched=False, max_k=max(HIT_WINDOWS)):
        self.matcher = matcher
        self.step_judge = step_judge
        self.recall_batched = recall_batched
        self.max_k = max_k

    def score_case(self, case, final, record) -> CaseOutcome:
        """score_case() computes the hit rank and reasoning recall of one final diagnosis."""
        judge_record = RunRecord(case.id)
        hit_rank = None
        if case.gold_diagnosis:
            matcher = self.matcher.for_record(judge_record)
            hit_rank = first_hit_rank(final.ranked, case.gold_diagnosis, matcher, self.max_k)

        recall = None
        if self.step_judge is not None and (case.gold_reasoning or "").strip():
            judge = self.step_judge.for_record(judge_record)
            recall = reasoning_recall(final.reasoning, case.gold_reasoning, judge, self.recall_batched)

        if judge_record.exchanges:
            judge_record.add_latency("judge", sum(e.latency for e in judge_record.exchanges))
        latencies, tokens = _record_usage([record, judge_record])
        return CaseOutcome(case.id, hit_rank, recall, latencies, tokens, unlabeled=not case.gold_diagnosis)

    def evaluate_case(self, pipeline, case) -> CaseOutcome:
        try:
            run = pipeline.run_case(case)
            return self.score_case(case, run.final, run.record)
        except DiagnosisError as e:
            logger.warning("Case %s failed and is excluded: %s", case.id, e)
            return CaseOutcome(case.id, error=str(e))


def run_evaluation(cases, pipeline, runs, evaluator, partition=None, limit=None, label="MultiSource", progress=None) -> MetricReport:
    """run_evaluation() runs every case `runs` times and reports per-run metrics and their mean.

    Cases within a run execute concurrently (at most `limit` at once); runs are sequential.
    """
    if runs < 1:
        raise ConfigError(f"runs must be >= 1, got {runs}")
    progress = progress or ProgressMonitor(label)

    per_run = []
    for run_index in range(runs):
        progress.set_subrange(run_index * 100 // runs, (run_index + 1) * 100 // runs)
        done = []

        def on_done(_result, done=done):
            done.append(1)
            progress.progress_message(len(done) * 100 // max(len(cases), 1), f"run {run_index + 1}: {len(done)}/{len(cases)} cases")

        handlers = [lambda case=case: evaluator.evaluate_case(pipeline, case) for case in cases]
        results = run_parallel(handlers, limit, [f"case-{case.id}" for case in cases], on_done)

        outcomes = []
        for case, result in zip(cases, results):
            if result.failed:
                outcomes.append(CaseOutcome(case.id, error=str(result.error)))
            else:
                outcomes.append(result.value)
        for outcome in outcomes:
            if outcome.failed:
                progress.error_message(f"run {run_index + 1}, case {outcome.case_id}: {outcome.error}")
        per_run.append(outcomes)

    return build_report(label, per_run, partition)


def build_report(label, per_run: List[List[CaseOutcome]], partition=None) -> MetricReport:
    """build_report() is a pure fold over case outcomes, so it can be recomputed from stored outcomes."""
    run_metrics = tuple(compute_run_metrics(outcomes) for outcomes in per_run)
    all_outcomes = [o for outcomes in per_run for o in outcomes]
    report = MetricReport(label, run_metrics, mean_metrics(run_metrics), compute_cost(all_outcomes))

    if partition is None:
        return report

    def subset(name, ids):
        ids = set(ids)
        runs = tuple(compute_run_metrics([o for o in outcomes if o.case_id in ids]) for outcomes in per_run)
        return MetricReport(f"{label} ({name})", runs, mean_metrics(runs))

    return MetricReport(label, report.runs, report.mean, report.cost, subset("seen", partition.seen), subset("unseen", partition.unseen))


def parse_variant(text, default_strategy) -> Variant:
    """parse_variant() reads an ablation variant.

    `soap`, `web`, `case`, `trace` run one source; `vote` and `differential` run all sources with
    that strategy; `a+b[:strategy]` names an explicit subset.
    """
    text = text.strip()
    if text in STRATEGY_NAMES:
        return Variant(text, STAGE1_SOURCES, text)

    names, _, strategy = text.partition(":")
    strategy = strategy.strip() or default_strategy
    if strategy not in STRATEGY_NAMES:
        raise ConfigError(f"variant '{text}': unknown strategy '{strategy}'")

    sources = [s.strip() for s in names.split("+") if s.strip()]
    if not sources:
        raise ConfigError(f"variant '{text}' enables no source")
    unknown = [s for s in sources if s not in STAGE1_SOURCES]
    if unknown:
        raise ConfigError(f"variant '{text}': unknown source(s) {', '.join(unknown)}")

    ordered = tuple(s for s in STAGE1_SOURCES if s in sources)
    return Variant(text, ordered, strategy)


def parse_variants(text, default_strategy) -> List[Variant]:
    variants = [parse_variant(v, default_strategy) for v in text.split(",") if v.strip()]
    if not variants:
        raise ConfigError("no ablation variant given")
    return variants


def run_ablation(cases, variants: List[Variant], make_pipeline, runs, evaluator, limit=None, progress=None):
    """run_ablation() evaluates each variant with a pipeline from make_pipeline(variant); one report per variant."""
    if not variants:
        raise ConfigError("no ablation variant given")
    progress = progress or ProgressMonitor("ablation")

    reports = []
    for index, variant in enumerate(variants):
        logger.info("Ablation variant %s: sources=%s strategy=%s", variant.label, "+".join(variant.sources), variant.strategy)
        progress.progress_message(index * 100 // len(variants), f"variant {variant.label}")
        pipeline = make_pipeline(variant)
        reports.append(run_evaluation(cases, pipeline, runs, evaluator, limit=limit, label=variant.label))
    progress.progress_message(100, "ablation done")
    return reports


# Rendering

def _fraction(value):
    return "-" if value is None else f"{value:.3f}"


def _table(header, rows):
    widths = [max(len(str(r[i])) for r in [header] + rows) for i in range(len(header))]
    lines = [" | ".join(str(c).ljust(w) for c, w in zip(header, widths))]
    lines.append("-+-".join("-" * w for w in widths))
    lines += [" | ".join(str(c).ljust(w) for c, w in zip(row, widths)) for row in rows]
    return "\n".join(lines)


def _count(value):
    return f"{value:.1f}" if isinstance(value, float) else str(value)


def _metric_cells(m: RunMetrics):
    counts = [_count(m.n_cases), _count(m.excluded), _count(m.unlabeled)]
    return [_fraction(m.hit_at_1), _fraction(m.hit_at_5), _fraction(m.hit_at_10), _fraction(m.reasoning_recall)] + counts


METRIC_HEADER = ["H@1", "H@5", "H@10", "Reasoning Recall", "cases", "excluded", "unlabeled"]


def render_report_table(report: MetricReport) -> str:
    rows = [[f"run {i + 1}"] + _metric_cells(m) for i, m in enumerate(report.runs)]
    rows.append(["mean"] + _metric_cells(report.mean))
    return f"{report.label}\n" + _table(["run"] + METRIC_HEADER, rows)


def render_ablation_table(reports: List[MetricReport]) -> str:
    rows = [[r.label] + _metric_cells(r.mean) for r in reports]
    return _table(["variant"] + METRIC_HEADER, rows)


def render_split_table(report: MetricReport) -> str:
    rows = []
    for sub in (report.seen, report.unseen):
        if sub is not None:
            rows.append([sub.label, _fraction(sub.mean.hit_at_1), _fraction(sub.mean.hit_at_5), _count(sub.mean.n_cases)])
    return _table(["subset", "H@1", "H@5", "cases"], rows)


def render_cost_table(report: MetricReport) -> str:
    rows = [[c.module, f"{c.latency_minutes:.2f}", f"{c.total_tokens:.0f}"] for c in report.cost]
    # sources overlap inside the stage1 wall clock
    wall_clock = sum(c.latency_minutes for c in report.cost if c.module not in STAGE1_SOURCES)
    rows.append(["total", f"{wall_clock:.2f}", f"{sum(c.total_tokens for c in report.cost):.0f}"])
    return _table(["module", "Avg Latency (min)", "Avg Total Tokens"], rows)


def metric_report_to_dict(report: MetricReport):
    return asdict(report)
