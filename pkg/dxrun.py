#!/usr/bin/env python
"""
Command-line entry point: build the case index, diagnose one case, evaluate a case set,
run ablations and inspect persisted run records.
"""
import argparse
import datetime
import logging
import os
import sys

from atomicfile import read_json, write_json
from casedb.corpus import load_case_set
from casedb.database import CaseDatabase
from diagnosis.dxcore import CaseReport, ConfigError, DiagnosisError, render_disease_list
from evaluation.harness import (
    Evaluator,
    metric_report_to_dict,
    parse_variants,
    render_ablation_table,
    render_cost_table,
    render_report_table,
    render_split_table,
    run_ablation,
    run_evaluation,
)
from evaluation.metrics import StepJudge, make_matcher
from evaluation.splits import seen_unseen_split
from orchestrator import PipelineFactory, RunStore
from pipeline_config import RECALL_BATCHED, RECALL_OFF, PipelineConfig

logger = logging.getLogger("dxrun")

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_RUNTIME = 2

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"
PREVIEW_CHARS = 400


class UsageError(Exception):
    pass


class CommandError(Exception):
    """A runtime failure, tagged with the case being processed when there is one."""

    def __init__(self, message, case_id=None):
        self.case_id = case_id
        super().__init__(message)

    def __str__(self):
        message = super().__str__()
        if self.case_id and not message.startswith(f"case {self.case_id}"):
            return f"case {self.case_id}: {message}"
        return message


class DxArgumentParser(argparse.ArgumentParser):
    """argparse exits with status 2 on bad arguments; here usage problems are status 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def str_to_pair(value):
    key, sep, setting = value.partition("=")
    if not sep or not key.strip():
        raise argparse.ArgumentTypeError(f"'{value}' is not KEY=VALUE")
    return key.strip(), setting.strip()


def parse_cmdline():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="Pipeline configuration file (key = value lines).")
    common.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"], help="Logging level.")
    common.add_argument("--sources", help="Comma-separated Stage-1 sources, e.g. soap,web,case,trace.")
    common.add_argument("--strategy", choices=["vote", "differential"], help="Stage-2 integration strategy.")
    common.add_argument("--matcher", choices=["exact-normalized", "judge"], help="Diagnosis matcher used for scoring.")
    common.add_argument("--recall-mode", choices=["per-step", "batched", "off"], help="Reasoning recall judging mode.")
    common.add_argument("--output-dir", help="Directory that receives run directories.")
    common.add_argument("--run-name", help="Run directory name (default: a timestamp).")
    common.add_argument("--set-option", type=str_to_pair, action="append", default=[], metavar="KEY=VALUE", help="Override any setting.")

    parser = DxArgumentParser(description="Multi-source differential diagnosis pipeline.")
    commands = parser.add_subparsers(dest="command", metavar="command")
    commands.required = True

    ingest = commands.add_parser("ingest", parents=[common], help="Build and persist the case database index.")
    ingest.add_argument("--corpus", help="Annotated corpus file (one JSON record per line).")
    ingest.add_argument("--index", help="Index file to write.")

    run_case = commands.add_parser("run-case", parents=[common], help="Diagnose one case.")
    source = run_case.add_mutually_exclusive_group(required=True)
    source.add_argument("--case", help="Plain-text case file.")
    source.add_argument("--text", help="Case text.")
    run_case.add_argument("--id", help="Case id (default: the case file name).")
    run_case.add_argument("--gold", help="Gold diagnosis; scores the final list when given.")
    run_case.add_argument("--index", help="Case database index to load.")

    run_eval = commands.add_parser("run-eval", parents=[common], help="Evaluate a case set.")
    run_eval.add_argument("--set", required=True, dest="case_set", help="Evaluation set (one JSON record per line).")
    run_eval.add_argument("--runs", type=int, default=1, help="Number of repeated runs.")
    run_eval.add_argument("--limit", type=int, help="Cases evaluated concurrently (default: the concurrency setting).")
    run_eval.add_argument("--index", help="Case database index to load.")

    ablate = commands.add_parser("ablate", parents=[common], help="Evaluate source and strategy variants.")
    ablate.add_argument("--set", required=True, dest="case_set", help="Evaluation set (one JSON record per line).")
    ablate.add_argument("--variants", default="soap,web,case,trace,vote,differential", help="Comma-separated variants.")
    ablate.add_argument("--runs", type=int, default=1, help="Number of repeated runs per variant.")
    ablate.add_argument("--limit", type=int, help="Cases evaluated concurrently.")
    ablate.add_argument("--index", help="Case database index to load.")

    show = commands.add_parser("show-record", parents=[common], help="Print a persisted run record.")
    show.add_argument("record", help="A <case>.record.json file.")
    show.add_argument("--full", action="store_true", help="Print prompts and completions in full.")

    return parser


def load_config(args):
    config = PipelineConfig()
    config.read_config(args.config)

    overrides = dict(args.set_option)
    for key in ("sources", "strategy", "matcher", "recall_mode", "output_dir"):
        value = getattr(args, key, None)
        if value is not None:
            overrides[key] = value
    if getattr(args, "index", None):
        overrides["index_path"] = args.index
    if overrides:
        config.override(overrides)
    return config


def run_directory(config, args):
    name = args.run_name or datetime.datetime.now().strftime("%Y%m%d-%H%M%S")
    return os.path.join(config.output_dir, name)


def make_evaluator(factory, config):
    matcher = make_matcher(config.matcher, factory.gateway, factory.catalog)
    step_judge = None if config.recall_mode == RECALL_OFF else StepJudge(factory.gateway, factory.catalog)
    return Evaluator(matcher, step_judge, config.recall_mode == RECALL_BATCHED)


def make_partition(factory, config, cases):
    if not (config.corpus_path or (config.index_path and os.path.exists(config.index_path))):
        return None
    return seen_unseen_split(cases, factory.database.corpus, factory.synonyms)


def cmd_ingest(args, config):
    corpus_path = args.corpus or config.corpus_path
    index_path = args.index or config.index_path
    if not corpus_path or not index_path:
        raise UsageError("ingest needs --corpus and --index (or corpus_path and index_path in the config)")

    factory = PipelineFactory(config)
    database = CaseDatabase.build(corpus_path, factory.make_extractor(), config.bm25_k1, config.bm25_b)
    database.save(index_path)
    print(f"Indexed {len(database)} cases and {len(database.segments)} trace segments into {index_path}")
    return EXIT_OK


def read_case(args):
    if args.case:
        with open(args.case, "rt", encoding="utf-8-sig") as f:
            text = f.read()
        case_id = args.id or os.path.splitext(os.path.basename(args.case))[0]
    else:
        text = args.text
        case_id = args.id or "case"
    try:
        return CaseReport(case_id, text, None, args.gold)
    except ValueError as e:
        raise UsageError(str(e)) from e


def cmd_run_case(args, config):
    case = read_case(args)
    factory = PipelineFactory(config)
    store = RunStore(run_directory(config, args), config.settings())
    pipeline = factory.build(store=store)

    try:
        run = pipeline.run_case(case)
    except DiagnosisError as e:
        raise CommandError(str(e), case.id) from e
    finally:
        store.write_manifest()

    final = run.final
    print(f"Case {case.id}: {final.strategy}{' (degraded)' if final.degraded else ''}")
    print(render_disease_list(final.ranked))
    for note in final.notes:
        print(f"note: {note}")

    if case.gold_diagnosis:
        try:
            outcome = make_evaluator(factory, config).score_case(case, final, run.record)
        except DiagnosisError as e:
            raise CommandError(str(e), case.id) from e
        hit = f"rank {outcome.hit_rank}" if outcome.hit_rank else "not in the top 10"
        print(f"Gold diagnosis '{case.gold_diagnosis}': {hit}")

    print(f"Wrote {store.final_filename(case.id)}")
    return EXIT_OK


def check_runs(args):
    if args.runs < 1:
        raise UsageError(f"--runs must be >= 1, got {args.runs}")
    if args.limit is not None and args.limit < 1:
        raise UsageError(f"--limit must be >= 1, got {args.limit}")


def cmd_run_eval(args, config):
    check_runs(args)
    cases = load_case_set(args.case_set)
    directory = run_directory(config, args)

    factory = PipelineFactory(config)
    store = RunStore(directory, config.settings())
    pipeline = factory.build(store=store)
    evaluator = make_evaluator(factory, config)
    partition = make_partition(factory, config, cases)

    try:
        report = run_evaluation(cases, pipeline, args.runs, evaluator, partition, args.limit or config.concurrency)
    finally:
        store.write_manifest()

    print(render_report_table(report))
    if report.seen is not None:
        print()
        print(render_split_table(report))
    print()
    print(render_cost_table(report))

    write_json(os.path.join(directory, "report.json"), metric_report_to_dict(report))
    return EXIT_OK


def cmd_ablate(args, config):
    check_runs(args)
    cases = load_case_set(args.case_set)
    variants = parse_variants(args.variants, config.strategy)
    directory = run_directory(config, args)

    factory = PipelineFactory(config)
    evaluator = make_evaluator(factory, config)

    def make_pipeline(variant):
        store = RunStore(os.path.join(directory, variant.label.replace(":", "-")), config.settings())
        return factory.build(variant.sources, variant.strategy, store)

    reports = run_ablation(cases, variants, make_pipeline, args.runs, evaluator, args.limit or config.concurrency)

    print(render_ablation_table(reports))
    write_json(os.path.join(directory, "ablation.json"), [metric_report_to_dict(r) for r in reports])
    return EXIT_OK


def _preview(text, full):
    text = text or ""
    if full or len(text) <= PREVIEW_CHARS:
        return text
    return text[:PREVIEW_CHARS] + f" ... [{len(text) - PREVIEW_CHARS} more chars]"


def cmd_show_record(args, config):
    if not os.path.exists(args.record):
        raise UsageError(f"record file '{args.record}' does not exist")
    record = read_json(args.record)

    print(f"Case {record.get('case_id')}")
    tokens = record.get("tokens", {})
    print(f"Tokens: {tokens.get('prompt', 0)} prompt, {tokens.get('completion', 0)} completion")
    for module, seconds in sorted(record.get("latencies", {}).items()):
        print(f"Latency {module}: {seconds:.2f}s")

    for n, exchange in enumerate(record.get("exchanges", []), 1):
        print()
        print(f"[{n}] {exchange['module']} ({exchange['prompt_tokens']}+{exchange['completion_tokens']} tokens, {exchange['latency']:.2f}s)")
        print("--- prompt")
        print(_preview(exchange["prompt"], args.full))
        print("--- completion")
        print(_preview(exchange["completion"], args.full))

    tool_log = record.get("tool_log", [])
    if tool_log:
        print()
        print("Tool log:")
    for entry in tool_log:
        status = "BLOCKED" if entry.get("blocked") else ("ERROR " + entry["error"] if entry.get("error") else "ok")
        print(f"  step {entry.get('step')}: {entry.get('tool')}({entry.get('argument')}) -> {status}")
        if entry.get("url"):
            print(f"    url: {entry['url']}")
        for url in entry.get("blocked_urls") or []:
            print(f"    blocked: {url}")
        if entry.get("result"):
            print(f"    {_preview(entry['result'], args.full)}")

    notes = record.get("notes", [])
    if notes:
        print()
        print("Notes:")
        for note in notes:
            print(f"  {note}")

    final_filename = args.record.replace(".record.json", ".final.json")
    if final_filename != args.record and os.path.exists(final_filename):
        final = read_json(final_filename)
        print()
        print(f"Final ({final.get('strategy')}{', degraded' if final.get('degraded') else ''}):")
        for item in final.get("items", []):
            print(f"  {item['rank']}. {item['name']}")
    return EXIT_OK


COMMANDS = {
    "ingest": cmd_ingest,
    "run-case": cmd_run_case,
    "run-eval": cmd_run_eval,
    "ablate": cmd_ablate,
    "show-record": cmd_show_record,
}


def main(argv=None):
    parser = parse_cmdline()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE

    logging.basicConfig(level=getattr(logging, args.log_level), format=LOG_FORMAT)

    try:
        config = load_config(args)
        return COMMANDS[args.command](args, config)
    except (UsageError, ConfigError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (CommandError, DiagnosisError, OSError, ValueError) as e:
        logger.debug("Command %s failed", args.command, exc_info=True)
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
