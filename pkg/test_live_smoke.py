"""Directional check against a live model; needs DX_API_KEY and DX_EVAL_SET (and DX_CONFIG for search settings)."""
import os

from pytest import mark

from casedb.corpus import load_case_set
from evaluation.harness import Evaluator, parse_variants, run_ablation
from evaluation.metrics import make_matcher
from orchestrator import PipelineFactory
from pipeline_config import PipelineConfig

LIVE_CASES = 20


@mark.skipif(not (os.environ.get("DX_API_KEY") and os.environ.get("DX_EVAL_SET")), reason="no live provider credential or evaluation set")
def test_full_pipeline_not_worse_than_soap_only():
    config = PipelineConfig().read_config(os.environ.get("DX_CONFIG"))
    cases = load_case_set(os.environ["DX_EVAL_SET"])[:LIVE_CASES]

    factory = PipelineFactory(config)
    evaluator = Evaluator(make_matcher(config.matcher, factory.gateway, factory.catalog))
    soap_only, full = run_ablation(
        cases,
        parse_variants("soap,differential", config.strategy),
        lambda variant: factory.build(variant.sources, variant.strategy),
        1,
        evaluator,
        config.concurrency,
    )
    assert full.mean.hit_at_5 >= soap_only.mean.hit_at_5, f"{full.mean.hit_at_5}<{soap_only.mean.hit_at_5}"
