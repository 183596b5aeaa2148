import itertools
import os

from pytest import mark, raises

from atomicfile import read_json
from diagnosis.dxcore import STAGE1_SOURCES, CaseReport, DiseaseList, PipelineError, SourceResult, parse_disease_list
from evaluation.metrics import ExactMatcher, hit_at_k
from integrate.integrator import STRATEGY_SINGLE_SOURCE, STRATEGY_VOTE, EvidenceIntegrator
from integrate.synonyms import SynonymTable
from llmgateway.gateway import Gateway
from llmgateway.prompts import PromptCatalog
from llmgateway.providers import ScriptedMock
from orchestrator import Orchestrator, PipelineFactory, RunStore, SourceCommand
from pipeline_config import PipelineConfig

SAMPLE_DIR = os.path.join(os.path.dirname(os.path.abspath(__file__)), "sample")
CASE_STUDY_DIR = os.path.join(SAMPLE_DIR, "casestudy")
PCNSL = "Primary central nervous system lymphoma"


def read_fixture(name):
    with open(os.path.join(CASE_STUDY_DIR, name), "rt", encoding="utf-8") as f:
        return f.read()


def offline_config(**overrides):
    config = PipelineConfig().read_config(os.path.join(SAMPLE_DIR, "offline.cfg"), environ={})
    if overrides:
        config.override(overrides)
    return config


def case_study_case():
    return CaseReport("casestudy", read_fixture("case.txt"), read_fixture("gold_reasoning.txt"), PCNSL)


class ListCommand(SourceCommand):
    """Returns a fixed list through one gateway call, or raises."""

    def __init__(self, source, names, fail=False):
        super().__init__()
        self.source = source
        self.names = names
        self.fail = fail

    def execute(self, case, gateway):
        if self.fail:
            raise RuntimeError(f"{self.source} is down")
        reasoning = gateway.complete_text(f"ping {self.source}")
        return SourceResult(DiseaseList.from_names(self.source, self.names), reasoning)


def fake_orchestrator(failing=(), latency=0.0, names=None, strategy=STRATEGY_VOTE):
    names = names or ["Pneumonia", "Sepsis"]
    mock = ScriptedMock([("ping", "pong")], latency=latency)
    gateway = Gateway(mock).with_concurrency_limit(4)
    commands = [ListCommand(source, names, source in failing) for source in STAGE1_SOURCES]
    integrator = EvidenceIntegrator(PromptCatalog(), SynonymTable.seed())
    return Orchestrator(commands, integrator, gateway, strategy), mock


def test_golden_case_study_replay(tmp_path):
    factory = PipelineFactory(offline_config())
    case = case_study_case()

    finals = []
    for i in range(3):
        store = RunStore(str(tmp_path / f"run{i}"), factory.config.settings())
        run = factory.build(store=store).run_case(case)

        for source in STAGE1_SOURCES:
            expected = parse_disease_list(read_fixture(f"{source}_list.txt"), source).names()
            actual = run.bundle.get(source).disease_list.names()
            assert actual == expected, f"{source}: {actual}!={expected} doesn't match!"

        assert run.final.strategy == "differential"
        assert not run.final.degraded
        assert run.final.ranked.items[0].name == PCNSL
        assert hit_at_k(run.final.ranked, case.gold_diagnosis, 1, ExactMatcher())

        with open(store.final_filename(case.id), "rb") as f:
            finals.append(f.read())

    assert finals[0] == finals[1] == finals[2]


def test_golden_replay_tool_log_blocks_pubmed():
    factory = PipelineFactory(offline_config())
    run = factory.build().run_case(case_study_case())

    tool_log = run.record.tool_log
    assert [t.tool for t in tool_log] == ["search", "navigate", "extract"]
    assert any("pubmed.ncbi.nlm.nih.gov" in url for url in tool_log[0].blocked_urls)
    assert "pubmed" not in tool_log[0].result
    assert tool_log[2].url == "https://neuro-reference.example.org/primary-cns-lymphoma"
    assert "cytology" in tool_log[2].result.lower()


def test_stage1_runs_sources_concurrently():
    for _ in range(5):
        orchestrator, _mock = fake_orchestrator(latency=0.1)
        run = orchestrator.run_case(CaseReport("c1", "fever and cough"))
        assert run.record.latencies["stage1"] < 0.25, run.record.latencies
        for source in STAGE1_SOURCES:
            assert run.record.latencies[source] >= 0.1


test_data = [subset for n in range(1, len(STAGE1_SOURCES) + 1) for subset in itertools.combinations(STAGE1_SOURCES, n)]


@mark.parametrize("failing", test_data)
def test_degradation_over_failing_subsets(failing):
    orchestrator, _mock = fake_orchestrator(failing)
    case = CaseReport("c1", "fever and cough")

    if len(failing) == len(STAGE1_SOURCES):
        with raises(PipelineError) as e:
            orchestrator.run_case(case)
        assert sorted(e.value.causes) == sorted(STAGE1_SOURCES)
        return

    run = orchestrator.run_case(case)
    for source in STAGE1_SOURCES:
        result = run.bundle.get(source)
        if source in failing:
            assert result.failed
            assert len(result.disease_list) == 0
            assert "is down" in result.failure
        else:
            assert result.disease_list.names() == ["Pneumonia", "Sepsis"]
    assert run.final.ranked.names() == ["Pneumonia", "Sepsis"]
    assert len([n for n in run.record.notes if "failed" in n]) == len(failing)


def test_single_enabled_source_skips_stage2():
    orchestrator, mock = fake_orchestrator()
    for command in orchestrator.commands:
        command.set_enabled(command.source == "trace")

    run = orchestrator.run_case(CaseReport("c1", "fever"))
    assert run.final.strategy == STRATEGY_SINGLE_SOURCE
    assert run.final.ranked.names() == ["Pneumonia", "Sepsis"]
    assert "stage2" not in run.record.latencies
    assert mock.call_count() == 1


def test_disabling_web_removes_its_calls():
    factory = PipelineFactory(offline_config(sources="soap,case,trace"))
    run = factory.build().run_case(case_study_case())

    assert run.record.llm_call_count("web") == 0
    assert run.record.tool_log == []
    assert run.bundle.web.failure == "disabled"
    mock = factory.gateway.provider
    for matcher in ("Plan a web research session", "Update the research memory", "Based on the web research notes"):
        assert not any(m.startswith(matcher) for m, _ in mock.calls), matcher
    assert {e.module for e in run.record.exchanges} == {"soap", "case", "trace", "stage2"}


def test_run_store_files(tmp_path):
    config = offline_config(sources="case,trace", strategy="vote")
    store = RunStore(str(tmp_path), config.settings())
    run = PipelineFactory(config).build(store=store).run_case(case_study_case())
    store.write_manifest()

    record = read_json(store.record_filename("casestudy"))
    assert record["case_id"] == "casestudy"
    assert {e["module"] for e in record["exchanges"]} == {"case", "trace"}
    assert record["bundle"]["soap"]["failure"] == "disabled"
    assert record["bundle"]["case"]["items"][1]["name"] == PCNSL

    final = read_json(store.final_filename("casestudy"))
    assert final["case_id"] == "casestudy"
    assert final["strategy"] == "vote"
    assert [item["name"] for item in final["items"]] == run.final.ranked.names()

    manifest = read_json(os.path.join(str(tmp_path), "manifest.json"))
    assert manifest["cases"] == {"casestudy": "ok"}
    assert manifest["settings"]["sources"] == "case,trace"
    assert "api_key" not in manifest["settings"]


def test_failed_case_marked_in_manifest(tmp_path):
    orchestrator, _mock = fake_orchestrator(failing=STAGE1_SOURCES)
    orchestrator.store = RunStore(str(tmp_path))
    with raises(PipelineError):
        orchestrator.run_case(CaseReport("c/1", "fever"))
    orchestrator.store.write_manifest()

    assert read_json(str(tmp_path / "manifest.json"))["cases"] == {"c/1": "failed"}
    assert not os.path.exists(orchestrator.store.final_filename("c/1"))
    assert os.path.basename(orchestrator.store.final_filename("c/1")) == "c_1.final.json"


def test_build_enables_only_configured_sources():
    factory = PipelineFactory(offline_config())
    orchestrator = factory.build(sources=["soap", "trace"], strategy="vote")
    assert [c.source for c in orchestrator.commands] == ["soap", "trace"]
    assert orchestrator.strategy == "vote"
