"""
Stage-1 sources as commands, the orchestrator that fans them out and integrates their lists,
and the run store that persists the artifacts of a run.
"""
from dataclasses import dataclass
import logging
import os
import re
import threading

from atomicfile import write_json
from background_worker import run_parallel
from casedb.database import CaseDatabase, diagnose_with_cases, diagnose_with_traces
from casedb.entities import FallbackExtractor, LexiconExtractor, RemoteNerExtractor
from diagnosis.dxcore import (
    SOURCE_CASE,
    SOURCE_SOAP,
    SOURCE_TRACE,
    SOURCE_WEB,
    STAGE1_SOURCES,
    ConfigError,
    EvidenceBundle,
    FinalDiagnosis,
    PipelineError,
    SourceResult,
)
from diagnosis.recordformat import bundle_to_dict, final_diagnosis_to_dict, run_record_to_dict
from diagnosis.runrecord import RunRecord
from integrate.integrator import EvidenceIntegrator
from integrate.synonyms import SynonymTable
from llmgateway.gateway import Gateway
from llmgateway.prompts import PromptCatalog
from llmgateway.providers import ChatCompletionProvider, ScriptedMock
from pipeline_config import PROVIDER_MOCK, WEB_LIVE, WEB_RECORDED
from soap.structurer import SoapStructurer
from webagent.agent import WebResearchAgent
from webagent.agentcore import Blocklist
from webagent.tools import LiveWebBackend, RecordedWebBackend, RecordingWebBackend

logger = logging.getLogger(__name__)

STAGE1_MODULE = "stage1"
STAGE2_MODULE = "stage2"


class SourceCommand:
    """A Stage-1 source. execute() returns the source's SourceResult for one case."""

    source = ""

    def __init__(self):
        self.enabled = True

    def get_enabled(self):
        return self.enabled

    def set_enabled(self, enabled):
        self.enabled = enabled

    def execute(self, case, gateway) -> SourceResult:
        raise NotImplementedError


class SoapCommand(SourceCommand):
    source = SOURCE_SOAP

    def __init__(self, structurer):
        super().__init__()
        self.structurer = structurer

    def execute(self, case, gateway):
        return self.structurer.run(case, gateway)


class WebCommand(SourceCommand):
    source = SOURCE_WEB

    def __init__(self, agent):
        super().__init__()
        self.agent = agent

    def execute(self, case, gateway):
        return self.agent.run(case, gateway)


class CaseCommand(SourceCommand):
    source = SOURCE_CASE

    def __init__(self, database, catalog, k, context_chars):
        super().__init__()
        self.database = database
        self.catalog = catalog
        self.k = k
        self.context_chars = context_chars

    def execute(self, case, gateway):
        exemplars = self.database.topk_cases(case, self.k)
        return diagnose_with_cases(case, exemplars, gateway, self.catalog, self.context_chars)


class TraceCommand(SourceCommand):
    source = SOURCE_TRACE

    def __init__(self, database, catalog, k):
        super().__init__()
        self.database = database
        self.catalog = catalog
        self.k = k

    def execute(self, case, gateway):
        fragments = self.database.topk_traces(case, self.k)
        return diagnose_with_traces(case, fragments, gateway, self.catalog)


@dataclass(frozen=True)
class CaseRun:
    final: FinalDiagnosis
    bundle: EvidenceBundle
    record: RunRecord


def _safe_name(case_id):
    return re.sub(r"[^\w.-]+", "_", case_id).strip("._") or "case"


class RunStore:
    """RunStore writes one directory per run: `<case>.record.json`, `<case>.final.json` and `manifest.json`."""

    def __init__(self, directory, settings=None):
        self.directory = directory
        self.settings = dict(settings or {})
        self.statuses = {}
        self._lock = threading.Lock()

    def record_filename(self, case_id):
        return os.path.join(self.directory, f"{_safe_name(case_id)}.record.json")

    def final_filename(self, case_id):
        return os.path.join(self.directory, f"{_safe_name(case_id)}.final.json")

    def save_case(self, case, run: CaseRun):
        record = run_record_to_dict(run.record)
        record["bundle"] = bundle_to_dict(run.bundle)
        write_json(self.record_filename(case.id), record)

        final = final_diagnosis_to_dict(run.final)
        final["case_id"] = case.id
        write_json(self.final_filename(case.id), final)
        self.set_status(case.id, "degraded" if run.final.degraded else "ok")

    def set_status(self, case_id, status):
        with self._lock:
            self.statuses[case_id] = status

    def write_manifest(self):
        with self._lock:
            statuses = dict(self.statuses)
        write_json(os.path.join(self.directory, "manifest.json"), {"settings": self.settings, "cases": statuses})


class Orchestrator:
    """Orchestrator runs the enabled Stage-1 commands concurrently, then Stage 2.

    With a single enabled source the lone list is the final list and Stage 2 is skipped.
    """

    def __init__(self, commands, integrator, gateway, strategy, store=None):
        self.commands = list(commands)
        self.integrator = integrator
        self.gateway = gateway
        self.strategy = strategy
        self.store = store

    def enabled_commands(self):
        return [c for c in self.commands if c.enabled]

    def _execute(self, command, case, record):
        gateway = self.gateway.bind(record, command.source)
        with record.timed(command.source):
            return command.execute(case, gateway)

    def run_stage1(self, case, record) -> EvidenceBundle:
        commands = self.enabled_commands()
        if not commands:
            raise ConfigError("no Stage-1 source is enabled")

        handlers = [lambda c=c: self._execute(c, case, record) for c in commands]
        with record.timed(STAGE1_MODULE):
            results = run_parallel(handlers, names=[f"{case.id}-{c.source}" for c in commands])

        source_results = {}
        causes = {}
        for command, result in zip(commands, results):
            if result.failed:
                cause = f"{type(result.error).__name__}: {result.error}"
                logger.warning("Case %s: source %s failed: %s", case.id, command.source, cause)
                record.add_note(f"[{command.source}] failed: {cause}")
                causes[command.source] = cause
                source_results[command.source] = SourceResult.failed_source(command.source, cause)
            else:
                source_results[command.source] = result.value

        if len(causes) == len(commands):
            raise PipelineError(case.id, causes)
        return EvidenceBundle.from_results(source_results)

    def run_case(self, case) -> CaseRun:
        logger.info("Case %s: Stage 1 with %s", case.id, ", ".join(c.source for c in self.enabled_commands()))
        record = RunRecord(case.id)
        try:
            bundle = self.run_stage1(case, record)

            if len(self.enabled_commands()) == 1:
                final = self.integrator.single_source(bundle)
            else:
                logger.info("Case %s: Stage 2 (%s)", case.id, self.strategy)
                with record.timed(STAGE2_MODULE):
                    final = self.integrator.integrate(case, bundle, self.strategy, self.gateway.bind(record, STAGE2_MODULE))
        except Exception:
            if self.store is not None:
                self.store.set_status(case.id, "failed")
            raise

        run = CaseRun(final, bundle, record)
        if self.store is not None:
            self.store.save_case(case, run)
        return run


class PipelineFactory:
    """PipelineFactory builds orchestrators from a PipelineConfig.

    The gateway, case database and web backend are built once and shared by every orchestrator
    it makes, so ablation variants reuse them.
    """

    def __init__(self, config):
        self.config = config
        self.catalog = PromptCatalog(config.prompts_dir or None)
        self.synonyms = SynonymTable.from_file(config.synonyms_path) if config.synonyms_path else SynonymTable.seed()
        self._gateway = None
        self._database = None
        self._web_backend = None

    def make_provider(self):
        config = self.config
        if config.provider == PROVIDER_MOCK:
            return ScriptedMock.from_file(config.mock_script, config.mock_latency)
        return ChatCompletionProvider(config.api_base, config.api_key, config.request_timeout)

    @property
    def gateway(self):
        if self._gateway is None:
            defaults = {
                "temperature": self.config.temperature,
                "max_output_tokens": self.config.max_output_tokens,
                "model_id": self.config.model,
            }
            self._gateway = Gateway(self.make_provider(), defaults=defaults).with_concurrency_limit(self.config.concurrency)
        return self._gateway

    def make_extractor(self):
        config = self.config
        lexicon = LexiconExtractor.from_file(config.lexicon_path) if config.lexicon_path else LexiconExtractor.seed()
        if not config.ner_endpoint:
            return lexicon
        remote = RemoteNerExtractor(config.ner_endpoint)
        return FallbackExtractor(remote, lexicon) if config.ner_fallback else remote

    @property
    def database(self):
        if self._database is None:
            config = self.config
            if config.index_path and os.path.exists(config.index_path):
                self._database = CaseDatabase.load(config.index_path, self.make_extractor())
            elif config.corpus_path:
                self._database = CaseDatabase.build(config.corpus_path, self.make_extractor(), config.bm25_k1, config.bm25_b)
            else:
                raise ConfigError("case and trace sources need corpus_path or an existing index_path")
            logger.info("Case database ready with %d instances", len(self._database))
        return self._database

    @property
    def web_backend(self):
        if self._web_backend is None:
            config = self.config
            if config.web_backend == WEB_RECORDED:
                self._web_backend = RecordedWebBackend(config.web_fixtures)
            else:
                if not config.search_endpoint:
                    raise ConfigError(f"web_backend '{config.web_backend}' needs search_endpoint")
                live = LiveWebBackend(
                    config.search_endpoint,
                    config.search_api_key or None,
                    host_interval=config.host_interval,
                    blocklist=Blocklist(config.blocklist),
                )
                self._web_backend = live if config.web_backend == WEB_LIVE else RecordingWebBackend(live, config.web_fixtures)
        return self._web_backend

    def make_command(self, source):
        config = self.config
        if source == SOURCE_SOAP:
            return SoapCommand(SoapStructurer(self.catalog, config.soap_bypass))
        if source == SOURCE_WEB:
            agent = WebResearchAgent(self.catalog, self.web_backend, Blocklist(config.blocklist), config.max_steps, config.memory_budget)
            return WebCommand(agent)
        if source == SOURCE_CASE:
            return CaseCommand(self.database, self.catalog, config.k_cases, config.case_context_chars)
        if source == SOURCE_TRACE:
            return TraceCommand(self.database, self.catalog, config.k_traces)
        raise ConfigError(f"unknown source '{source}'")

    def build(self, sources=None, strategy=None, store=None) -> Orchestrator:
        enabled = set(sources or self.config.sources)
        commands = []
        for source in STAGE1_SOURCES:
            if source in enabled:
                commands.append(self.make_command(source))
        integrator = EvidenceIntegrator(self.catalog, self.synonyms, self.config.output_len)
        return Orchestrator(commands, integrator, self.gateway, strategy or self.config.strategy, store)
