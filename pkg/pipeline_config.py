"""This file contains PipelineConfig class.
"""
import logging
import os

from dotenv import dotenv_values, find_dotenv

from atomicfile import AtomicFileWriter
from diagnosis.dxcore import STAGE1_SOURCES, ConfigError
from evaluation.metrics import MATCHERS, MATCHER_JUDGE
from integrate.integrator import DEFAULT_OUTPUT_LEN, STRATEGIES, STRATEGY_DIFFERENTIAL
from llmgateway.gateway import DEFAULT_MAX_OUTPUT_TOKENS, DEFAULT_MODEL_ID
from webagent.agentcore import DEFAULT_BLOCKLIST, DEFAULT_MAX_STEPS, DEFAULT_MEMORY_BUDGET

logger = logging.getLogger(__name__)

ENV_PREFIX = "DX_"

PROVIDER_OPENAI = "openai"
PROVIDER_MOCK = "mock"
PROVIDERS = (PROVIDER_OPENAI, PROVIDER_MOCK)

WEB_LIVE = "live"
WEB_RECORDED = "recorded"
WEB_RECORDING = "recording"
WEB_BACKENDS = (WEB_LIVE, WEB_RECORDED, WEB_RECORDING)

RECALL_PER_STEP = "per-step"
RECALL_BATCHED = "batched"
RECALL_OFF = "off"
RECALL_MODES = (RECALL_PER_STEP, RECALL_BATCHED, RECALL_OFF)

SECRET_KEYS = ("api_key", "search_api_key")
PATH_KEYS = ("prompts_dir", "corpus_path", "index_path", "lexicon_path", "synonyms_path", "mock_script", "web_fixtures", "output_dir")


class PipelineConfig:
    """PipelineConfig class contains every setting of a pipeline run.
    It has methods to read config from a key-value file and the environment, validate it, and write it back.
    """

    def __init__(self):
        self.sources = list(STAGE1_SOURCES)
        self.strategy = STRATEGY_DIFFERENTIAL
        self.output_len = DEFAULT_OUTPUT_LEN

        self.k_cases = 10
        self.k_traces = 10
        self.case_context_chars = 60000
        self.bm25_k1 = 1.2
        self.bm25_b = 0.75
        self.corpus_path = ""
        self.index_path = ""
        self.lexicon_path = ""
        self.ner_endpoint = ""
        self.ner_fallback = True

        self.soap_bypass = False

        self.max_steps = DEFAULT_MAX_STEPS
        self.memory_budget = DEFAULT_MEMORY_BUDGET
        self.blocklist = list(DEFAULT_BLOCKLIST)
        self.web_backend = WEB_LIVE
        self.web_fixtures = ""
        self.search_endpoint = ""
        self.search_api_key = ""
        self.host_interval = 1.0

        self.provider = PROVIDER_OPENAI
        self.api_base = "https://api.deepseek.com"
        self.api_key = ""
        self.model = DEFAULT_MODEL_ID
        self.temperature = 0.0
        self.max_output_tokens = DEFAULT_MAX_OUTPUT_TOKENS
        self.request_timeout = 600.0
        self.concurrency = 4
        self.mock_script = ""
        self.mock_latency = 0.0
        self.prompts_dir = ""

        self.synonyms_path = ""
        self.matcher = MATCHER_JUDGE
        self.recall_mode = RECALL_PER_STEP
        self.output_dir = "runs"

    def _read_one_string(self, values: dict, label: str, default_value: str) -> str:
        value = values.get(label)
        if value is None:
            return default_value
        return value.strip()

    def _read_one_bool(self, values: dict, label: str, default_value: bool) -> bool:
        value = self._read_one_string(values, label, "").lower()
        if value in ("1", "true", "yes", "on"):
            return True
        if value in ("0", "false", "no", "off"):
            return False
        if value:
            logger.warning("Config '%s': '%s' is not a boolean; using %s", label, value, default_value)
        return default_value

    def _read_one_number(self, values: dict, label: str, default_value, kind):
        value = self._read_one_string(values, label, "")
        if not value:
            return default_value
        try:
            return kind(value)
        except ValueError:
            logger.warning("Config '%s': '%s' is not a valid %s; using %s", label, value, kind.__name__, default_value)
            return default_value

    def _read_one_int(self, values: dict, label: str, default_value: int) -> int:
        return self._read_one_number(values, label, default_value, int)

    def _read_one_float(self, values: dict, label: str, default_value: float) -> float:
        return self._read_one_number(values, label, default_value, float)

    def _read_one_list(self, values: dict, label: str, default_value: list) -> list:
        value = values.get(label)
        if value is None:
            return list(default_value)
        return [item.strip() for item in value.split(",") if item.strip()]

    @staticmethod
    def _collect_values(filename, environ):
        values = {}
        if filename:
            if not os.path.exists(filename):
                raise ConfigError(f"config file '{filename}' does not exist")
            values.update({k.lower(): v for k, v in dotenv_values(filename).items() if v is not None})

        if environ is None:
            dotenv_path = find_dotenv(usecwd=True)
            environ = dict(dotenv_values(dotenv_path)) if dotenv_path else {}
            environ.update(os.environ)

        for name, value in environ.items():
            if name.startswith(ENV_PREFIX) and value is not None:
                values[name[len(ENV_PREFIX) :].lower()] = value
        return values

    def read_config(self, filename=None, environ=None):
        """read_config reads the key-value file, then applies DX_<KEY> overrides from the environment and .env."""
        self._apply_values(self._collect_values(filename, environ))
        if filename:
            self._resolve_paths(os.path.dirname(os.path.abspath(filename)))
        self.validate()
        return self

    def override(self, values: dict):
        """override applies `key: value` strings given on the command line; paths stay relative to the working directory."""
        values = {k.strip().lower().replace("-", "_"): v for k, v in values.items()}
        unknown = sorted(k for k in values if k not in vars(self) or k.startswith("_"))
        if unknown:
            raise ConfigError(f"unknown setting(s): {', '.join(unknown)}")
        self._apply_values(values)
        self.validate()
        return self

    def _apply_values(self, values: dict):
        self.sources = self._read_one_list(values, "sources", self.sources)
        self.strategy = self._read_one_string(values, "strategy", self.strategy)
        self.output_len = self._read_one_int(values, "output_len", self.output_len)

        self.k_cases = self._read_one_int(values, "k_cases", self.k_cases)
        self.k_traces = self._read_one_int(values, "k_traces", self.k_traces)
        self.case_context_chars = self._read_one_int(values, "case_context_chars", self.case_context_chars)
        self.bm25_k1 = self._read_one_float(values, "bm25_k1", self.bm25_k1)
        self.bm25_b = self._read_one_float(values, "bm25_b", self.bm25_b)
        self.corpus_path = self._read_one_string(values, "corpus_path", self.corpus_path)
        self.index_path = self._read_one_string(values, "index_path", self.index_path)
        self.lexicon_path = self._read_one_string(values, "lexicon_path", self.lexicon_path)
        self.ner_endpoint = self._read_one_string(values, "ner_endpoint", self.ner_endpoint)
        self.ner_fallback = self._read_one_bool(values, "ner_fallback", self.ner_fallback)

        self.soap_bypass = self._read_one_bool(values, "soap_bypass", self.soap_bypass)

        self.max_steps = self._read_one_int(values, "max_steps", self.max_steps)
        self.memory_budget = self._read_one_int(values, "memory_budget", self.memory_budget)
        self.blocklist = self._read_one_list(values, "blocklist", self.blocklist)
        self.web_backend = self._read_one_string(values, "web_backend", self.web_backend)
        self.web_fixtures = self._read_one_string(values, "web_fixtures", self.web_fixtures)
        self.search_endpoint = self._read_one_string(values, "search_endpoint", self.search_endpoint)
        self.search_api_key = self._read_one_string(values, "search_api_key", self.search_api_key)
        self.host_interval = self._read_one_float(values, "host_interval", self.host_interval)

        self.provider = self._read_one_string(values, "provider", self.provider)
        self.api_base = self._read_one_string(values, "api_base", self.api_base)
        self.api_key = self._read_one_string(values, "api_key", self.api_key)
        self.model = self._read_one_string(values, "model", self.model)
        self.temperature = self._read_one_float(values, "temperature", self.temperature)
        self.max_output_tokens = self._read_one_int(values, "max_output_tokens", self.max_output_tokens)
        self.request_timeout = self._read_one_float(values, "request_timeout", self.request_timeout)
        self.concurrency = self._read_one_int(values, "concurrency", self.concurrency)
        self.mock_script = self._read_one_string(values, "mock_script", self.mock_script)
        self.mock_latency = self._read_one_float(values, "mock_latency", self.mock_latency)
        self.prompts_dir = self._read_one_string(values, "prompts_dir", self.prompts_dir)

        self.synonyms_path = self._read_one_string(values, "synonyms_path", self.synonyms_path)
        self.matcher = self._read_one_string(values, "matcher", self.matcher)
        self.recall_mode = self._read_one_string(values, "recall_mode", self.recall_mode)
        self.output_dir = self._read_one_string(values, "output_dir", self.output_dir)

    def _resolve_paths(self, basedir):
        for key in PATH_KEYS:
            value = getattr(self, key)
            if value and not os.path.isabs(value):
                setattr(self, key, os.path.normpath(os.path.join(basedir, value)))

    def validate(self):
        """validate raises ConfigError on the first invalid setting."""
        if not self.sources:
            raise ConfigError("no Stage-1 source is enabled")
        unknown = [s for s in self.sources if s not in STAGE1_SOURCES]
        if unknown:
            raise ConfigError(f"unknown source(s): {', '.join(unknown)}")
        if len(set(self.sources)) != len(self.sources):
            raise ConfigError(f"duplicate source in {','.join(self.sources)}")

        choices = [
            ("strategy", self.strategy, STRATEGIES),
            ("matcher", self.matcher, MATCHERS),
            ("provider", self.provider, PROVIDERS),
            ("web_backend", self.web_backend, WEB_BACKENDS),
            ("recall_mode", self.recall_mode, RECALL_MODES),
        ]
        for label, value, allowed in choices:
            if value not in allowed:
                raise ConfigError(f"{label} '{value}' is not one of {', '.join(allowed)}")

        for label in ("k_cases", "k_traces"):
            if getattr(self, label) < 0:
                raise ConfigError(f"{label} must be >= 0, got {getattr(self, label)}")
        for label in ("output_len", "max_steps", "memory_budget", "case_context_chars", "concurrency", "max_output_tokens"):
            if getattr(self, label) < 1:
                raise ConfigError(f"{label} must be >= 1, got {getattr(self, label)}")
        if self.temperature < 0:
            raise ConfigError(f"temperature must be >= 0, got {self.temperature}")

        if self.provider == PROVIDER_MOCK and not self.mock_script:
            raise ConfigError("provider 'mock' needs mock_script")
        if self.web_backend in (WEB_RECORDED, WEB_RECORDING) and "web" in self.sources and not self.web_fixtures:
            raise ConfigError(f"web_backend '{self.web_backend}' needs web_fixtures")

    def settings(self):
        """settings returns every setting except credentials, in definition order."""
        result = {}
        for key, value in vars(self).items():
            if key in SECRET_KEYS:
                continue
            result[key] = ",".join(value) if isinstance(value, list) else value
        return result

    def write_config(self, filename):
        """write_config writes all settings except credentials as `key = value` lines."""
        with AtomicFileWriter(filename) as f:
            for key, value in self.settings().items():
                if isinstance(value, bool):
                    value = "true" if value else "false"
                f.write(f"{key} = {value}\n")
