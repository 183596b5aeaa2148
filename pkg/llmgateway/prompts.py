"""Prompt templates, stored as text assets keyed by name.

A prompts directory given in the configuration overrides any template by file name
(`<name>.txt`), so prompts can be changed without touching code.
"""
import logging
import os

from diagnosis.dxcore import ConfigError

logger = logging.getLogger(__name__)

TEMPLATE_DIR = os.path.join(os.path.dirname(os.path.abspath(__file__)), "templates")

# Stage 1
TO_SOAP = "to_soap"
SOAP_DIAGNOSE = "soap_diagnose"
CASE_DIAGNOSE = "case_diagnose"
TRACE_DIAGNOSE = "trace_diagnose"
WEB_PLAN = "web_plan"
WEB_MEMORY = "web_memory"
WEB_DIAGNOSE = "web_diagnose"
# Stage 2
MULTI_INTEGRATE = "multi_integrate"
# Evaluation
JUDGE_DIAGNOSIS = "judge_diagnosis"
JUDGE_STEP = "judge_step"
JUDGE_STEPS_BATCHED = "judge_steps_batched"

TEMPLATE_NAMES = (
    TO_SOAP,
    SOAP_DIAGNOSE,
    CASE_DIAGNOSE,
    TRACE_DIAGNOSE,
    WEB_PLAN,
    WEB_MEMORY,
    WEB_DIAGNOSE,
    MULTI_INTEGRATE,
    JUDGE_DIAGNOSIS,
    JUDGE_STEP,
    JUDGE_STEPS_BATCHED,
)


class PromptCatalog:
    """PromptCatalog loads templates once and renders them with str.format fields."""

    def __init__(self, override_dir=None):
        self.override_dir = override_dir
        self._templates = {}

        for name in TEMPLATE_NAMES:
            self._templates[name] = self._load(name)

    def _load(self, name):
        filename = os.path.join(TEMPLATE_DIR, name + ".txt")
        if self.override_dir:
            override = os.path.join(self.override_dir, name + ".txt")
            if os.path.exists(override):
                logger.info("Using prompt override '%s'", override)
                filename = override

        with open(filename, "rt", encoding="utf-8") as f:
            return f.read()

    def names(self):
        return list(self._templates)

    def template(self, name):
        if name not in self._templates:
            raise ConfigError(f"unknown prompt template '{name}'")
        return self._templates[name]

    def render(self, name, **fields):
        try:
            return self.template(name).format_map(fields)
        except KeyError as e:
            raise ConfigError(f"prompt template '{name}' needs field {e}") from e
