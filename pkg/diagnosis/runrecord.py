"""RunRecord keeps the provenance of one pipeline execution for one case."""
from contextlib import contextmanager
from dataclasses import dataclass
import threading
import time
from typing import Optional


@dataclass(frozen=True)
class LlmExchange:
    """One gateway call: the module it belongs to, prompt, completion and usage."""

    module: str
    prompt: str
    completion: str
    prompt_tokens: int
    completion_tokens: int
    latency: float
    model_id: str = ""

    @property
    def total_tokens(self):
        return self.prompt_tokens + self.completion_tokens


class RunRecord:
    """RunRecord collects every LLM exchange, tool invocation, latency and note of one case run.

    Appends are serialized so Stage-1 sources can share one record from several threads.
    """

    def __init__(self, case_id):
        self.case_id = case_id
        self.exchanges = []
        self.tool_log = []
        self.latencies = {}
        self.notes = []

        self._lock = threading.Lock()

    def add_exchange(self, exchange: LlmExchange):
        with self._lock:
            self.exchanges.append(exchange)

    def add_tool_invocation(self, invocation):
        with self._lock:
            self.tool_log.append(invocation)

    def add_note(self, message: str):
        with self._lock:
            self.notes.append(message)

    def add_latency(self, module: str, seconds: float):
        seconds = max(0.0, seconds)
        with self._lock:
            self.latencies[module] = self.latencies.get(module, 0.0) + seconds

    @contextmanager
    def timed(self, module):
        start = time.perf_counter()
        try:
            yield
        finally:
            self.add_latency(module, time.perf_counter() - start)

    def modules(self):
        with self._lock:
            return sorted({e.module for e in self.exchanges} | set(self.latencies))

    def exchanges_for(self, module: Optional[str] = None):
        with self._lock:
            return [e for e in self.exchanges if module is None or e.module == module]

    def token_usage(self, module: Optional[str] = None):
        """token_usage() returns (prompt_tokens, completion_tokens) summed over the selected exchanges."""
        exchanges = self.exchanges_for(module)
        return sum(e.prompt_tokens for e in exchanges), sum(e.completion_tokens for e in exchanges)

    def total_tokens(self, module: Optional[str] = None):
        return sum(self.token_usage(module))

    def llm_call_count(self, module: Optional[str] = None):
        return len(self.exchanges_for(module))
