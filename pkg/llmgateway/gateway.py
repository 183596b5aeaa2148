"""Uniform completion interface over model providers.

The Gateway adds what every pipeline call needs on top of a provider: retries with
exponential backoff for transient failures, a concurrency limit shared by all
callers, and token/latency accounting into the RunRecord of the case being run.
"""
from dataclasses import dataclass
import logging
import threading
import time
from typing import Optional

from diagnosis.dxcore import ConfigError, DiagnosisError
from diagnosis.runrecord import LlmExchange

logger = logging.getLogger(__name__)

DEFAULT_MODEL_ID = "deepseek-reasoner"
DEFAULT_MAX_OUTPUT_TOKENS = 4096
DEFAULT_RETRIES = 3
BACKOFF_SECONDS = (1.0, 2.0, 4.0)


class GatewayError(DiagnosisError):
    """Base exception for completion failures."""


class ProviderError(GatewayError):
    """The provider failed permanently, or transient failures outlasted the retries."""

    def __init__(self, message, status_code=None):
        self.status_code = status_code
        super().__init__(message)


class TransientProviderError(ProviderError):
    """Transport failure, rate limit or server error; worth retrying."""


class MockMiss(GatewayError):
    """The scripted mock has no entry for a prompt. This is a test-authoring error."""


@dataclass(frozen=True)
class CompletionRequest:
    prompt: str
    temperature: float = 0.0
    max_output_tokens: int = DEFAULT_MAX_OUTPUT_TOKENS
    model_id: str = DEFAULT_MODEL_ID

    def __post_init__(self):
        if not self.prompt:
            raise ValueError("completion request has an empty prompt")
        if self.temperature < 0:
            raise ValueError(f"temperature {self.temperature} < 0")
        if self.max_output_tokens < 1:
            raise ValueError(f"max_output_tokens {self.max_output_tokens} < 1")


@dataclass(frozen=True)
class CompletionResponse:
    text: str
    prompt_tokens: int = 0
    completion_tokens: int = 0
    latency: float = 0.0


class GatewayUsage:
    """Token and call totals of a gateway and of every copy made from it."""

    def __init__(self):
        self._lock = threading.Lock()
        self.prompt_tokens = 0
        self.completion_tokens = 0
        self.call_count = 0

    def add(self, response: CompletionResponse):
        with self._lock:
            self.prompt_tokens += response.prompt_tokens
            self.completion_tokens += response.completion_tokens
            self.call_count += 1


class Gateway:
    """Gateway wraps a provider (anything with complete(request) -> CompletionResponse).

    It is shared by every concurrent task of a run; at most `limit` completions are in flight.
    """

    def __init__(self, provider, retries=DEFAULT_RETRIES, backoff=BACKOFF_SECONDS, limit=None, sleep=time.sleep, defaults=None, usage=None):
        self.provider = provider
        self.retries = retries
        self.backoff = tuple(backoff)
        self.limit = limit
        self.defaults = dict(defaults or {})

        self._sleep = sleep
        self._semaphore = threading.BoundedSemaphore(limit) if limit else None
        self.usage = usage or GatewayUsage()

    def with_concurrency_limit(self, limit: int) -> "Gateway":
        """with_concurrency_limit() returns a gateway over the same provider allowing `limit` calls in flight.

        The copy shares this gateway's usage totals.
        """
        if not isinstance(limit, int) or limit < 1:
            raise ConfigError(f"concurrency limit must be a positive integer, got {limit!r}")
        return Gateway(self.provider, self.retries, self.backoff, limit, self._sleep, self.defaults, self.usage)

    def request(self, prompt: str, **kwargs) -> CompletionRequest:
        """request() builds a CompletionRequest using the gateway's configured defaults."""
        params = dict(self.defaults)
        params.update(kwargs)
        return CompletionRequest(prompt, **params)

    def bind(self, record, module=None) -> "BoundGateway":
        return BoundGateway(self, record, module)

    def complete(self, request: CompletionRequest, record=None, module: str = "") -> CompletionResponse:
        """complete() returns the completion, retrying transient failures with exponential backoff.

        The exchange is appended to `record` when one is given.
        """
        if self._semaphore is not None:
            with self._semaphore:
                response = self._complete_with_retry(request)
        else:
            response = self._complete_with_retry(request)

        self.usage.add(response)

        if record is not None:
            exchange = LlmExchange(
                module,
                request.prompt,
                response.text,
                response.prompt_tokens,
                response.completion_tokens,
                max(0.0, response.latency),
                request.model_id,
            )
            record.add_exchange(exchange)
        return response

    def _complete_with_retry(self, request):
        last_exc = None
        for attempt in range(self.retries + 1):
            start = time.perf_counter()
            try:
                response = self.provider.complete(request)
            except TransientProviderError as e:
                last_exc = e
                logger.warning("Transient provider failure on attempt %d/%d: %s", attempt + 1, self.retries + 1, e)
            else:
                if response.latency <= 0:
                    response = CompletionResponse(
                        response.text, response.prompt_tokens, response.completion_tokens, time.perf_counter() - start
                    )
                return response

            if attempt < self.retries:
                delay = self.backoff[min(attempt, len(self.backoff) - 1)]
                logger.debug("Sleeping %.1fs before retry", delay)
                self._sleep(delay)

        raise ProviderError(f"provider failed after {self.retries + 1} attempts: {last_exc}", getattr(last_exc, "status_code", None))


class BoundGateway:
    """BoundGateway is a gateway view that records every call into one RunRecord under a module tag."""

    def __init__(self, gateway: Gateway, record, module: Optional[str] = None):
        self.gateway = gateway
        self.record = record
        self.module = module or ""

    def for_module(self, module: str) -> "BoundGateway":
        return BoundGateway(self.gateway, self.record, module)

    def complete_text(self, prompt: str, **kwargs) -> str:
        request = self.gateway.request(prompt, **kwargs)
        return self.complete(request).text

    def complete(self, request: CompletionRequest) -> CompletionResponse:
        return self.gateway.complete(request, self.record, self.module)

    def note(self, message: str):
        logger.info("%s: %s", self.module or "pipeline", message)
        if self.record is not None:
            self.record.add_note(f"[{self.module}] {message}" if self.module else message)
