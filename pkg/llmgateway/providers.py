"""Providers behind the Gateway: an OpenAI-compatible chat-completion client and a scripted mock."""
import json
import logging
import threading
import time

import httpx

from .gateway import CompletionResponse, MockMiss, ProviderError, TransientProviderError

logger = logging.getLogger(__name__)


class ChatCompletionProvider:
    """ChatCompletionProvider talks to any OpenAI-compatible `/chat/completions` endpoint.

    Reasoning models that return a separate `reasoning_content` field get it wrapped in
    <think> tags ahead of the answer, so callers see one text.
    """

    def __init__(self, endpoint, api_key, timeout=600.0, client=None):
        if not endpoint:
            raise ProviderError("no provider endpoint configured")
        if not api_key:
            raise ProviderError("no provider credential configured (set DX_API_KEY)")

        self.endpoint = endpoint.rstrip("/")
        self._client = client or httpx.Client(
            headers={"Authorization": f"Bearer {api_key}"},
            timeout=httpx.Timeout(timeout, connect=10.0),
        )

    def close(self):
        self._client.close()

    def _build_body(self, request):
        return {
            "model": request.model_id,
            "messages": [{"role": "user", "content": request.prompt}],
            "temperature": request.temperature,
            "max_tokens": request.max_output_tokens,
            "stream": False,
        }

    def complete(self, request):
        start = time.perf_counter()
        try:
            response = self._client.post(f"{self.endpoint}/chat/completions", json=self._build_body(request))
        except httpx.HTTPError as e:
            raise TransientProviderError(f"transport error: {e}") from e

        if response.status_code == 429 or response.status_code >= 500:
            raise TransientProviderError(f"HTTP {response.status_code}: {response.text[:200]}", response.status_code)
        if response.status_code >= 400:
            raise ProviderError(f"HTTP {response.status_code}: {response.text[:500]}", response.status_code)

        try:
            data = response.json()
            message = data["choices"][0]["message"]
        except (ValueError, KeyError, IndexError) as e:
            raise ProviderError(f"malformed completion response: {e}") from e

        text = message.get("content") or ""
        reasoning = message.get("reasoning_content")
        if reasoning:
            text = f"<think>{reasoning}</think>\n{text}"

        usage = data.get("usage") or {}
        return CompletionResponse(
            text,
            int(usage.get("prompt_tokens", 0)),
            int(usage.get("completion_tokens", 0)),
            time.perf_counter() - start,
        )


def count_tokens(text):
    """Whitespace token count; the mock's deterministic stand-in for provider usage."""
    return len(text.split())


class ScriptedMock:
    """ScriptedMock replays canned completions for prompts that match a script entry.

    Entries are tried in order; a matcher is a substring of the prompt, or the whole prompt when
    exact. A completion may be a string or a callable taking the prompt. An unmatched prompt
    raises MockMiss.
    """

    def __init__(self, entries=None, latency=0.0):
        self.entries = []
        self.latency = latency
        self.calls = []

        self._lock = threading.Lock()

        for entry in entries or []:
            if isinstance(entry, dict):
                self.add(entry["match"], entry["completion"], entry.get("exact", False))
            else:
                self.add(*entry)

    @staticmethod
    def from_file(filename, latency=0.0):
        with open(filename, "rt", encoding="utf-8") as f:
            entries = json.load(f)
        if not isinstance(entries, list):
            raise ValueError(f"mock script '{filename}' must hold a list of entries")
        return ScriptedMock(entries, latency)

    def add(self, matcher, completion, exact=False):
        self.entries.append((matcher, completion, exact))
        return self

    def _lookup(self, prompt):
        for matcher, completion, exact in self.entries:
            if (exact and prompt == matcher) or (not exact and matcher in prompt):
                return matcher, completion
        return None, None

    def complete(self, request):
        matcher, completion = self._lookup(request.prompt)
        if matcher is None:
            raise MockMiss(f"no scripted completion for prompt starting {request.prompt[:80]!r}")

        if self.latency:
            time.sleep(self.latency)

        text = completion(request.prompt) if callable(completion) else completion
        with self._lock:
            self.calls.append((matcher, request.prompt))

        return CompletionResponse(text, count_tokens(request.prompt), count_tokens(text), self.latency)

    def call_count(self, matcher=None):
        with self._lock:
            return len([c for c in self.calls if matcher is None or c[0] == matcher])
