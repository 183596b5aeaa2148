"""Plain types of the web research agent: plan, tool invocation, memory and blocklist."""
from dataclasses import dataclass
import json
import re
from typing import Optional, Tuple
from urllib.parse import urlsplit

from diagnosis.dxcore import DiagnosisError, strip_tagged_sections

TOOL_SEARCH = "search"
TOOL_NAVIGATE = "navigate"
TOOL_EXTRACT = "extract"
TOOL_KINDS = (TOOL_SEARCH, TOOL_NAVIGATE, TOOL_EXTRACT)

# Hosts that can leak benchmark answers.
DEFAULT_BLOCKLIST = ("pubmed.ncbi.nlm.nih.gov", "huggingface.co")
DEFAULT_MAX_STEPS = 8
DEFAULT_MEMORY_BUDGET = 8000
TRUNCATION_MARKER = "\n[memory truncated]"

_PLAN_LINE_RE = re.compile(r"^\s*\d{1,3}[.)]\s*([A-Za-z_]+)\s*\|\s*(.+?)\s*$")
_STEPS_LINE_RE = re.compile(r"^\s*STEPS\s*:\s*(\d+)\s*$", re.I)
_JSON_OBJECT_RE = re.compile(r"\{.*\}", re.S)
_SENTENCE_RE = re.compile(r"^(.+?[.!?])(?:\s|$)", re.S)


class PlanParseError(DiagnosisError):
    """No query could be read from the planning completion."""


class ToolError(DiagnosisError):
    """A tool call failed; `invocation` is the logged, failed invocation."""

    def __init__(self, message, invocation=None):
        self.invocation = invocation
        super().__init__(message)


class BlockedUrlError(ToolError):
    """A backend was redirected to a blocked host; nothing was requested from it."""

    def __init__(self, url):
        self.url = url
        super().__init__(f"redirected to blocked URL {url}")


@dataclass(frozen=True)
class SearchPlan:
    queries: Tuple[str, ...]
    tools: Tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "queries", tuple(self.queries))
        object.__setattr__(self, "tools", tuple(self.tools))
        if not self.queries:
            raise ValueError("search plan has no steps")
        if len(self.queries) != len(self.tools):
            raise ValueError(f"{len(self.queries)} queries but {len(self.tools)} tools")
        for tool in self.tools:
            if tool not in TOOL_KINDS:
                raise ValueError(f"unknown tool '{tool}'")

    @property
    def step_count(self):
        return len(self.queries)

    def steps(self):
        """steps() yields (step, tool, argument) with 1-based steps."""
        for i, (tool, query) in enumerate(zip(self.tools, self.queries), 1):
            yield i, tool, query


@dataclass(frozen=True)
class SearchHit:
    title: str
    url: str
    snippet: str = ""


@dataclass(frozen=True)
class ToolInvocation:
    step: int
    tool: str
    argument: str
    result: str = ""
    url: Optional[str] = None
    blocked: bool = False
    error: Optional[str] = None
    blocked_urls: Tuple[str, ...] = ()

    def __post_init__(self):
        if self.blocked and self.result:
            raise ValueError("a blocked invocation carries no result")

    @property
    def failed(self):
        return self.error is not None


@dataclass(frozen=True)
class MemoryState:
    text: str = ""
    step: int = 0
    urls: Tuple[str, ...] = ()


class Blocklist:
    """Blocklist matches a URL's host against host patterns, subdomains included."""

    def __init__(self, patterns=DEFAULT_BLOCKLIST):
        self.patterns = tuple(sorted({p.strip().lower().lstrip(".") for p in patterns if p.strip()}))

    @staticmethod
    def host_of(url):
        if "://" not in url:
            url = "//" + url
        try:
            return (urlsplit(url).hostname or "").lower()
        except ValueError:
            return ""

    def is_blocked(self, url) -> bool:
        host = self.host_of(url)
        return any(host == p or host.endswith("." + p) for p in self.patterns)


def _coerce_tool(tool):
    tool = str(tool).strip().lower()
    return tool if tool in TOOL_KINDS else TOOL_SEARCH


def _build_plan(queries, tools, declared, max_steps):
    queries = [str(q).strip() for q in queries if str(q).strip()]
    if not queries:
        raise PlanParseError("plan has no queries")

    tools = [_coerce_tool(t) for t in tools][: len(queries)]
    tools += [TOOL_SEARCH] * (len(queries) - len(tools))

    count = min(len(queries), max_steps)
    if declared is not None and declared > 0:
        count = min(count, declared)
    return SearchPlan(queries[:count], tools[:count])


def _parse_json_plan(text, max_steps):
    m = _JSON_OBJECT_RE.search(text)
    if m is None:
        return None
    try:
        doc = json.loads(m.group(0))
    except json.JSONDecodeError:
        return None
    if not isinstance(doc, dict) or not isinstance(doc.get("queries"), list):
        return None

    tools = doc.get("tools") if isinstance(doc.get("tools"), list) else []
    declared = doc.get("steps")
    declared = declared if isinstance(declared, int) else None
    return _build_plan(doc["queries"], tools, declared, max_steps)


def _parse_line_plan(text, max_steps):
    queries = []
    tools = []
    declared = None
    for line in text.splitlines():
        m = _STEPS_LINE_RE.match(line)
        if m is not None:
            declared = int(m.group(1))
            continue
        m = _PLAN_LINE_RE.match(line)
        if m is not None:
            tools.append(m.group(1))
            queries.append(m.group(2))
    return _build_plan(queries, tools, declared, max_steps)


def parse_plan(completion: str, max_steps: int = DEFAULT_MAX_STEPS) -> SearchPlan:
    """parse_plan() reads a JSON plan, or `<n>. <tool> | <argument>` lines with an optional `STEPS: N`.

    N is clamped to max_steps and unknown tools become search.
    """
    text = strip_tagged_sections(completion, "think")
    plan = _parse_json_plan(text, max_steps)
    if plan is not None:
        return plan
    return _parse_line_plan(text, max_steps)


def fallback_plan(case_text: str) -> SearchPlan:
    """fallback_plan() searches once for the case's opening sentence, its chief findings."""
    text = " ".join(case_text.split())
    m = _SENTENCE_RE.match(text)
    query = m.group(1) if m else text
    return SearchPlan((query[:200],), (TOOL_SEARCH,))


def clamp_memory(text: str, budget: int) -> str:
    if len(text) <= budget:
        return text
    return text[: max(0, budget - len(TRUNCATION_MARKER))] + TRUNCATION_MARKER[: budget]
