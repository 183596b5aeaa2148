import json
import os

import httpx
from pytest import mark, raises

from atomicfile import write_json
from diagnosis.dxcore import CaseReport
from diagnosis.runrecord import RunRecord
from llmgateway.gateway import Gateway
from llmgateway.prompts import PromptCatalog
from llmgateway.providers import ScriptedMock

from .agent import EMPTY_EVIDENCE, WebResearchAgent
from .agentcore import (
    TRUNCATION_MARKER,
    Blocklist,
    MemoryState,
    PlanParseError,
    SearchHit,
    ToolError,
    ToolInvocation,
    fallback_plan,
    parse_plan,
)
from .tools import LiveWebBackend, RecordedWebBackend, RecordingWebBackend, WebTools, best_passage, html_to_text, slugify

CASE = CaseReport("t3", "A 70-year-old woman presented with left arm weakness and confusion. She denied headache.")

PLAN_MATCH = "Plan a web research session"
MEMORY_MATCH = "Update the research memory"
DIAGNOSE_MATCH = "Based on the web research notes below"


def concatenate_memory(prompt):
    memory = prompt.split("[CURRENT MEMORY]\n", 1)[1].split("\n[NEW RESULT]\n", 1)[0]
    result = prompt.split("\n[NEW RESULT]\n", 1)[1].split("\n[END]", 1)[0]
    return f"{memory}\n{result}".strip()


class CountingBackend:
    """In-memory backend that counts every request per host."""

    def __init__(self, hits=None, pages=None, unreachable=()):
        self.hits = hits or {}
        self.pages = pages or {}
        self.unreachable = set(unreachable)
        self.searches = []
        self.fetches = []

    def search(self, query):
        self.searches.append(query)
        return self.hits.get(query, [])

    def fetch(self, url):
        self.fetches.append(url)
        if url in self.unreachable:
            raise ToolError(f"fetch '{url}' failed: connection refused")
        return self.pages[url]

    def fetched_hosts(self):
        return {Blocklist.host_of(url) for url in self.fetches}


def _agent(backend, entries, **kwargs):
    record = RunRecord(CASE.id)
    mock = ScriptedMock(entries)
    agent = WebResearchAgent(PromptCatalog(), backend, **kwargs)
    return agent, Gateway(mock).bind(record, "web"), record, mock


test_data = [
    ('{"steps": 2, "queries": ["pcnsl csf", "https://example.org/a"], "tools": ["search", "navigate"]}', 2, ("search", "navigate")),
    ("<think>plan</think>\n1. search | pcnsl csf\n2. extract | csf protein\nSTEPS: 2", 2, ("search", "extract")),
    ('{"steps": 3, "queries": ["a", "b", "c"], "tools": ["search", "browse", "extract"]}', 3, ("search", "search", "extract")),
    ('{"steps": 1, "queries": ["a", "b", "c"], "tools": ["search", "search", "search"]}', 1, ("search",)),
]


@mark.parametrize("completion,count,tools", test_data)
def test_parse_plan(completion, count, tools):
    plan = parse_plan(completion, 8)
    assert plan.step_count == count
    assert plan.tools == tools


def test_parse_plan_clamps_to_max_steps():
    queries = [f"query {i}" for i in range(50)]
    plan = parse_plan(json.dumps({"steps": 50, "queries": queries, "tools": ["search"] * 50}), 8)
    assert plan.step_count == 8
    assert plan.queries == tuple(queries[:8])


def test_parse_plan_without_queries():
    with raises(PlanParseError):
        parse_plan("I would search the literature.", 8)


def test_unparsable_plan_falls_back_to_one_search():
    agent, gateway, record, _ = _agent(CountingBackend(), [(PLAN_MATCH, "no plan today")])
    plan = agent.plan(CASE, gateway)
    assert plan == fallback_plan(CASE.text)
    assert plan.tools == ("search",)
    assert plan.queries == ("A 70-year-old woman presented with left arm weakness and confusion.",)
    assert any("unusable search plan" in note for note in record.notes)


test_data = [
    ("https://pubmed.ncbi.nlm.nih.gov/xyz", True),
    ("https://www.ncbi.nlm.nih.gov/pmc/articles/1", False),
    ("https://huggingface.co/datasets/x", True),
    ("https://cdn.huggingface.co/file", True),
    ("https://nothuggingface.co/file", False),
    ("https://www.ncbi.nlm.nih.gov/books/NBK1", False),
]


@mark.parametrize("url,blocked", test_data)
def test_blocklist(url, blocked):
    assert Blocklist().is_blocked(url) == blocked


def test_navigate_blocked_url_makes_no_request():
    backend = CountingBackend()
    invocation = WebTools(backend, Blocklist()).invoke(1, "navigate", "https://pubmed.ncbi.nlm.nih.gov/xyz")
    assert invocation.blocked
    assert invocation.result == ""
    assert backend.fetches == []


def test_blocked_invocation_cannot_carry_result():
    with raises(ValueError):
        ToolInvocation(1, "navigate", "u", "text", "u", True)


def test_recorded_search_is_verbatim(tmp_path):
    doc = {"query": "pcnsl csf", "results": [{"title": "PCNSL", "url": "https://example.org/pcnsl", "snippet": "CSF cytology may be negative."}]}
    write_json(tmp_path / f"search-{slugify('pcnsl csf')}.json", doc)
    invocation = WebTools(RecordedWebBackend(str(tmp_path)), Blocklist()).invoke(1, "search", "pcnsl csf")
    assert invocation.result == "PCNSL\nhttps://example.org/pcnsl\nCSF cytology may be negative."


def test_missing_fixture_is_tool_error(tmp_path):
    with raises(ToolError) as e:
        WebTools(RecordedWebBackend(str(tmp_path)), Blocklist()).invoke(2, "navigate", "https://example.org/gone")
    assert e.value.invocation.step == 2
    assert e.value.invocation.failed


def test_navigate_by_keywords_skips_blocked_hits():
    hits = [SearchHit("PubMed", "https://pubmed.ncbi.nlm.nih.gov/1"), SearchHit("Review", "https://example.org/review")]
    backend = CountingBackend({"pcnsl review": hits}, {"https://example.org/review": "Review text"})
    invocation = WebTools(backend, Blocklist()).invoke(1, "navigate", "pcnsl review")
    assert invocation.url == "https://example.org/review"
    assert invocation.blocked_urls == ("https://pubmed.ncbi.nlm.nih.gov/1",)
    assert backend.fetches == ["https://example.org/review"]


def test_extract_uses_last_page():
    page = "PCNSL overview.\n\nCSF protein is elevated and cytology is often negative.\n\nTreatment uses methotrexate."
    backend = CountingBackend(pages={"https://example.org/p": page})
    tools = WebTools(backend, Blocklist())
    tools.invoke(1, "navigate", "https://example.org/p")
    invocation = tools.invoke(2, "extract", "csf cytology")
    assert invocation.result == "CSF protein is elevated and cytology is often negative."
    assert backend.fetches == ["https://example.org/p"]


def test_extract_without_page_fails():
    with raises(ToolError):
        WebTools(CountingBackend(), Blocklist()).invoke(1, "extract", "csf")


def test_best_passage_without_focus():
    assert best_passage("first\nsecond", "") == "first"


def test_update_memory_concatenates():
    agent, gateway, _, _ = _agent(CountingBackend(), [(MEMORY_MATCH, concatenate_memory)])
    memory = agent.update_memory(MemoryState(), ToolInvocation(1, "search", "q", "fact A"), gateway)
    assert memory.text == "fact A"
    memory = agent.update_memory(memory, ToolInvocation(2, "search", "q", "fact B", "https://example.org/b"), gateway)
    assert memory.text == "fact A\nfact B"
    assert memory.urls == ("https://example.org/b",)


def test_blocked_step_appends_note_without_completion():
    agent, gateway, _, mock = _agent(CountingBackend(), [(MEMORY_MATCH, concatenate_memory)])
    memory = agent.update_memory(MemoryState("fact A", 1), ToolInvocation(2, "navigate", "u", "", "u", True), gateway)
    assert memory.text == "fact A\n[step 2 blocked]"
    assert mock.call_count() == 0


def test_memory_truncated_to_budget():
    agent, gateway, record, _ = _agent(CountingBackend(), [(MEMORY_MATCH, "x" * 500)], memory_budget=100)
    memory = agent.update_memory(MemoryState(), ToolInvocation(1, "search", "q", "fact"), gateway)
    assert len(memory.text) == 100
    assert memory.text.endswith(TRUNCATION_MARKER)
    assert any("memory truncated" in note for note in record.notes)


def test_diagnose_from_empty_memory():
    completion = "\n".join(f"{n}. Disease {n}" for n in range(1, 11))
    agent, gateway, record, _ = _agent(CountingBackend(), [(DIAGNOSE_MATCH, completion)])
    result = agent.diagnose_from_memory(CASE, MemoryState(), gateway)
    assert len(result.disease_list) == 10
    assert EMPTY_EVIDENCE in record.exchanges[0].prompt


LEAKY_PLAN = {
    "steps": 5,
    "queries": [
        "pcnsl csf findings",
        "https://pubmed.ncbi.nlm.nih.gov/12345",
        "https://huggingface.co/datasets/medcase",
        "https://huggingface.co/datasets/medcase answer",
        "https://example.org/pcnsl",
    ],
    "tools": ["search", "navigate", "navigate", "extract", "navigate"],
}


def test_blocklist_enforced_over_whole_run():
    hits = {
        "pcnsl csf findings": [
            SearchHit("Leak", "https://pubmed.ncbi.nlm.nih.gov/999", "answer"),
            SearchHit("Review", "https://example.org/pcnsl", "CSF pleocytosis"),
        ]
    }
    backend = CountingBackend(hits, {"https://example.org/pcnsl": "PCNSL presents with multifocal lesions."})
    entries = [(PLAN_MATCH, json.dumps(LEAKY_PLAN)), (MEMORY_MATCH, concatenate_memory), (DIAGNOSE_MATCH, "1. Primary CNS lymphoma")]
    agent, gateway, record, _ = _agent(backend, entries)
    result = agent.run(CASE, gateway)

    assert result.disease_list.names() == ["Primary CNS lymphoma"]
    blocklist = Blocklist()
    assert len(record.tool_log) == 5
    for invocation in record.tool_log:
        if invocation.url and blocklist.is_blocked(invocation.url):
            assert invocation.blocked
            assert invocation.result == ""
        assert "pubmed" not in invocation.result
    assert [i.blocked for i in record.tool_log] == [False, True, True, True, False]
    assert backend.fetched_hosts() == {"example.org"}


def test_tool_error_does_not_stop_the_run():
    plan = {"steps": 2, "queries": ["https://dead.example.org/x", "https://example.org/ok"], "tools": ["navigate", "navigate"]}
    backend = CountingBackend(pages={"https://example.org/ok": "fact B"}, unreachable={"https://dead.example.org/x"})
    entries = [(PLAN_MATCH, json.dumps(plan)), (MEMORY_MATCH, concatenate_memory), (DIAGNOSE_MATCH, "1. X")]
    agent, gateway, record, _ = _agent(backend, entries)
    agent.run(CASE, gateway)

    assert [i.step for i in record.tool_log] == [1, 2]
    assert record.tool_log[0].failed
    assert record.tool_log[1].result == "fact B"
    diagnose_prompt = record.exchanges_for()[-1].prompt
    assert "[step 1 failed:" in diagnose_prompt
    assert "fact B" in diagnose_prompt


def test_all_steps_blocked():
    plan = {"steps": 1, "queries": ["https://pubmed.ncbi.nlm.nih.gov/1"], "tools": ["navigate"]}
    entries = [(PLAN_MATCH, json.dumps(plan)), (DIAGNOSE_MATCH, "1. X\n2. Y")]
    agent, gateway, record, mock = _agent(CountingBackend(), entries)
    result = agent.run(CASE, gateway)
    assert result.disease_list.names() == ["X", "Y"]
    assert mock.call_count(MEMORY_MATCH) == 0
    assert "[step 1 blocked]" in record.exchanges_for()[-1].prompt


def _recorded_fixtures(directory):
    write_json(
        os.path.join(directory, f"search-{slugify('pcnsl csf')}.json"),
        {"query": "pcnsl csf", "results": [{"title": "PCNSL", "url": "https://example.org/pcnsl", "snippet": "CSF findings"}]},
    )
    write_json(os.path.join(directory, f"page-{slugify('https://example.org/pcnsl')}.json"), {"url": "https://example.org/pcnsl", "text": "PCNSL text"})


def test_recorded_run_is_deterministic(tmp_path):
    _recorded_fixtures(str(tmp_path))
    plan = {"steps": 2, "queries": ["pcnsl csf", "https://example.org/pcnsl"], "tools": ["search", "navigate"]}
    entries = [(PLAN_MATCH, json.dumps(plan)), (MEMORY_MATCH, concatenate_memory), (DIAGNOSE_MATCH, "1. Primary CNS lymphoma")]

    outputs = []
    for _ in range(2):
        agent, gateway, record, _ = _agent(RecordedWebBackend(str(tmp_path)), entries)
        result = agent.run(CASE, gateway)
        outputs.append((result, record.tool_log, [e.prompt for e in record.exchanges]))
    assert outputs[0] == outputs[1]
    assert len(outputs[0][1]) <= 2


def test_recording_backend_writes_replayable_fixtures(tmp_path):
    hits = {"q": [SearchHit("T", "https://example.org/t", "s")]}
    recording = RecordingWebBackend(CountingBackend(hits, {"https://example.org/t": "page"}), str(tmp_path))
    recording.search("q")
    recording.fetch("https://example.org/t")

    replay = RecordedWebBackend(str(tmp_path))
    assert replay.search("q") == hits["q"]
    assert replay.fetch("https://example.org/t") == "page"


def test_live_backend_search_and_fetch():
    def handler(request):
        if request.url.host == "search.local":
            assert request.url.params["q"] == "pcnsl"
            return httpx.Response(200, json={"results": [{"title": "T", "url": "https://example.org/a", "content": "snippet"}]})
        html = "<html><head><script>x()</script></head><body><h1>PCNSL</h1><p>CSF protein high.</p></body></html>"
        return httpx.Response(200, text=html, headers={"content-type": "text/html"})

    client = httpx.Client(transport=httpx.MockTransport(handler))
    backend = LiveWebBackend("https://search.local/search", host_interval=0.0, client=client)
    assert backend.search("pcnsl") == [SearchHit("T", "https://example.org/a", "snippet")]
    assert backend.fetch("https://example.org/a") == "PCNSL\nCSF protein high."


def test_live_backend_transport_failure():
    def handler(request):
        raise httpx.ConnectError("unreachable")

    backend = LiveWebBackend("https://search.local/search", host_interval=0.0, client=httpx.Client(transport=httpx.MockTransport(handler)))
    with raises(ToolError):
        backend.fetch("https://example.org/a")


def redirecting_backend(requested, location):
    def handler(request):
        requested.append(str(request.url))
        if request.url.host == "www.ncbi.nlm.nih.gov":
            return httpx.Response(301, headers={"location": location})
        return httpx.Response(200, text="abstract text", headers={"content-type": "text/plain"})

    client = httpx.Client(transport=httpx.MockTransport(handler))
    return LiveWebBackend("https://search.local/search", host_interval=0.0, client=client, blocklist=Blocklist())


def test_redirect_to_blocked_host_is_not_followed():
    requested = []
    backend = redirecting_backend(requested, "https://pubmed.ncbi.nlm.nih.gov/12345/")
    invocation = WebTools(backend, Blocklist()).invoke(1, "navigate", "https://www.ncbi.nlm.nih.gov/pubmed/12345")

    assert invocation.blocked
    assert invocation.result == ""
    assert "https://pubmed.ncbi.nlm.nih.gov/12345/" in invocation.blocked_urls
    assert requested == ["https://www.ncbi.nlm.nih.gov/pubmed/12345"]


def test_redirect_to_allowed_host_is_followed():
    requested = []
    backend = redirecting_backend(requested, "https://example.org/abstract")
    assert backend.fetch("https://www.ncbi.nlm.nih.gov/pubmed/12345") == "abstract text"
    assert requested == ["https://www.ncbi.nlm.nih.gov/pubmed/12345", "https://example.org/abstract"]


def test_malformed_url_is_a_failed_step():
    requested = []
    backend = redirecting_backend(requested, "https://example.org/abstract")
    with raises(ToolError) as e:
        WebTools(backend, Blocklist()).invoke(2, "navigate", "http://999.1.1.1/page")
    assert e.value.invocation.failed
    assert e.value.invocation.step == 2
    assert requested == []


test_data = [
    ("PCNSL CSF findings", "pcnsl-csf-findings"),
    ("https://example.org/pcnsl", "https-example-org-pcnsl"),
]


@mark.parametrize("argument,slug", test_data)
def test_slugify(argument, slug):
    assert slugify(argument) == slug


def test_slugify_long_argument_is_hashed():
    slug = slugify("word " * 40)
    assert len(slug) == 80 + 1 + 10
    assert slugify("word " * 40) == slug
    assert slugify("word " * 41) != slug


def test_html_to_text_drops_scripts():
    assert html_to_text("<p>a</p><style>p{}</style><p>b</p>") == "a\nb"
