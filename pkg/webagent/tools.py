"""Web tool backends (live, recorded, recording) and the search/navigate/extract executor."""
import hashlib
import logging
import os
import re
import threading
import time

from bs4 import BeautifulSoup
import httpx

from atomicfile import read_json, write_json
from casedb.bm25 import Bm25Index
from casedb.corpus import tokenize

from .agentcore import TOOL_EXTRACT, TOOL_NAVIGATE, TOOL_SEARCH, BlockedUrlError, SearchHit, ToolError, ToolInvocation

logger = logging.getLogger(__name__)

DEFAULT_USER_AGENT = "dxpipeline-research/1.0 (+offline evaluation; contact: maintainer)"
MAX_PAGE_CHARS = 20000
MAX_SLUG_CHARS = 80
MAX_REDIRECTS = 5

_URL_RE = re.compile(r"^https?://\S+$", re.I)
_PARAGRAPH_SPLIT_RE = re.compile(r"\n\s*\n|\n")


def slugify(argument: str) -> str:
    """slugify() keys fixtures: lowercase alphanumeric runs joined by '-', hashed when long or empty."""
    slug = "-".join(re.findall(r"[a-z0-9]+", argument.lower()))
    digest = hashlib.sha1(argument.encode("utf-8")).hexdigest()[:10]
    if not slug:
        return digest
    if len(slug) > MAX_SLUG_CHARS:
        return slug[:MAX_SLUG_CHARS] + "-" + digest
    return slug


def is_url(text: str) -> bool:
    return bool(_URL_RE.match(text.strip()))


def html_to_text(html: str) -> str:
    soup = BeautifulSoup(html, "html.parser")
    for tag in soup(["script", "style", "noscript", "nav", "footer", "header"]):
        tag.decompose()
    lines = (line.strip() for line in soup.get_text("\n").splitlines())
    return "\n".join(line for line in lines if line)


class LiveWebBackend:
    """LiveWebBackend queries a SearXNG-style JSON search API and fetches pages politely.

    Requests to one host are spaced by at least `host_interval` seconds. Redirects are followed
    hop by hop and a hop onto a blocked host raises BlockedUrlError before it is requested.
    """

    def __init__(
        self, search_endpoint, api_key=None, user_agent=DEFAULT_USER_AGENT, host_interval=1.0, timeout=30.0, client=None, blocklist=None
    ):
        if not search_endpoint:
            raise ToolError("no search endpoint configured")

        self.search_endpoint = search_endpoint
        self.api_key = api_key
        self.host_interval = host_interval
        self.blocklist = blocklist
        self._client = client or httpx.Client(headers={"User-Agent": user_agent}, timeout=timeout)

        self._host_lock = threading.Lock()
        self._last_request = {}

    def _wait_for_host(self, url):
        host = httpx.URL(url).host
        with self._host_lock:
            wait = self._last_request.get(host, 0.0) + self.host_interval - time.monotonic()
            if wait > 0:
                time.sleep(wait)
            self._last_request[host] = time.monotonic()

    def _get(self, url, params=None, headers=None):
        for _ in range(MAX_REDIRECTS + 1):
            self._wait_for_host(url)
            response = self._client.get(url, params=params, headers=headers, follow_redirects=False)
            if not response.has_redirect_location:
                response.raise_for_status()
                return response

            url = str(response.url.join(response.headers["location"]))
            # Later hops get neither the search parameters nor the credential.
            params = None
            headers = None
            if self.blocklist is not None and self.blocklist.is_blocked(url):
                logger.warning("Redirect to blocked URL %s not followed", url)
                raise BlockedUrlError(url)

        raise ToolError(f"too many redirects, last one to {url}")

    def search(self, query):
        headers = {"Authorization": f"Bearer {self.api_key}"} if self.api_key else None
        try:
            response = self._get(self.search_endpoint, params={"q": query, "format": "json"}, headers=headers)
            results = response.json().get("results", [])
        except (httpx.HTTPError, httpx.InvalidURL, ValueError) as e:
            raise ToolError(f"search '{query}' failed: {e}") from e

        return [SearchHit(r.get("title", ""), r["url"], r.get("content") or r.get("snippet") or "") for r in results if r.get("url")]

    def fetch(self, url):
        try:
            response = self._get(url)
        except (httpx.HTTPError, httpx.InvalidURL) as e:
            raise ToolError(f"fetch '{url}' failed: {e}") from e

        if "html" in response.headers.get("content-type", "html"):
            return html_to_text(response.text)
        return response.text


class RecordedWebBackend:
    """RecordedWebBackend replays fixtures `search-<slug>.json` and `page-<slug>.json` from a directory."""

    def __init__(self, directory):
        self.directory = directory

    def _load(self, kind, argument):
        filename = os.path.join(self.directory, f"{kind}-{slugify(argument)}.json")
        if not os.path.exists(filename):
            raise ToolError(f"no recorded {kind} response for '{argument}' ({os.path.basename(filename)})")
        return read_json(filename)

    def search(self, query):
        doc = self._load("search", query)
        return [SearchHit(r["title"], r["url"], r.get("snippet", "")) for r in doc["results"]]

    def fetch(self, url):
        return self._load("page", url)["text"]


class RecordingWebBackend:
    """RecordingWebBackend passes calls to another backend and stores each response as a fixture."""

    def __init__(self, backend, directory):
        self.backend = backend
        self.directory = directory

    def _save(self, kind, argument, doc):
        write_json(os.path.join(self.directory, f"{kind}-{slugify(argument)}.json"), doc)

    def search(self, query):
        hits = self.backend.search(query)
        results = [{"title": h.title, "url": h.url, "snippet": h.snippet} for h in hits]
        self._save("search", query, {"query": query, "results": results})
        return hits

    def fetch(self, url):
        text = self.backend.fetch(url)
        self._save("page", url, {"url": url, "text": text})
        return text


def render_hits(hits):
    return "\n\n".join(f"{h.title}\n{h.url}\n{h.snippet}".strip() for h in hits)


def best_passage(text: str, focus: str) -> str:
    """best_passage() picks the page paragraph that scores highest against `focus` under BM25."""
    paragraphs = [p.strip() for p in _PARAGRAPH_SPLIT_RE.split(text) if p.strip()]
    if not paragraphs:
        return ""

    query = tokenize(focus)
    ranked = Bm25Index([tokenize(p) for p in paragraphs]).topk(query, 1)
    if not query or not ranked:
        return paragraphs[0]
    return paragraphs[ranked[0][0]]


class WebTools:
    """WebTools executes one run's tool calls; it remembers the last page navigated to.

    Blocked URLs never reach the backend.
    """

    def __init__(self, backend, blocklist):
        self.backend = backend
        self.blocklist = blocklist
        self.last_url = None
        self._pages = {}

    def _fetch(self, url):
        if url not in self._pages:
            self._pages[url] = self.backend.fetch(url)[:MAX_PAGE_CHARS]
        return self._pages[url]

    def _search(self, query):
        hits = self.backend.search(query)
        allowed = [h for h in hits if not self.blocklist.is_blocked(h.url)]
        blocked = tuple(h.url for h in hits if self.blocklist.is_blocked(h.url))
        for url in blocked:
            logger.warning("Dropped blocked search hit %s", url)
        return allowed, blocked

    def _blocked(self, step, tool, argument, url, blocked_urls=()):
        logger.warning("Step %d: %s blocked for %s", step, tool, url)
        return ToolInvocation(step, tool, argument, "", url, True, None, tuple(blocked_urls) + (url,))

    def invoke(self, step: int, tool: str, argument: str) -> ToolInvocation:
        """invoke() runs one tool call; transport failures raise ToolError carrying the failed invocation."""
        try:
            return self._invoke(step, tool, argument)
        except ToolError as e:
            if e.invocation is None:
                e.invocation = ToolInvocation(step, tool, argument, error=str(e))
            raise

    def _invoke(self, step, tool, argument):
        if tool == TOOL_SEARCH:
            hits, blocked = self._search(argument)
            return ToolInvocation(step, tool, argument, render_hits(hits), None, False, None, blocked)

        if tool == TOOL_NAVIGATE:
            return self._navigate(step, argument)

        if tool == TOOL_EXTRACT:
            return self._extract(step, argument)

        raise ValueError(f"unknown tool '{tool}'")

    def _navigate(self, step, argument):
        blocked = ()
        url = argument.strip()
        if not is_url(url):
            hits, blocked = self._search(argument)
            if not hits:
                raise ToolError(f"no allowed search hit to navigate to for '{argument}'")
            url = hits[0].url

        if self.blocklist.is_blocked(url):
            return self._blocked(step, TOOL_NAVIGATE, argument, url, blocked)

        try:
            text = self._fetch(url)
        except BlockedUrlError as e:
            return self._blocked(step, TOOL_NAVIGATE, argument, e.url, blocked)
        self.last_url = url
        return ToolInvocation(step, TOOL_NAVIGATE, argument, text, url, False, None, blocked)

    def _extract(self, step, argument):
        parts = argument.strip().split(None, 1)
        if parts and is_url(parts[0]):
            url = parts[0]
            focus = parts[1] if len(parts) > 1 else ""
        else:
            url = self.last_url
            focus = argument
        if url is None:
            raise ToolError("extract has no URL and no page was navigated to")

        if self.blocklist.is_blocked(url):
            return self._blocked(step, TOOL_EXTRACT, argument, url)

        try:
            page = self._fetch(url)
        except BlockedUrlError as e:
            return self._blocked(step, TOOL_EXTRACT, argument, e.url)
        passage = best_passage(page, focus)
        return ToolInvocation(step, TOOL_EXTRACT, argument, passage, url)
