"""Stage-1 web source: plan once, run the tool steps into a bounded memory, diagnose from the memory."""
import logging

from diagnosis.dxcore import SOURCE_WEB, parse_answer_list, strip_tagged_sections
from llmgateway import prompts

from .agentcore import (
    DEFAULT_MAX_STEPS,
    DEFAULT_MEMORY_BUDGET,
    Blocklist,
    MemoryState,
    PlanParseError,
    SearchPlan,
    ToolError,
    ToolInvocation,
    clamp_memory,
    fallback_plan,
    parse_plan,
)
from .tools import WebTools

logger = logging.getLogger(__name__)

EMPTY_EVIDENCE = "(no web evidence was gathered)"


class WebResearchAgent:
    """WebResearchAgent runs one case at a time; runs for different cases share only the gateway and backend."""

    def __init__(self, catalog, backend, blocklist=None, max_steps=DEFAULT_MAX_STEPS, memory_budget=DEFAULT_MEMORY_BUDGET):
        self.catalog = catalog
        self.backend = backend
        self.blocklist = blocklist or Blocklist()
        self.max_steps = max_steps
        self.memory_budget = memory_budget

    def make_plan(self, case, gateway) -> SearchPlan:
        """make_plan() raises PlanParseError when the completion holds no query."""
        prompt = self.catalog.render(prompts.WEB_PLAN, case=case.text, max_steps=self.max_steps)
        return parse_plan(gateway.complete_text(prompt), self.max_steps)

    def plan(self, case, gateway) -> SearchPlan:
        try:
            return self.make_plan(case, gateway)
        except PlanParseError as e:
            gateway.note(f"unusable search plan ({e}); searching for the chief findings")
            return fallback_plan(case.text)

    def update_memory(self, memory: MemoryState, invocation: ToolInvocation, gateway) -> MemoryState:
        """update_memory() folds one tool result into the memory.

        Blocked and failed steps add a one-line note without a completion.
        """
        step = invocation.step
        if invocation.blocked or invocation.failed:
            line = f"[step {step} blocked]" if invocation.blocked else f"[step {step} failed: {invocation.error}]"
            text = f"{memory.text}\n{line}" if memory.text else line
            return MemoryState(clamp_memory(text, self.memory_budget), step, memory.urls)

        prompt = self.catalog.render(prompts.WEB_MEMORY, memory=memory.text, result=invocation.result, budget=self.memory_budget)
        completion = strip_tagged_sections(gateway.complete_text(prompt), "think").strip()
        text = clamp_memory(completion, self.memory_budget)
        if len(text) < len(completion):
            gateway.note(f"memory truncated at step {step} ({len(completion)} > {self.memory_budget} chars)")

        urls = memory.urls
        if invocation.url and invocation.url not in urls:
            urls = urls + (invocation.url,)
        return MemoryState(text, step, urls)

    def diagnose_from_memory(self, case, memory: MemoryState, gateway):
        prompt = self.catalog.render(prompts.WEB_DIAGNOSE, memory=memory.text or EMPTY_EVIDENCE, case=case.text)
        return parse_answer_list(gateway.complete_text(prompt), SOURCE_WEB)

    def run(self, case, gateway):
        plan = self.plan(case, gateway)
        logger.info("Case %s: web plan with %d step(s)", case.id, plan.step_count)

        tools = WebTools(self.backend, self.blocklist)
        memory = MemoryState()
        for step, tool, argument in plan.steps():
            try:
                invocation = tools.invoke(step, tool, argument)
            except ToolError as e:
                logger.warning("Case %s: step %d (%s) failed: %s", case.id, step, tool, e)
                invocation = e.invocation

            if gateway.record is not None:
                gateway.record.add_tool_invocation(invocation)
            memory = self.update_memory(memory, invocation, gateway)

        return self.diagnose_from_memory(case, memory, gateway)
