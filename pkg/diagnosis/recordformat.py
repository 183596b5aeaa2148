"""JSON documents for disease lists, evidence bundles, final diagnoses and run records.

disease list: {"source": ..., "items": [{"rank": 1, "name": ..., "evidence": ...}]}
"""
from dataclasses import asdict, is_dataclass

from .dxcore import DiseaseCandidate, DiseaseList, EvidenceBundle, FinalDiagnosis, SourceResult, STAGE1_SOURCES
from .runrecord import LlmExchange, RunRecord


def disease_list_to_dict(disease_list: DiseaseList):
    items = [{"rank": item.rank, "name": item.name, "evidence": item.evidence} for item in disease_list]
    return {"source": disease_list.source, "items": items}


def disease_list_from_dict(d) -> DiseaseList:
    items = [DiseaseCandidate(item["name"], int(item["rank"]), item.get("evidence")) for item in d.get("items", [])]
    return DiseaseList(d["source"], tuple(items))


def source_result_to_dict(result: SourceResult):
    d = disease_list_to_dict(result.disease_list)
    d["reasoning"] = result.reasoning
    d["failure"] = result.failure
    return d


def source_result_from_dict(d) -> SourceResult:
    return SourceResult(disease_list_from_dict(d), d.get("reasoning", ""), d.get("failure"))


def bundle_to_dict(bundle: EvidenceBundle):
    return {source: source_result_to_dict(bundle.get(source)) for source in STAGE1_SOURCES}


def bundle_from_dict(d) -> EvidenceBundle:
    return EvidenceBundle(**{source: source_result_from_dict(d[source]) for source in STAGE1_SOURCES})


def final_diagnosis_to_dict(final: FinalDiagnosis):
    d = disease_list_to_dict(final.ranked)
    d["reasoning"] = final.reasoning
    d["strategy"] = final.strategy
    d["degraded"] = final.degraded
    d["notes"] = list(final.notes)
    return d


def final_diagnosis_from_dict(d) -> FinalDiagnosis:
    return FinalDiagnosis(d["reasoning"], disease_list_from_dict(d), d["strategy"], bool(d.get("degraded")), tuple(d.get("notes", [])))


def _tool_entry(invocation):
    if isinstance(invocation, dict):
        return invocation
    if is_dataclass(invocation):
        return asdict(invocation)
    return dict(vars(invocation))


def run_record_to_dict(record: RunRecord):
    prompt_tokens, completion_tokens = record.token_usage()
    return {
        "case_id": record.case_id,
        "latencies": dict(record.latencies),
        "tokens": {"prompt": prompt_tokens, "completion": completion_tokens},
        "exchanges": [asdict(e) for e in record.exchanges],
        "tool_log": [_tool_entry(t) for t in record.tool_log],
        "notes": list(record.notes),
    }


def run_record_from_dict(d) -> RunRecord:
    """run_record_from_dict() restores a record; tool log entries stay plain dicts."""
    record = RunRecord(d["case_id"])
    for e in d.get("exchanges", []):
        record.add_exchange(LlmExchange(**e))
    for t in d.get("tool_log", []):
        record.add_tool_invocation(t)
    for module, seconds in d.get("latencies", {}).items():
        record.add_latency(module, seconds)
    for note in d.get("notes", []):
        record.add_note(note)
    return record
