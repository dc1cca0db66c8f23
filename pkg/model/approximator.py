""" Conversations 1 and 2: summarise, select, plan, implement and integrate approximations """
from dataclasses import dataclass, field, replace
from enum import Enum
import json
import logging
import re

from __init__ import config
from model import knobs
from model.codegraph import scan_functions
from model.errors import (
    NoJsonFound, SchemaMismatch, SelectionFailed, KnobProtocolViolation, AlternativesExhausted, ParseFailure,
)
from model.llm import send, start_conversation, extract_json, json_objects, SchemaId
from model.prompts import TemplateId, render, OUTPUT_INSTRUCTIONS

logger = logging.getLogger(__name__)

set_knob_values = knobs.set_knob_values

HEADING = re.compile(r"^\s*#+\s*(.+?)\s*$")


class PatchStatus(str, Enum):
    PROPOSED = "proposed"
    COMPILED = "compiled"
    VALIDATED = "validated"
    DISCARDED = "discarded"
    KEPT_ORIGINAL = "kept-original"


@dataclass
class CodebaseSummary:
    app_summary: str
    per_function: dict

    def text(self):
        '''Rendering used to seed the approximation conversation'''
        lines = [self.app_summary.strip(), ""]
        for name, summary in self.per_function.items():
            lines.append(f"- {name}: {summary}")
        return "\n".join(lines).strip()

    def read(self):
        return {"app_summary": self.app_summary, "per_function": dict(self.per_function)}


@dataclass
class SelectionMap:
    decisions: dict
    rationale: dict = field(default_factory=dict)

    def selected(self, order):
        """Names marked approximate, in the given processing order"""
        return [name for name in order if self.decisions.get(name) == "approximate"]

    def read(self):
        return {"decisions": dict(self.decisions), "rationale": dict(self.rationale)}


@dataclass
class ApproximationPatch:
    function: str
    apx_code: str
    knobs: list
    plan_text: str
    status: PatchStatus = PatchStatus.PROPOSED
    attempt: int = 1

    def defaults(self):
        return knobs.knob_defaults(self.apx_code)

    def code_for(self, values=None):
        '''apx_code with the given knob values, unknown names are an error'''
        if not values:
            return self.apx_code
        return set_knob_values(self.apx_code, values)

    def narrowed(self, intervals):
        """Copy whose knob ranges are replaced by the given {name: (lo, hi)}"""
        specs = [replace(k, range=tuple(intervals.get(k.name, k.range))) for k in self.knobs]
        return replace(self, knobs=specs)

    def read(self):
        return {
            "function": self.function,
            "status": self.status.value,
            "attempt": self.attempt,
            "knobs": [k.read() for k in self.knobs],
            "apx_code": self.apx_code,
            "plan_text": self.plan_text,
        }

    def __str__(self):
        return json.dumps(self.read())


""" Conversation 1 """

def _function_line(text, name):
    pattern = re.compile(rf"(?<![A-Za-z0-9_]){re.escape(name)}(?![A-Za-z0-9_])")
    for line in text.splitlines():
        if pattern.search(line):
            return line
    return None


def _clean_summary_line(line, name):
    line = re.sub(r"^[\s\-*#\d.)]+", "", line)
    line = line.replace("`", "").replace("**", "")
    head, sep, tail = line.partition(name)
    if sep and not head.strip():
        line = tail.lstrip(" ():-–")
    return line.strip()


def parse_summary(text, names):
    """Reads a structured code_summary object when present, otherwise one line per function"""
    for obj in json_objects(text):
        table = obj.get("code_summary")
        if isinstance(table, dict):
            app = obj.get("app_summary") or text[:text.find("{")].strip()
            return CodebaseSummary(app_summary=str(app), per_function={
                name: str(table.get(name, "")) for name in names})

    first_mention = len(text)
    per_function = {}
    for name in names:
        line = _function_line(text, name)
        per_function[name] = _clean_summary_line(line, name) if line else ""
        if line:
            first_mention = min(first_mention, text.find(line))
    app_summary = text[:first_mention].strip() or text.strip().split("\n\n")[0]
    return CodebaseSummary(app_summary=app_summary, per_function=per_function)


def summarize_codebase(conv1, codebase, functions):
    response = send(conv1, render(TemplateId.CONV1_SUMMARY, complete_code_base=codebase))
    summary = parse_summary(response.text, list(functions))
    logger.info("Summarised codebase, %d functions", len(summary.per_function))
    return summary


def parse_rationale(text, names):
    '''# <function name> headings followed by the reasoning paragraph'''
    rationale = {}
    current = None
    for line in text.splitlines():
        heading = HEADING.match(line)
        if heading:
            title = heading.group(1).strip("`* ")
            current = title if title in names else None
            if current is not None:
                rationale[current] = ""
            continue
        if current is not None:
            if line.strip().startswith("{"):
                current = None
                continue
            rationale[current] = (rationale[current] + "\n" + line).strip()
    return rationale


def select_functions(conv1, functions, repair_attempts=None):
    """Probes every function, then asks for the approximate / do-not-approximate table"""
    repair_attempts = config['JSON_REPAIR_ATTEMPTS'] if repair_attempts is None else repair_attempts
    names = list(functions)
    for name in names:
        send(conv1, render(TemplateId.CONV1_FUNCTION_DETAIL, function_name=name))

    response = send(conv1, render(TemplateId.CONV1_SELECT))
    for attempt in range(repair_attempts + 1):
        try:
            decisions = extract_json(response, SchemaId.FUNCTION_SELECTION, functions=names)
            selection = SelectionMap(decisions=decisions, rationale=parse_rationale(response.text, names))
            logger.info("Selected for approximation: %s", selection.selected(names) or "none")
            return selection
        except (NoJsonFound, SchemaMismatch) as e:
            if attempt == repair_attempts:
                raise SelectionFailed(f"Selection unusable after {repair_attempts} repairs: {e.message}")
            logger.warning("Selection reply rejected (%s), asking again", e.message)
            response = send(conv1, render(TemplateId.JSON_REPAIR, error=e.message,
                                          function_names=", ".join(names)))


""" Conversation 2 """

def start_approximation_conversation(provider, summary):
    return start_conversation(render(TemplateId.CONV2_SYSTEM, code_base_summary=summary.text()),
                              provider, conversation_id="conv2")


def plan_approximations(conv2, function, platform):
    """Planning exchange, the function source travels with the prompt"""
    code = render(TemplateId.CONV2_FUNCTION_CODE, function_name=function.name, function_code=function.body)
    plan = render(TemplateId.CONV2_PLAN, function_name=function.name,
                  platform_architecture=getattr(platform, "value", platform))
    return send(conv2, code + "\n\n" + plan).text


def fewshots_for(plan):
    '''Worked examples matching the techniques a plan talks about'''
    lowered = plan.lower()
    shots = []
    if "perforat" in lowered:
        shots.append(render(TemplateId.FEWSHOT_LOOP_PERFORATION))
    if "precision" in lowered:
        shots.append(render(TemplateId.FEWSHOT_PRECISION_SCALING))
    return shots


def _check_defines(apx_code, name):
    try:
        _, found = scan_functions(apx_code, f"<{name}>")
    except ParseFailure as e:
        raise KnobProtocolViolation(f"approximated code does not scan: {e}")
    names = [f[0] for f in found]
    if names != [name]:
        raise KnobProtocolViolation(f"approximated code must define exactly '{name}', found {names}")


def apply_approximation(conv2, function, plan, repair_attempts=None, attempt=1):
    """Implementation exchange plus the JSON step, retried with the parse error until the budget runs out"""
    repair_attempts = config['JSON_REPAIR_ATTEMPTS'] if repair_attempts is None else repair_attempts
    prompt = "\n\n".join([render(TemplateId.CONV2_APPLY, function_name=function.name)] + fewshots_for(plan))
    send(conv2, prompt)

    add_error = ""
    for tries in range(repair_attempts + 1):
        response = send(conv2, render(TemplateId.CONV2_JSONIFY, add_error=add_error,
                                      output_instuctions=OUTPUT_INSTRUCTIONS))
        try:
            output = extract_json(response, SchemaId.APPROXIMATION_OUTPUT)
            break
        except (NoJsonFound, SchemaMismatch) as e:
            if tries == repair_attempts:
                raise
            logger.warning("%s: JSON reply rejected (%s)", function.name, e.message)
            add_error = f"Your previous JSON could not be used: {e.message}. Fix this and reply again."

    apx_code = output["apx_code"].strip("\n")
    specs = knobs.knob_specs(output, function.name)
    _check_defines(apx_code, function.name)
    patch = ApproximationPatch(function=function.name, apx_code=apx_code, knobs=specs,
                               plan_text=plan, attempt=attempt)
    logger.info("%s: proposed patch with knobs %s", function.name, [k.name for k in specs])
    return patch


def integrate_patch(workspace, patch, values=None, record=None):
    """Writes the patch, with knob values applied, over the function in workspace"""
    workspace.replace_function(patch.function, patch.code_for(values), record=record)
    return workspace


def next_alternative(conv2, function, failure_log, attempts_used, budget=None):
    """Plan text for another technique, AlternativesExhausted once attempts_used reaches the budget"""
    budget = config['ALTERNATIVES_PER_FUNCTION'] if budget is None else budget
    if attempts_used >= budget:
        raise AlternativesExhausted(function.name, attempts_used)
    logger.info("%s: asking for alternative %d of %d", function.name, attempts_used + 1, budget)
    return send(conv2, render(TemplateId.CONV2_ALTERNATIVE, function_name=function.name,
                              failure_log=failure_log[-4000:])).text
