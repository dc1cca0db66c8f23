""" Knob declaration blocks inside approximated functions.

A block looks like

    /* Knob Variables Declaration Start */
    int knob1 = 80;
    /* Knob Variables Declaration End */

with one `<type> <name> = <literal>;` per line between the markers.
"""
from dataclasses import dataclass
import json
import re

from model.errors import KnobProtocolViolation, UnknownKnob

START_MARKER = "/* Knob Variables Declaration Start */"
END_MARKER = "/* Knob Variables Declaration End */"

DECLARATION = re.compile(
    r"^(?P<indent>\s*)(?P<type>(?:(?:const|static|volatile|unsigned|signed|long|short)\s+)*"
    r"[A-Za-z_]\w*)\s+(?P<name>[A-Za-z_]\w*)\s*=\s*(?P<value>[-+]?[0-9][0-9A-Za-z_.+-]*)\s*;\s*$"
)
INTEGER_TYPES = ("char", "short", "int", "long", "unsigned", "signed", "size_t",
                 "int8_t", "int16_t", "int32_t", "int64_t", "uint8_t", "uint16_t", "uint32_t", "uint64_t")
INCREMENT_KINDS = ("Integer", "Real")


@dataclass(frozen=True)
class KnobSpec:
    name: str
    range: tuple
    increment_kind: str
    declared_in: str

    @property
    def lo(self):
        return self.range[0]

    @property
    def hi(self):
        return self.range[1]

    def read(self):
        return {
            "name": self.name,
            "range": list(self.range),
            "increment_kind": self.increment_kind,
            "declared_in": self.declared_in,
        }

    def __str__(self):
        return json.dumps(self.read())


@dataclass(frozen=True)
class KnobDeclaration:
    name: str
    c_type: str
    value: str
    line: int  # index into the code's lines


def _block_bounds(code):
    starts = code.count(START_MARKER)
    ends = code.count(END_MARKER)
    if starts != 1 or ends != 1:
        raise KnobProtocolViolation(
            f"expected one start and one end marker, found {starts} and {ends}")
    start = code.index(START_MARKER)
    end = code.index(END_MARKER)
    if end < start:
        raise KnobProtocolViolation("end marker precedes start marker")
    return start, end


def parse_knob_block(code):
    """Returns the declarations between the markers in source order"""
    start, end = _block_bounds(code)
    lines = code.split("\n")
    first = code.count("\n", 0, start) + 1
    last = code.count("\n", 0, end)
    # markers must own their lines so substitution cannot touch code around them
    if lines[first - 1].strip() != START_MARKER or lines[last].strip() != END_MARKER:
        raise KnobProtocolViolation("markers must stand on lines of their own")

    declarations = []
    for index in range(first, last):
        line = lines[index]
        if not line.strip():
            continue
        match = DECLARATION.match(line)
        if match is None:
            raise KnobProtocolViolation(f"'{line.strip()}' is not a '<type> <name> = <literal>;' declaration")
        declarations.append(KnobDeclaration(match["name"], match["type"], match["value"], index))

    names = [d.name for d in declarations]
    if len(set(names)) != len(names):
        raise KnobProtocolViolation("a knob is declared twice")
    return declarations


def is_integer_type(c_type):
    return c_type.split()[-1] in INTEGER_TYPES


def format_value(value, c_type, previous_literal=""):
    '''C literal for value, integer types never get a decimal point'''
    if is_integer_type(c_type):
        return str(int(round(value)))
    text = repr(float(value))
    if previous_literal.lower().endswith("f"):
        text += "f"
    return text


def set_knob_values(apx_code, values):
    """Returns apx_code with the initializers of the given knobs replaced, every other byte kept"""
    declarations = {d.name: d for d in parse_knob_block(apx_code)}
    for name in values:
        if name not in declarations:
            raise UnknownKnob(name)

    lines = apx_code.split("\n")
    for name, value in values.items():
        decl = declarations[name]
        match = DECLARATION.match(lines[decl.line])
        literal = format_value(value, decl.c_type, decl.value)
        line = lines[decl.line]
        lines[decl.line] = line[:match.start("value")] + literal + line[match.end("value"):]
    return "\n".join(lines)


def knob_defaults(apx_code):
    """Initial values written by the model, as numbers"""
    defaults = {}
    for decl in parse_knob_block(apx_code):
        literal = decl.value.rstrip("fFlLuU")
        try:
            defaults[decl.name] = int(literal, 0) if is_integer_type(decl.c_type) else float(literal)
        except ValueError:
            defaults[decl.name] = float(literal)
    return defaults


def _keyed(items, field):
    '''[{"k": v}, ...] or {"k": v} -> {"k": v}'''
    if isinstance(items, dict):
        return dict(items)
    merged = {}
    for item in items:
        for key, value in item.items():
            if key in merged:
                raise KnobProtocolViolation(f"'{key}' appears twice in {field}")
            merged[key] = value
    return merged


def knob_specs(output, function):
    """
    Cross-checks a parsed approximation reply and returns its KnobSpecs.

    The names in the knob block, knob_variables, knob_ranges and
    knob_increments must be the same non-empty set. Ranges need lo < hi and integral
    bounds for Integer knobs.
    """
    declared = [d.name for d in parse_knob_block(output["apx_code"])]
    variables = list(output["knob_variables"])
    ranges = _keyed(output["knob_ranges"], "knob_ranges")
    increments = _keyed(output["knob_increments"], "knob_increments")

    names = set(declared)
    for label, other in (("knob_variables", set(variables)), ("knob_ranges", set(ranges)),
                         ("knob_increments", set(increments))):
        if other != names:
            missing = sorted(names - other)
            extra = sorted(other - names)
            raise KnobProtocolViolation(f"{label} disagrees with the knob block (missing {missing}, extra {extra})")
    if not names:
        raise KnobProtocolViolation("the approximation declares no knob variables")

    specs = []
    for name in declared:
        kind = increments[name]
        if not isinstance(kind, str) or kind.strip().capitalize() not in INCREMENT_KINDS:
            raise KnobProtocolViolation(f"increment of '{name}' must be Integer or Real, got {kind!r}")
        kind = kind.strip().capitalize()
        bounds = ranges[name]
        if (not isinstance(bounds, (list, tuple)) or len(bounds) != 2
                or not all(isinstance(b, (int, float)) and not isinstance(b, bool) for b in bounds)):
            raise KnobProtocolViolation(f"range of '{name}' must be [min, max]")
        lo, hi = bounds
        if not lo < hi:
            raise KnobProtocolViolation(f"range of '{name}' is empty or inverted: [{lo}, {hi}]")
        if kind == "Integer":
            if float(lo) != int(lo) or float(hi) != int(hi):
                raise KnobProtocolViolation(f"Integer knob '{name}' has fractional bounds")
            lo, hi = int(lo), int(hi)
        else:
            lo, hi = float(lo), float(hi)
        specs.append(KnobSpec(name=name, range=(lo, hi), increment_kind=kind, declared_in=function))
    return specs
