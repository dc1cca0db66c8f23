""" Function extraction and the function call graph (FCG).

Extraction is lexical: comments, literals and preprocessor lines are blanked
out, then every brace block at file scope whose header ends in a parameter
list is taken as a function definition. Function pointers and calls hidden
behind macros do not produce edges.
"""
from dataclasses import dataclass, field
from pathlib import Path
import json
import logging
import re

import networkx as nx

from model.errors import ParseFailure, NoFunctionsFound, CycleRemains

logger = logging.getLogger(__name__)

# identifiers that look like calls but are not
KEYWORDS = frozenset({
    "if", "while", "for", "switch", "return", "sizeof", "do", "else", "case",
    "_Alignof", "_Generic", "_Static_assert", "__attribute__", "__asm__", "asm",
    "defined",
})

CALL_PATTERN = re.compile(r"\b([A-Za-z_]\w*)\s*\(")
NAME_BEFORE_PAREN = re.compile(r"([A-Za-z_]\w*)\s*$")


@dataclass(frozen=True)
class FunctionRecord:
    """
    One top-level function definition.

    span holds 1-based ((start line, start col), (end line, end col)), the end
    position being the closing brace. offsets holds the matching character
    offsets [start, end) so patches can splice without recomputing lines.
    """
    name: str
    file: Path
    span: tuple
    body: str
    callees: frozenset = field(default_factory=frozenset)
    offsets: tuple = (0, 0)

    def read(self):
        return {
            "name": self.name,
            "file": str(self.file),
            "span": [list(self.span[0]), list(self.span[1])],
            "callees": sorted(self.callees),
        }

    def __str__(self):
        return json.dumps(self.read())


@dataclass(frozen=True)
class CallGraph:
    nodes: tuple
    edges: tuple
    removed_edges: tuple = ()
    order: tuple = None

    @property
    def active_edges(self):
        removed = set(self.removed_edges)
        return tuple(e for e in self.edges if e not in removed)

    def digraph(self):
        '''networkx view of the graph without removed edges, insertion is sorted so traversal is deterministic'''
        graph = nx.DiGraph()
        graph.add_nodes_from(sorted(self.nodes))
        graph.add_edges_from(sorted(self.active_edges))
        return graph

    def to_dot(self):
        lines = ["digraph fcg {"]
        for node in sorted(self.nodes):
            lines.append(f'  "{node}";')
        removed = set(self.removed_edges)
        for caller, callee in sorted(self.edges):
            style = " [style=dashed]" if (caller, callee) in removed else ""
            lines.append(f'  "{caller}" -> "{callee}"{style};')
        lines.append("}")
        return "\n".join(lines) + "\n"

    def read(self):
        return {
            "nodes": sorted(self.nodes),
            "edges": [list(e) for e in sorted(self.edges)],
            "removed_edges": [list(e) for e in self.removed_edges],
            "order": list(self.order) if self.order is not None else None,
        }


def mask_source(text, file="<source>"):
    """Returns text with comments, string/char literals and preprocessor lines
    replaced by spaces; newlines and length are kept so offsets stay valid."""
    out = list(text)
    i, n = 0, len(text)
    at_line_start = True

    def blank(a, b):
        for k in range(a, b):
            if out[k] != "\n":
                out[k] = " "

    def line_of(pos):
        return text.count("\n", 0, pos) + 1

    while i < n:
        ch = text[i]
        if ch == "\n":
            at_line_start = True
            i += 1
            continue
        if ch in " \t\r\f\v":
            i += 1
            continue
        if at_line_start and ch == "#":
            # directive runs to an unescaped newline
            j = i
            while j < n:
                if text[j] == "\n" and text[j - 1] != "\\":
                    break
                if text.startswith("/*", j):
                    end = text.find("*/", j + 2)
                    if end < 0:
                        raise ParseFailure(file, line_of(j), "unterminated comment")
                    j = end + 2
                    continue
                j += 1
            blank(i, j)
            i = j
            continue
        at_line_start = False
        if text.startswith("//", i):
            j = text.find("\n", i)
            j = n if j < 0 else j
            blank(i, j)
            i = j
        elif text.startswith("/*", i):
            end = text.find("*/", i + 2)
            if end < 0:
                raise ParseFailure(file, line_of(i), "unterminated comment")
            blank(i, end + 2)
            i = end + 2
        elif ch in "\"'":
            j = i + 1
            while j < n and text[j] != ch:
                if text[j] == "\\":
                    j += 1
                elif text[j] == "\n":
                    raise ParseFailure(file, line_of(i), "unterminated literal")
                j += 1
            if j >= n:
                raise ParseFailure(file, line_of(i), "unterminated literal")
            blank(i, j + 1)
            i = j + 1
        else:
            i += 1
    return "".join(out)


def _position(text, offset):
    line = text.count("\n", 0, offset) + 1
    col = offset - (text.rfind("\n", 0, offset) + 1) + 1
    return line, col


def _function_name(header):
    '''Name of the function a file-scope header introduces, or None'''
    header = header.rstrip()
    if not header.endswith(")") or "=" in header:
        return None
    depth = 0
    for k in range(len(header) - 1, -1, -1):
        if header[k] == ")":
            depth += 1
        elif header[k] == "(":
            depth -= 1
            if depth == 0:
                match = NAME_BEFORE_PAREN.search(header[:k])
                if match is None or match.group(1) in KEYWORDS:
                    return None
                # a bare call like FOO(x) { } has nothing in front of the name
                if not header[:match.start()].strip():
                    return None
                return match.group(1)
    return None


def scan_functions(text, file):
    """Yields (name, start, brace, end) offsets for each definition in one file."""
    masked = mask_source(text, file)
    boundary = 0
    depth = 0
    open_at = None
    found = []
    for i, ch in enumerate(masked):
        if ch == "{":
            if depth == 0:
                open_at = i
            depth += 1
        elif ch == "}":
            if depth == 0:
                raise ParseFailure(file, _position(text, i)[0], "unbalanced '}'")
            depth -= 1
            if depth == 0:
                header = masked[boundary:open_at]
                name = _function_name(header)
                if name is not None:
                    start = boundary + (len(header) - len(header.lstrip()))
                    found.append((name, start, open_at, i + 1))
                boundary = i + 1
        elif ch == ";" and depth == 0:
            boundary = i + 1
    if depth != 0:
        raise ParseFailure(file, _position(text, open_at)[0], "unbalanced '{'")
    return masked, found


def _c_files(source_dir):
    return sorted(p for p in Path(source_dir).rglob("*.c") if p.is_file())


def extract_functions(source_dir):
    """Returns one FunctionRecord per top-level function definition under source_dir."""
    source_dir = Path(source_dir)
    raw = []
    seen = {}
    for path in _c_files(source_dir):
        text = path.read_text(encoding="utf-8", errors="surrogateescape")
        masked, found = scan_functions(text, path)
        for name, start, brace, end in found:
            line = _position(text, start)[0]
            if name in seen:
                raise ParseFailure(path, line, f"function '{name}' is also defined in {seen[name]}")
            seen[name] = path
            calls = {m.group(1) for m in CALL_PATTERN.finditer(masked[brace:end])} - KEYWORDS
            raw.append((name, path, text, start, end, calls))

    if not raw:
        raise NoFunctionsFound(source_dir)

    defined = set(seen)
    records = []
    for name, path, text, start, end, calls in raw:
        records.append(FunctionRecord(
            name=name,
            file=path,
            span=(_position(text, start), _position(text, end - 1)),
            body=text[start:end],
            callees=frozenset(calls & defined),
            offsets=(start, end),
        ))
    logger.info("Extracted %d functions from %s", len(records), source_dir)
    return records


def build_call_graph(functions):
    """Edges are lexical call sites between defined functions, self-calls included."""
    nodes = tuple(sorted(f.name for f in functions))
    edges = tuple(sorted((f.name, callee) for f in functions for callee in f.callees))
    return CallGraph(nodes=nodes, edges=edges)


def break_cycles(graph):
    """Removes back edges found by DFS from the lexicographically first node until acyclic."""
    g = graph.digraph()
    removed = list(graph.removed_edges)
    while True:
        try:
            cycle = nx.find_cycle(g, source=sorted(g.nodes))
        except nx.NetworkXNoCycle:
            break
        # the last edge of the reported cycle is the back edge that closed it
        back = tuple(cycle[-1][:2])
        g.remove_edge(*back)
        removed.append(back)
        logger.debug("Removed call edge %s -> %s to break a cycle", *back)
    return CallGraph(nodes=graph.nodes, edges=graph.edges, removed_edges=tuple(removed))


def approximation_order(graph):
    """Callees before callers, each dependency level sorted by name."""
    g = graph.digraph()
    try:
        cycle = nx.find_cycle(g)
        raise CycleRemains(tuple(cycle[0][:2]))
    except nx.NetworkXNoCycle:
        pass
    order = []
    for generation in nx.topological_generations(g.reverse(copy=True)):
        order.extend(sorted(generation))
    return order


def analyze(source_dir):
    """extract -> build -> break -> order in one call, returns (functions, graph)."""
    functions = extract_functions(source_dir)
    graph = break_cycles(build_call_graph(functions))
    order = approximation_order(graph)
    graph = CallGraph(nodes=graph.nodes, edges=graph.edges,
                      removed_edges=graph.removed_edges, order=tuple(order))
    return functions, graph
