""" Work-unit instrumentation.

Rewrites a workspace so the program counts one work unit per function entry
and per loop-condition evaluation, and writes the total to workunits.txt in
its working directory when it exits. The counter never touches program
output, so an instrumented run doubles as the accuracy run.
"""
from pathlib import Path
import logging
import re

from model.codegraph import scan_functions

logger = logging.getLogger(__name__)

COUNTER = "checkmate_work_units"
WORK_UNITS_FILE = "workunits.txt"
LOOP_KEYWORD = re.compile(r"\b(for|while)\s*\(")

EXTERN = f"extern unsigned long long {COUNTER};\n"
RUNTIME = f"""#include <stdio.h>
#include <stdlib.h>
unsigned long long {COUNTER} = 0;
static void checkmate_dump_work_units(void)
{{
    FILE *f = fopen("{WORK_UNITS_FILE}", "w");
    if (f) {{
        fprintf(f, "%llu\\n", {COUNTER});
        fclose(f);
    }}
}}
"""


def _matching_paren(masked, open_at):
    depth = 0
    for k in range(open_at, len(masked)):
        if masked[k] == "(":
            depth += 1
        elif masked[k] == ")":
            depth -= 1
            if depth == 0:
                return k
    return None


def _condition_span(masked, keyword, open_at, close_at):
    '''(start, end) of the controlling expression inside the loop parentheses'''
    if keyword == "while":
        return open_at + 1, close_at
    depth = 0
    semicolons = []
    for k in range(open_at + 1, close_at):
        ch = masked[k]
        if ch in "([{":
            depth += 1
        elif ch in ")]}":
            depth -= 1
        elif ch == ";" and depth == 0:
            semicolons.append(k)
    if len(semicolons) != 2:
        return None
    return semicolons[0] + 1, semicolons[1]


def instrument_source(text, file="<source>"):
    """Returns (instrumented text, defines_main)"""
    masked, found = scan_functions(text, file)
    inserts = []
    defines_main = False
    for name, start, brace, end in found:
        entry = f" {COUNTER}++;"
        if name == "main":
            defines_main = True
            entry += " atexit(checkmate_dump_work_units);"
        inserts.append((brace + 1, entry))

        for match in LOOP_KEYWORD.finditer(masked, brace, end):
            open_at = match.end() - 1
            close_at = _matching_paren(masked, open_at)
            if close_at is None:
                continue
            span = _condition_span(masked, match.group(1), open_at, close_at)
            if span is None:
                continue
            cond_start, cond_end = span
            if not masked[cond_start:cond_end].strip():
                inserts.append((cond_start, f" ({COUNTER}++, 1)"))
            else:
                inserts.append((cond_start, f"({COUNTER}++, ("))
                inserts.append((cond_end, "))"))

    out = text
    for offset, snippet in sorted(inserts, key=lambda item: item[0], reverse=True):
        out = out[:offset] + snippet + out[offset:]
    header = RUNTIME if defines_main else EXTERN
    return header + out, defines_main


def instrument_workspace(workspace):
    """Rewrites every C file of workspace in place, exactly one file must define main"""
    mains = []
    for name in workspace.c_files():
        path = Path(workspace.root) / name
        text = path.read_text(encoding="utf-8", errors="surrogateescape")
        rewritten, defines_main = instrument_source(text, path)
        path.write_text(rewritten, encoding="utf-8", errors="surrogateescape")
        if defines_main:
            mains.append(name)
    logger.debug("Instrumented %s, main in %s", workspace.root, mains)
    return mains


def read_work_units(run_dir):
    path = Path(run_dir) / WORK_UNITS_FILE
    try:
        return int(path.read_text().strip())
    except (OSError, ValueError):
        return None

