import numpy as np
import pytest

from __init__ import config
from model import buildsys
from model.approximator import ApproximationPatch, PatchStatus
from model.buildsys import RunResult, bisect_safe_interval, bisection_points
from model.errors import ToolchainMissing, ValidationDiscard
from model.instrument import instrument_workspace
from model.knobs import KnobSpec
from model.llm import ScriptedProvider
from model.manifest import OutputSpec, OutputType
from model.metrics import parse_output
from model.workspace import Workspace
from conftest import FILTER_APX, MAKEFILE, needs_toolchain

OUTPUT = OutputSpec("output.txt", OutputType.NUMERIC)


""" Bisection """

def test_bisection_points_breadth_first():
    assert bisection_points(20, 100, "Integer", 3) == [20, 100, 60, 40, 80, 30, 50, 70, 90]
    assert bisection_points(0.0, 1.0, "Real", 2) == [0.0, 1.0, 0.5, 0.25, 0.75]
    assert bisection_points(1, 2, "Integer", 3) == [1, 2]


def test_safe_interval_from_threshold():
    interval, outcome = bisect_safe_interval(20, 100, "Integer", 3, lambda v: v >= 40)
    assert interval == (40, 100)
    assert outcome[30] is False
    assert len(outcome) == 9


def test_safe_interval_keeps_first_widest_run():
    interval, _ = bisect_safe_interval(20, 100, "Integer", 3, lambda v: v != 60)
    assert interval == (20, 50)


def test_no_safe_interval():
    interval, outcome = bisect_safe_interval(0.0, 1.0, "Real", 2, lambda v: False)
    assert interval is None
    assert set(outcome) == {0.0, 0.25, 0.5, 0.75, 1.0}


def expected_interval(tested, table):
    '''Safe interval an exhaustive scan predicts at the resolution of the tested points'''
    passing = [p for p in sorted(tested) if table[p]]
    return (passing[0], 100) if passing else None


def test_bisection_agrees_with_exhaustive_scan():
    rng = np.random.default_rng(11)
    tested = bisection_points(20, 100, "Integer", 3)
    for threshold in rng.integers(20, 102, size=20):
        threshold = int(threshold)
        table = {v: v >= threshold for v in range(20, 101)}
        calls = []

        def passes(value):
            calls.append(value)
            return table[value]

        interval, outcome = bisect_safe_interval(20, 100, "Integer", 3, passes)
        assert sorted(calls) == sorted(tested)
        assert outcome == {p: table[p] for p in tested}
        assert interval == expected_interval(tested, table)


def test_run_failure_reasons(tmp_path):
    output = tmp_path / "output.txt"
    output.write_text("1\n2\n")
    assert RunResult(0, "", "", output_file=output).failure("numeric") is None
    assert RunResult(-9, "", "", wall_timeout_hit=True).failure() == "timed out"
    assert RunResult(-11, "", "").failure() == "killed by signal 11"
    assert RunResult(1, "", "").failure() == "exit status 1"
    assert RunResult(0, "", "").failure() == "no output file"
    output.write_text("one\n")
    assert RunResult(0, "", "", output_file=output).failure("numeric").startswith("unparseable")
    output.write_text("")
    assert RunResult(0, "", "", output_file=output).failure("numeric") == "empty output"


def test_toolchain_missing(monkeypatch, tmp_path):
    monkeypatch.setitem(config, "MAKE", "checkmate-no-such-make")
    with pytest.raises(ToolchainMissing):
        buildsys.compile(tmp_path)


""" Building and running """

def workspace_with_makefile(source_dir, tmp_path):
    ws = Workspace.create(source_dir, tmp_path / "ws")
    buildsys.write_makefile(ws.root, MAKEFILE)
    return ws


@needs_toolchain
def test_compile_and_run(source_dir, tmp_path, input_trace):
    ws = workspace_with_makefile(source_dir, tmp_path)
    build = buildsys.compile(ws.root, max_attempts=1)
    assert build.ok and build.attempts == 1
    result = buildsys.run(build.binary, input_trace, timeout=10)
    assert result.failure("numeric") is None
    assert len(parse_output(result.output_bytes(), "numeric")) == 200
    assert result.work_units is None


@needs_toolchain
def test_instrumented_run_counts_work(source_dir, tmp_path, input_trace):
    ws = workspace_with_makefile(source_dir, tmp_path)
    plain = buildsys.run(buildsys.compile(ws.root, max_attempts=1).binary, input_trace)
    instrument_workspace(ws)
    counted = buildsys.run(buildsys.compile(ws.root, max_attempts=1).binary, input_trace)
    assert counted.work_units > 200 * 16
    assert counted.output_bytes() == plain.output_bytes()


@needs_toolchain
def test_makefile_repair(source_dir, tmp_path):
    ws = Workspace.create(source_dir, tmp_path / "ws")
    buildsys.write_makefile(ws.root, "main:\n\tfalse\n")
    provider = ScriptedProvider(["```make\n" + MAKEFILE + "```"])
    conv3 = buildsys.start_makefile_conversation(provider)
    build = buildsys.compile(ws.root, max_attempts=3, conv3=conv3)
    assert build.ok
    assert build.attempts == 2
    assert (ws.root / "Makefile").read_text() == MAKEFILE
    assert "false" in provider.requests[0][-1]["content"]


@needs_toolchain
def test_compile_failure_without_repair(source_dir, tmp_path):
    ws = workspace_with_makefile(source_dir, tmp_path)
    (ws.root / "program.c").write_text("int main(void) { return undefined_name; }\n")
    build = buildsys.compile(ws.root, max_attempts=1)
    assert not build.ok
    assert "undefined_name" in build.log


""" Knob validation """

def patch_for(apx_code):
    return ApproximationPatch(function="filter", apx_code=apx_code,
                              knobs=[KnobSpec("stride", (1, 8), "Integer", "filter")], plan_text="")


def integrated(source_dir, tmp_path, patch):
    ws = workspace_with_makefile(source_dir, tmp_path)
    ws.replace_function("filter", patch.apx_code)
    return ws


@needs_toolchain
def test_validation_keeps_full_range(source_dir, tmp_path, input_trace):
    patch = patch_for(FILTER_APX)
    ws = integrated(source_dir, tmp_path, patch)
    safe = buildsys.validate_knob_ranges(patch, ws, [input_trace], OUTPUT, depth=3, timeout=10)
    assert safe["stride"].interval == (1, 8)
    assert patch.status == PatchStatus.VALIDATED
    assert "int stride = 1;" in (ws.root / "program.c").read_text()


@needs_toolchain
def test_validation_narrows_range(source_dir, tmp_path, input_trace):
    crashing = FILTER_APX.replace("    int i, k;\n", "    int i, k;\n    if (stride > 4)\n        exit(1);\n")
    patch = patch_for(crashing)
    ws = integrated(source_dir, tmp_path, patch)
    safe = buildsys.validate_knob_ranges(patch, ws, [input_trace], OUTPUT, depth=3, timeout=10)
    assert safe["stride"].interval == (1, 4)
    assert patch.knobs[0].range == (1, 4)


@needs_toolchain
def test_validation_discards_patch(source_dir, tmp_path, input_trace):
    crashing = FILTER_APX.replace("    int i, k;\n", "    int i, k;\n    if (stride > 0)\n        exit(1);\n")
    patch = patch_for(crashing)
    ws = integrated(source_dir, tmp_path, patch)
    with pytest.raises(ValidationDiscard) as info:
        buildsys.validate_knob_ranges(patch, ws, [input_trace], OUTPUT, depth=2, timeout=10)
    assert info.value.exit_code == 5
    assert patch.status == PatchStatus.DISCARDED
    assert "int stride = 1;" in (ws.root / "program.c").read_text()


# Fails iff the knob read from its input is below the threshold next to it
THRESHOLD_STUB = r'''#include <stdio.h>

int main(int argc, char **argv)
{
    int knob, threshold;
    FILE *in, *out;
    if (argc < 2 || !(in = fopen(argv[1], "r")))
        return 2;
    if (fscanf(in, "%d %d", &knob, &threshold) != 2)
        return 2;
    fclose(in);
    if (knob < threshold)
        return 1;
    out = fopen("output.txt", "w");
    if (!out)
        return 3;
    fprintf(out, "%d\n", knob);
    fclose(out);
    return 0;
}
'''


@needs_toolchain
def test_validation_matches_exhaustive_runs(tmp_path):
    (tmp_path / "stub").mkdir()
    (tmp_path / "stub" / "program.c").write_text(THRESHOLD_STUB)
    buildsys.write_makefile(tmp_path / "stub", MAKEFILE)
    build = buildsys.compile(tmp_path / "stub", max_attempts=1)
    assert build.ok
    knob_input = tmp_path / "knob.txt"

    def runs_clean(value, threshold):
        knob_input.write_text(f"{value} {threshold}\n")
        return buildsys.run_passes(build.binary, [knob_input], OUTPUT, timeout=10)

    rng = np.random.default_rng(5)
    tested = bisection_points(20, 100, "Integer", 3)
    for threshold in rng.integers(21, 101, size=20):
        threshold = int(threshold)
        table = {v: runs_clean(v, threshold) for v in range(20, 101)}
        interval, outcome = bisect_safe_interval(20, 100, "Integer", 3, lambda v: runs_clean(v, threshold))
        assert outcome == {p: table[p] for p in tested}
        assert interval == expected_interval(tested, table)
    assert not list((build.binary.parent / "runs").iterdir())
