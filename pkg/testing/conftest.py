import json
import shutil

import numpy as np
import pytest

# A small smoothing program: clamp and load are leaves, filter calls clamp, main calls load and filter
PROGRAM = r'''#include <stdio.h>
#include <stdlib.h>

#define MAX_VALUES 4096

static double values[MAX_VALUES];
static double smoothed[MAX_VALUES];

int clamp(int i, int n)
{
    if (i < 0)
        return 0;
    if (i >= n)
        return n - 1;
    return i;
}

int load(const char *path)
{
    FILE *f = fopen(path, "r");
    int n = 0;
    if (!f)
        return -1;
    while (n < MAX_VALUES && fscanf(f, "%lf", &values[n]) == 1)
        n++;
    fclose(f);
    return n;
}

void filter(int n)
{
    int i, k;
    for (i = 0; i < n; i++) {
        double sum = 0.0;
        for (k = -3; k <= 3; k++)
            sum += values[clamp(i + k, n)];
        smoothed[i] = sum / 7.0;
    }
}

int main(int argc, char **argv)
{
    int i, n;
    FILE *out;
    if (argc < 2)
        return 2;
    n = load(argv[1]);
    if (n <= 0)
        return 3;
    filter(n);
    out = fopen("output.txt", "w");
    if (!out)
        return 4;
    for (i = 0; i < n; i++)
        fprintf(out, "%.6f\n", smoothed[i]);
    fclose(out);
    return 0;
}
'''

# Loop perforation of filter: every stride-th window is computed and held
FILTER_APX = r'''void filter(int n)
{
    /* Knob Variables Declaration Start */
    int stride = 1;
    /* Knob Variables Declaration End */
    int i, k;
    for (i = 0; i < n; i += stride) {
        double sum = 0.0;
        for (k = -3; k <= 3; k++)
            sum += values[clamp(i + k, n)];
        for (k = i; k < i + stride && k < n; k++)
            smoothed[k] = sum / 7.0;
    }
}'''

# Same perforation with the stride fixed, the knob block left empty
KNOB_FREE_APX = FILTER_APX.replace("    int stride = 1;\n", "").replace("int i, k;", "int i, k, stride = 2;")

MAKEFILE = """CC=gcc
CFLAGS=-O1

main: program.o
\t$(CC) $(CFLAGS) -o main program.o

program.o: program.c
\t$(CC) $(CFLAGS) -c program.c

clean:
\trm -f *.o main
"""

FUNCTIONS = ["clamp", "load", "filter", "main"]

needs_toolchain = pytest.mark.skipif(
    shutil.which("gcc") is None or shutil.which("make") is None,
    reason="gcc and make are required",
)


def approximation_reply(apx_code=FILTER_APX, ranges=None, increments=None, variables=None):
    body = {
        "apx_code": apx_code,
        "knob_variables": variables if variables is not None else ["stride"],
        "knob_ranges": ranges if ranges is not None else [{"stride": [1, 8]}],
        "knob_increments": increments if increments is not None else [{"stride": "Integer"}],
    }
    return "Here is the result:\n```json\n" + json.dumps(body, indent=2) + "\n```"


def selection_reply(decisions):
    lines = []
    for name, decision in decisions.items():
        lines.append(f"# {name}\n\nReasoning about {name}.\n")
    lines.append("# List of functions\n" + json.dumps(decisions, indent=2))
    return "\n".join(lines)


def conv1_replies(decisions=None):
    decisions = decisions or {"clamp": "do_not_approximate", "load": "do_not_approximate",
                              "filter": "approximate", "main": "do_not_approximate"}
    return ([
        "The app smooths a series of numbers with a seven-tap moving average.\n\n"
        "- clamp: keeps an index inside the array\n"
        "- load: reads the input values\n"
        "- filter: averages each window\n"
        "- main: drives the program and writes output.txt"
    ] + [f"{name} is discussed here." for name in FUNCTIONS]
        + [selection_reply(decisions)])


def conv2_replies():
    return [
        "Loop perforation of the outer loop in filter, with stride as a knob variable.",
        "Applied loop perforation to filter.",
        approximation_reply(),
    ]


def full_script():
    '''Replies in the order the pipeline asks: selection, makefile, approximation'''
    return conv1_replies() + [MAKEFILE] + conv2_replies()


@pytest.fixture
def source_dir(tmp_path):
    src = tmp_path / "src"
    src.mkdir()
    (src / "program.c").write_text(PROGRAM)
    return src


@pytest.fixture
def input_trace(tmp_path):
    path = tmp_path / "input.txt"
    samples = np.sin(np.arange(200) * 2 * np.pi / 100) * 50 + 100
    path.write_text("\n".join(f"{v:.4f}" for v in samples) + "\n")
    return path


@pytest.fixture
def energy_trace(tmp_path):
    path = tmp_path / "constant.csv"
    times = np.arange(5000) * 1e-4
    rows = ["time_s,voltage_v"] + [f"{t:.4f},3.3" for t in times]
    path.write_text("\n".join(rows) + "\n")
    return path


@pytest.fixture
def manifest_body(source_dir, input_trace, energy_trace):
    return {
        "source_dir": source_dir.name,
        "input_traces": [input_trace.name],
        "energy_traces": [energy_trace.name],
        "accuracy_class": "normalized_r_squared",
        "error_bound": 0.3,
        "platform": "msp430-class",
        "capacitor_uF": 10,
        "output_spec": {"path": "output.txt", "type": "numeric"},
    }


@pytest.fixture
def manifest_path(tmp_path, manifest_body):
    path = tmp_path / "manifest.json"
    path.write_text(json.dumps(manifest_body))
    return path


@pytest.fixture
def script_path(tmp_path):
    path = tmp_path / "script.json"
    path.write_text(json.dumps(full_script()))
    return path
