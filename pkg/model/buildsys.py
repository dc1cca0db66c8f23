""" Conversation 3 and everything that touches make or a built binary """
from dataclasses import dataclass
from pathlib import Path
import logging
import os
import shutil
import subprocess
import tempfile

from __init__ import config
from model.approximator import PatchStatus
from model.errors import ToolchainMissing, SpawnFailure, ValidationDiscard, TypeMismatch
from model.instrument import read_work_units
from model.metrics import parse_output
from model.llm import send, start_conversation, extract_json, SchemaId
from model.prompts import TemplateId, render

logger = logging.getLogger(__name__)

BINARY = "main"
RUNS_DIR = "runs"
LOG_TAIL = 6000


@dataclass(frozen=True)
class BuildResult:
    ok: bool
    log: str
    binary: Path = None
    attempts: int = 1

    def read(self):
        return {"ok": self.ok, "binary": str(self.binary) if self.binary else None,
                "attempts": self.attempts, "log": self.log}


@dataclass(frozen=True)
class RunResult:
    exit_status: int
    stdout: str
    stderr: str
    output_file: Path = None
    work_units: int = None
    wall_timeout_hit: bool = False
    run_dir: Path = None

    def output_bytes(self):
        return Path(self.output_file).read_bytes() if self.output_file else None

    def failure(self, output_type=None):
        """Why this run counts as a runtime failure, or None"""
        if self.wall_timeout_hit:
            return "timed out"
        if self.exit_status < 0:
            return f"killed by signal {-self.exit_status}"
        if self.exit_status != 0:
            return f"exit status {self.exit_status}"
        if self.output_file is None:
            return "no output file"
        if output_type is not None:
            try:
                parsed = parse_output(self.output_bytes(), output_type)
            except TypeMismatch as e:
                return f"unparseable output ({e.message})"
            empty = not parsed.split() if isinstance(parsed, str) else getattr(parsed, "pixels", parsed).size == 0
            if empty:
                return "empty output"
        return None


@dataclass(frozen=True)
class SafeInterval:
    knob: str
    interval: tuple

    def read(self):
        return {"knob": self.knob, "interval": list(self.interval)}


""" Makefile conversation """

def start_makefile_conversation(provider):
    return start_conversation(render(TemplateId.CONV3_SYSTEM), provider, conversation_id="conv3")


def generate_makefile(conv3, files):
    response = send(conv3, render(TemplateId.CONV3_MAKEFILE, files_list=list(files)))
    return extract_json(response, SchemaId.MAKEFILE)


def write_makefile(workdir, text):
    path = Path(workdir) / "Makefile"
    path.write_text(text, encoding="utf-8")
    return path


def _require(tool):
    if shutil.which(tool) is None:
        raise ToolchainMissing(tool)


def compile(workdir, max_attempts=None, conv3=None, timeout=None):
    """
    Runs `make -B main` in workdir.

    With conv3 each failed attempt sends the log back and writes the revised
    Makefile before trying again; without it a failure is final.
    """
    max_attempts = config['COMPILE_ATTEMPTS'] if max_attempts is None else max_attempts
    timeout = timeout or config['BUILD_TIMEOUT']
    make = config['MAKE']
    _require(make)
    _require(config['CC'])
    workdir = Path(workdir)

    log = ""
    for attempt in range(1, max_attempts + 1):
        try:
            proc = subprocess.run([make, "-B", BINARY], cwd=workdir, capture_output=True,
                                  text=True, errors="replace", timeout=timeout)
            log = proc.stdout + proc.stderr
            returncode = proc.returncode
        except subprocess.TimeoutExpired as e:
            log = f"make timed out after {timeout}s\n{e.stdout or ''}{e.stderr or ''}"
            returncode = None
        except OSError as e:
            raise SpawnFailure(f"Cannot run {make}: {e}")

        binary = workdir / BINARY
        if returncode == 0 and binary.is_file() and os.access(binary, os.X_OK):
            logger.debug("Built %s on attempt %d", workdir, attempt)
            return BuildResult(ok=True, log=log, binary=binary, attempts=attempt)

        logger.debug("Build attempt %d in %s failed:\n%s", attempt, workdir, log[-LOG_TAIL:])
        if conv3 is None or attempt == max_attempts:
            break
        reply = send(conv3, render(TemplateId.CONV3_REPAIR, build_log=log[-LOG_TAIL:]))
        write_makefile(workdir, extract_json(reply, SchemaId.MAKEFILE))
    logger.warning("Build in %s failed after %d attempt(s)", workdir, attempt)
    return BuildResult(ok=False, log=log, binary=None, attempts=attempt)


def run(binary, input_trace, timeout=None, output_path="output.txt"):
    """Runs `binary <input>` in a fresh directory next to the binary and collects what it left behind"""
    timeout = timeout or config['RUN_TIMEOUT']
    binary = Path(binary).resolve()
    input_trace = Path(input_trace)
    runs = binary.parent / RUNS_DIR
    runs.mkdir(exist_ok=True)
    run_dir = Path(tempfile.mkdtemp(prefix="run-", dir=runs))
    shutil.copy(input_trace, run_dir / input_trace.name)

    timed_out = False
    try:
        proc = subprocess.run([str(binary), input_trace.name], cwd=run_dir, capture_output=True,
                              text=True, errors="replace", timeout=timeout)
        status, stdout, stderr = proc.returncode, proc.stdout, proc.stderr
    except subprocess.TimeoutExpired as e:
        timed_out = True
        status = -9
        stdout = e.stdout.decode(errors="replace") if isinstance(e.stdout, bytes) else (e.stdout or "")
        stderr = e.stderr.decode(errors="replace") if isinstance(e.stderr, bytes) else (e.stderr or "")
    except OSError as e:
        raise SpawnFailure(f"Cannot run {binary}: {e}")

    output_file = run_dir / output_path
    return RunResult(
        exit_status=status,
        stdout=stdout,
        stderr=stderr,
        output_file=output_file if output_file.is_file() else None,
        work_units=read_work_units(run_dir),
        wall_timeout_hit=timed_out,
        run_dir=run_dir,
    )


""" Knob range validation """

def _midpoint(a, b, kind):
    if kind == "Integer":
        return (a + b) // 2
    return (a + b) / 2.0


def bisection_points(lo, hi, kind, depth):
    """Both bounds, then breadth-first midpoints down to depth levels"""
    points = [lo, hi]
    level = [(lo, hi)]
    for _ in range(depth):
        following = []
        for a, b in level:
            mid = _midpoint(a, b, kind)
            if mid in (a, b):
                continue
            points.append(mid)
            following.extend([(a, mid), (mid, b)])
        level = following
    return points


def bisect_safe_interval(lo, hi, kind, depth, passes):
    """
    Widest run of consecutive passing points among those tested.

    passes(value) -> bool is called once per tested point. Returns
    ((lo, hi) or None, {point: passed}).
    """
    outcome = {}
    for point in bisection_points(lo, hi, kind, depth):
        if point not in outcome:
            outcome[point] = bool(passes(point))

    best = None
    run_start = None
    ordered = sorted(outcome)
    for k, point in enumerate(ordered):
        if outcome[point]:
            if run_start is None:
                run_start = point
            end_of_run = k == len(ordered) - 1 or not outcome[ordered[k + 1]]
            if end_of_run:
                if best is None or point - run_start > best[1] - best[0]:
                    best = (run_start, point)
                run_start = None
    return best, outcome


def run_passes(binary, inputs, output_spec, timeout=None):
    '''True when the binary runs cleanly on every input'''
    for input_trace in inputs:
        result = run(binary, input_trace, timeout=timeout, output_path=output_spec.path)
        reason = result.failure(output_spec.type)
        shutil.rmtree(result.run_dir, ignore_errors=True)
        if reason is not None:
            logger.debug("%s on %s: %s", binary, input_trace, reason)
            return False
    return True


def validate_knob_ranges(patch, workspace, inputs, output_spec, depth=None, timeout=None):
    """
    Binary traversal of each knob's range with the other knobs at their defaults.

    Narrows patch.knobs to the safe intervals and marks it validated. A knob
    with no passing point discards the patch.
    """
    depth = config['BISECTION_DEPTH'] if depth is None else depth
    defaults = patch.defaults()
    safe = {}

    for spec in patch.knobs:
        def passes(value, name=spec.name):
            values = {**defaults, name: value}
            workspace.replace_function(patch.function, patch.code_for(values))
            build = compile(workspace.root, max_attempts=1)
            return build.ok and run_passes(build.binary, inputs, output_spec, timeout)

        interval, outcome = bisect_safe_interval(spec.lo, spec.hi, spec.increment_kind, depth, passes)
        logger.info("%s.%s tested %s", patch.function, spec.name,
                    {k: ("ok" if v else "fail") for k, v in sorted(outcome.items())})
        if interval is None:
            workspace.replace_function(patch.function, patch.apx_code)
            patch.status = PatchStatus.DISCARDED
            raise ValidationDiscard(f"{patch.function}.{spec.name}")
        safe[spec.name] = SafeInterval(spec.name, interval)

    workspace.replace_function(patch.function, patch.apx_code)
    patch.knobs = patch.narrowed({name: s.interval for name, s in safe.items()}).knobs
    patch.status = PatchStatus.VALIDATED
    return safe
