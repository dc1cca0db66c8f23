""" One-click orchestration: manifest to tuned, approximated codebase plus report """
from dataclasses import dataclass, field
from datetime import datetime, timezone
from importlib import metadata
from pathlib import Path
import json
import logging
import platform
import shutil

from __init__ import config
from model import approximator, buildsys, codegraph
from model.approximator import PatchStatus
from model.errors import (
    BaselineFailure, BuildError, EvaluatorFailure, IncompleteBaseline, KnobProtocolViolation,
    NoJsonFound, NonProgressive, SchemaMismatch, AlternativesExhausted, ValidationDiscard,
)
from model.instrument import instrument_workspace
from model.llm import start_conversation
from model.manifest import load_manifest
from model.metrics import TraceMetrics, accuracy, aggregate, c_r, deviation, objective, reduction
from model.prompts import TemplateId, render
from model.simulator import SimulationCache, cycles_for, load_trace
from model.tuner import TuneResult, build_space, export_history, tune
from model.workspace import Workspace, source_hash

logger = logging.getLogger(__name__)

REPORT_FILE = "report.json"
HISTORY_FILE = "history.csv"
PACKAGES = ("numpy", "pandas", "scipy", "scikit-learn", "networkx", "requests", "click")


def trace_id(input_trace, energy_trace):
    return f"{Path(input_trace).name}@{energy_trace.id}"


def tool_versions():
    versions = {"python": platform.python_version()}
    for name in PACKAGES:
        try:
            versions[name] = metadata.version(name)
        except metadata.PackageNotFoundError:
            versions[name] = None
    return versions


@dataclass
class FunctionOutcome:
    status: PatchStatus
    attempts: int = 0
    knobs: list = field(default_factory=list)
    failures: list = field(default_factory=list)

    def read(self):
        return {"status": self.status.value, "attempts": self.attempts,
                "knobs": [k.read() for k in self.knobs], "failures": list(self.failures)}


@dataclass
class RunReport:
    """Everything a run decided, in the shape written to report.json"""
    status: str
    manifest: dict
    error_bound: float
    selection: dict
    functions: dict
    baseline: dict
    best_values: dict
    e_m: float
    c_r: float
    objective: float
    capped: bool
    per_trace: list
    history_path: str
    budget_used: int
    seeds: dict
    tool_versions: dict
    metadata: dict = field(default_factory=dict)
    best_rejected: dict = None

    @property
    def reduction(self):
        return reduction(self.c_r)

    def read(self):
        return {
            "status": self.status,
            "manifest": self.manifest,
            "error_bound": self.error_bound,
            "selection": self.selection,
            "functions": {name: outcome.read() for name, outcome in self.functions.items()},
            "baseline": self.baseline,
            "best": {
                "values": self.best_values,
                "e_m": self.e_m,
                "c_r": self.c_r,
                "objective": self.objective,
                "capped": self.capped,
                "reduction_percent": self.reduction,
                "per_trace": self.per_trace,
            },
            "best_rejected": self.best_rejected,
            "history": self.history_path,
            "budget_used": self.budget_used,
            "seeds": self.seeds,
            "tool_versions": self.tool_versions,
            "metadata": self.metadata,
        }

    def __str__(self):
        return json.dumps(self.read())


class Pipeline:
    """
    Runs the stages in order: call graph, selection conversation, makefile
    conversation and baseline, approximation conversation per function,
    tuning, final codebase and report.
    """

    def __init__(self, manifest, provider, out_dir, iterations=None, error_bound=None, seed=None,
                 keep_workdirs=False, timeout=None):
        self.manifest = manifest
        self.provider = provider
        self.out = Path(out_dir)
        self.iterations = config['TUNE_ITERATIONS'] if iterations is None else iterations
        self.e_b = manifest.error_bound if error_bound is None else error_bound
        self.seed = config['SEED'] if seed is None else seed
        self.keep_workdirs = keep_workdirs
        self.timeout = timeout or config['RUN_TIMEOUT']

        self.artifacts = self.out / "artifacts"
        self.work = self.out / "work"
        self.cache = SimulationCache()
        self.traces = [load_trace(p) for p in manifest.energy_traces]
        self.conversations = {}
        self.reference = {}
        self.c_o = {}
        self.evaluations = {}
        self.base = None
        self.conv3 = None

    """ Stages """

    def _save_conversation(self, conv):
        self.conversations[conv.id] = conv
        conv.save(self.artifacts / "conversations" / f"{conv.id}.json")

    def analyze(self):
        functions, graph = codegraph.analyze(self.manifest.source_dir)
        (self.artifacts / "fcg.dot").write_text(graph.to_dot(), encoding="utf-8")
        logger.info("Approximation order: %s (removed edges %s)", list(graph.order), list(graph.removed_edges))
        return functions, graph

    def select(self, order):
        conv1 = start_conversation(render(TemplateId.CONV1_SYSTEM), self.provider, conversation_id="conv1")
        try:
            summary = approximator.summarize_codebase(conv1, self.base.codebase_text(), order)
            selection = approximator.select_functions(conv1, order)
        finally:
            self._save_conversation(conv1)
        return summary, selection

    def build_original(self):
        """Makefile conversation, then the plain build of the original code"""
        self.conv3 = buildsys.start_makefile_conversation(self.provider)
        try:
            makefile = buildsys.generate_makefile(self.conv3, self.base.source_files())
            buildsys.write_makefile(self.base.root, makefile)
            build = buildsys.compile(self.base.root, conv3=self.conv3)
        finally:
            self._save_conversation(self.conv3)
        if not build.ok:
            (self.artifacts / "baseline-build.log").write_text(build.log, encoding="utf-8")
            raise BaselineFailure(f"Original codebase does not build after {build.attempts} attempt(s)")
        return build

    def baseline(self):
        """Reference outputs and c_o for every (input, energy trace) pair, from the instrumented original"""
        instrumented = self.base.clone(self.work / "original-instrumented")
        instrument_workspace(instrumented)
        build = buildsys.compile(instrumented.root, max_attempts=1)
        if not build.ok:
            raise BaselineFailure("Instrumented original does not build:\n" + build.log[-2000:])

        for input_trace in self.manifest.input_traces:
            result = buildsys.run(build.binary, input_trace, timeout=self.timeout,
                                  output_path=self.manifest.output_spec.path)
            reason = result.failure(self.manifest.output_spec.type)
            if reason is not None or not result.work_units:
                raise BaselineFailure(f"Original program fails on {Path(input_trace).name}: {reason or 'no work units'}")
            self.reference[str(input_trace)] = result.output_bytes()
            for trace in self.traces:
                tid = trace_id(input_trace, trace)
                try:
                    sim = cycles_for(build.binary, input_trace, trace, self.manifest, run_result=result, cache=self.cache)
                except NonProgressive:
                    raise IncompleteBaseline(tid)
                if not sim.completed:
                    raise IncompleteBaseline(tid)
                self.c_o[tid] = sim.power_cycles
                logger.info("Baseline %s: %d power cycles, %d work units", tid, sim.power_cycles, result.work_units)
        return dict(self.c_o)

    def approximate_function(self, conv2, record, current):
        """Tries up to the alternatives budget, returns (outcome, patch or None, workspace)"""
        outcome = FunctionOutcome(status=PatchStatus.PROPOSED)
        patches_dir = self.artifacts / "patches"
        patches_dir.mkdir(parents=True, exist_ok=True)
        plan = approximator.plan_approximations(conv2, record, self.manifest.platform)
        attempt = 1
        while True:
            outcome.attempts = attempt
            patch = None
            try:
                patch = approximator.apply_approximation(conv2, record, plan, attempt=attempt)
                trial = current.clone(self.work / f"{record.name}-{attempt}")
                approximator.integrate_patch(trial, patch)
                build = buildsys.compile(trial.root, conv3=self.conv3)
                if not build.ok:
                    raise BuildError("Approximated code does not build:\n" + build.log[-2000:])
                patch.status = PatchStatus.COMPILED
                buildsys.validate_knob_ranges(patch, trial, self.manifest.input_traces,
                                              self.manifest.output_spec, timeout=self.timeout)
                (patches_dir / f"{record.name}-{attempt}.json").write_text(str(patch), encoding="utf-8")
                outcome.status = PatchStatus.VALIDATED
                outcome.knobs = list(patch.knobs)
                return outcome, patch, trial
            except (NoJsonFound, SchemaMismatch, KnobProtocolViolation, BuildError, ValidationDiscard) as e:
                if patch is not None:
                    patch.status = PatchStatus.DISCARDED
                    (patches_dir / f"{record.name}-{attempt}.json").write_text(str(patch), encoding="utf-8")
                outcome.failures.append(e.message)
                logger.warning("%s attempt %d discarded: %s", record.name, attempt, e.message.splitlines()[0])
            try:
                plan = approximator.next_alternative(conv2, record, outcome.failures[-1], attempt)
            except AlternativesExhausted as e:
                logger.warning(e.message)
                outcome.status = PatchStatus.KEPT_ORIGINAL
                return outcome, None, current
            attempt += 1

    def approximate(self, summary, selected, functions):
        conv2 = approximator.start_approximation_conversation(self.provider, summary)
        outcomes, patches = {}, []
        current = self.base
        try:
            for name in selected:
                record = current.functions().get(name) or functions[name]
                outcome, patch, current = self.approximate_function(conv2, record, current)
                outcomes[name] = outcome
                if patch is not None:
                    patches.append(patch)
        finally:
            self._save_conversation(conv2)
            self._save_conversation(self.conv3)
        return outcomes, patches

    """ Tuning """

    def _split(self, patches, values):
        '''{function: {knob: value}} from qualified knob names'''
        per_patch = {p.function: {} for p in patches}
        for qualified, value in values.items():
            function, knob = qualified.rsplit(".", 1)
            per_patch[function][knob] = value
        return per_patch

    def candidate(self, patches, values, dest):
        ws = self.base.clone(dest)
        per_patch = self._split(patches, values)
        for patch in patches:
            approximator.integrate_patch(ws, patch, per_patch[patch.function])
        return ws

    def evaluate(self, patches, values):
        """Builds and runs one knob setting, returns the aggregated MetricReport"""
        ws = self.candidate(patches, values, self.work / "eval")
        instrument_workspace(ws)
        build = buildsys.compile(ws.root, max_attempts=1)
        if not build.ok:
            raise EvaluatorFailure(values, "build failed")

        per_trace = []
        for input_trace in self.manifest.input_traces:
            result = buildsys.run(build.binary, input_trace, timeout=self.timeout,
                                  output_path=self.manifest.output_spec.path)
            reason = result.failure(self.manifest.output_spec.type)
            if reason is not None or not result.work_units:
                raise EvaluatorFailure(values, reason or "no work units")
            score = accuracy(self.reference[str(input_trace)], result.output_bytes(), self.manifest.accuracy_class)
            e_m = deviation(score)
            for trace in self.traces:
                tid = trace_id(input_trace, trace)
                try:
                    sim = cycles_for(build.binary, input_trace, trace, self.manifest, run_result=result, cache=self.cache)
                except NonProgressive:
                    per_trace.append(TraceMetrics(tid, 1.0, 1.0, completed=False))
                    continue
                per_trace.append(TraceMetrics(tid, e_m, c_r(self.c_o[tid], sim.power_cycles), completed=sim.completed))

        report = aggregate(per_trace, self.e_b)
        self.evaluations[tuple(sorted(values.items()))] = report
        return report

    def tune(self, patches, safe):
        knobs = [k for p in patches for k in p.knobs]
        space = build_space(knobs, safe)
        logger.info("Tuning %s for %d iterations", space.names, self.iterations)

        def evaluator(values):
            report = self.evaluate(patches, values)
            return report.e_m, report.c_r

        return tune(evaluator, space, budget=self.iterations, e_b=self.e_b, seed=self.seed)

    """ Whole run """

    def run(self):
        started = datetime.now(timezone.utc).isoformat()
        self.artifacts.mkdir(parents=True, exist_ok=True)
        original_hash = source_hash(self.manifest.source_dir)

        functions, graph = self.analyze()
        by_name = {f.name: f for f in functions}
        self.base = Workspace.create(self.manifest.source_dir, self.work / "original")

        summary, selection = self.select(list(graph.order))
        self.build_original()
        self.baseline()

        selected = selection.selected(graph.order)
        outcomes, patches = {}, []
        if selected:
            outcomes, patches = self.approximate(summary, selected, by_name)

        history_path = self.out / HISTORY_FILE
        result = None
        if patches:
            safe = {f"{p.function}.{k.name}": k.range for p in patches for k in p.knobs}
            result = self.tune(patches, safe)
            export_history(result, history_path)
        else:
            logger.info("No validated approximation, keeping the original program")
            export_history(TuneResult(best=None, history=(), budget_used=0, seed=self.seed), history_path)

        report = self._report(selection, outcomes, patches, result, started)
        self._write_final(patches, report)

        if source_hash(self.manifest.source_dir) != original_hash:
            raise BuildError(f"{self.manifest.source_dir} changed during the run")
        if not self.keep_workdirs:
            shutil.rmtree(self.work, ignore_errors=True)
        return report

    def _report(self, selection, outcomes, patches, result, started):
        approximated = (result is not None and result.best is not None and not result.best.capped
                        and not result.best.failed and result.best.objective < 1.0)
        rejected = None
        if approximated:
            best = result.best
            values, e_m, c_ratio = dict(best.values), best.e_m, best.c_r
            evaluation = self.evaluations.get(tuple(sorted(best.values.items())))
            per_trace = [t.read() for t in evaluation.per_trace] if evaluation else []
        else:
            # numbers describe the delivered original, the tuner's pick is kept aside
            values, e_m, c_ratio, per_trace = {}, 0.0, 1.0, []
            if result is not None and result.best is not None:
                rejected = result.best.read()
        value, capped = objective(e_m, c_ratio, self.e_b)

        functions = {}
        for name, decision in selection.decisions.items():
            if decision == "approximate":
                functions[name] = outcomes.get(name, FunctionOutcome(PatchStatus.KEPT_ORIGINAL))

        return RunReport(
            status="approximated" if approximated else "kept-original",
            manifest=self.manifest.read(),
            error_bound=self.e_b,
            selection=selection.read(),
            functions=functions,
            baseline=dict(self.c_o),
            best_values=values,
            e_m=e_m,
            c_r=c_ratio,
            objective=value,
            capped=capped,
            per_trace=per_trace,
            history_path=HISTORY_FILE,
            budget_used=result.budget_used if result else 0,
            seeds={"tuner": self.seed},
            tool_versions=tool_versions(),
            metadata={"started_at": started, "finished_at": datetime.now(timezone.utc).isoformat()},
            best_rejected=rejected,
        )

    def _write_final(self, patches, report):
        final = self.out / "approximated"
        if report.status == "approximated":
            self.candidate(patches, report.best_values, final)
        else:
            self.base.clone(final)
        (self.out / REPORT_FILE).write_text(json.dumps(report.read(), indent=2) + "\n", encoding="utf-8")
        logger.info("Report written to %s (%s, reduction %.1f%%)", self.out / REPORT_FILE,
                    report.status, report.reduction)


def run(manifest_path, provider, out_dir, iterations=None, error_bound=None, seed=None,
        keep_workdirs=False):
    """Loads the manifest and runs the whole pipeline, returns the RunReport"""
    manifest = load_manifest(manifest_path)
    return Pipeline(manifest, provider, out_dir, iterations=iterations, error_bound=error_bound,
                    seed=seed, keep_workdirs=keep_workdirs).run()


def baseline(manifest, provider, out_dir, keep_workdirs=False):
    """Makefile conversation, original build and per-trace c_o, without any approximation"""
    pipeline = Pipeline(manifest, provider, out_dir, keep_workdirs=keep_workdirs)
    pipeline.artifacts.mkdir(parents=True, exist_ok=True)
    pipeline.base = Workspace.create(manifest.source_dir, pipeline.work / "original")
    pipeline.build_original()
    c_o = pipeline.baseline()
    if not keep_workdirs:
        shutil.rmtree(pipeline.work, ignore_errors=True)
    return c_o
