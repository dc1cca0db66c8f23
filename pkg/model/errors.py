""" Error families for the approximation pipeline.

Every error knows the process exit code of its family, so the CLI can surface
the failing stage without inspecting the message.
"""


class CheckmateError(Exception):
    '''Base error, read() returns the same message/code shape the HTTP utilities use'''
    exit_code = 1

    def __init__(self, message, **details):
        super().__init__(message)
        self.message = message
        self.details = details

    def read(self):
        return {
            "message": self.message,
            "code": self.exit_code,
            "error": type(self).__name__,
            **self.details,
        }


""" Manifest family """

class ManifestError(CheckmateError):
    exit_code = 2


class MissingField(ManifestError):
    def __init__(self, name):
        super().__init__(f"Manifest field '{name}' is missing", field=name)
        self.name = name


class InvalidValue(ManifestError):
    def __init__(self, field, reason):
        super().__init__(f"Invalid value for '{field}': {reason}", field=field, reason=reason)
        self.field = field
        self.reason = reason


class IncompatibleAccuracyClass(ManifestError):
    def __init__(self, accuracy_class, output_type):
        super().__init__(f"Accuracy class '{accuracy_class}' cannot score '{output_type}' output",
                         accuracy_class=str(accuracy_class), output_type=str(output_type))


class UnknownPlatform(ManifestError):
    def __init__(self, platform):
        super().__init__(f"Unknown platform '{platform}'", platform=str(platform))


""" LLM family, includes everything decided by parsing LLM replies """

class LlmError(CheckmateError):
    exit_code = 3


class ProviderUnavailable(LlmError):
    pass


class ProviderError(LlmError):
    def __init__(self, status, body):
        super().__init__(f"Provider returned HTTP {status}", status=status, body=body)
        self.status = status
        self.body = body


class RetriesExhausted(LlmError):
    pass


class ScriptExhausted(LlmError):
    def __init__(self):
        super().__init__("Scripted provider has no responses left")


class NoJsonFound(LlmError):
    def __init__(self):
        super().__init__("No JSON object found in the response")


class SchemaMismatch(LlmError):
    def __init__(self, field, reason="missing or malformed"):
        super().__init__(f"Field '{field}' is {reason}", field=field)
        self.field = field


class SelectionFailed(LlmError):
    pass


class KnobProtocolViolation(LlmError):
    def __init__(self, reason):
        super().__init__(f"Knob protocol violation: {reason}", reason=reason)
        self.reason = reason


class UnknownKnob(LlmError):
    def __init__(self, name):
        super().__init__(f"Knob '{name}' is not declared in the knob block", knob=name)
        self.name = name


class AlternativesExhausted(LlmError):
    def __init__(self, function, attempts):
        super().__init__(f"No working approximation for '{function}' after {attempts} attempts",
                         function=function, attempts=attempts)
        self.function = function


""" Build family, includes source scanning """

class BuildError(CheckmateError):
    exit_code = 4


class ParseFailure(BuildError):
    def __init__(self, file, line, reason):
        super().__init__(f"{file}:{line}: {reason}", file=str(file), line=line, reason=reason)
        self.file = file
        self.line = line
        self.reason = reason


class NoFunctionsFound(BuildError):
    def __init__(self, source_dir):
        super().__init__(f"No function definitions found under {source_dir}")


class CycleRemains(BuildError):
    def __init__(self, edge):
        super().__init__(f"Call graph still has a cycle through {edge}")


class SpanDrift(BuildError):
    def __init__(self, function):
        super().__init__(f"Function '{function}' is not where the patch expects it", function=function)
        self.function = function


class ToolchainMissing(BuildError):
    def __init__(self, tool):
        super().__init__(f"'{tool}' is not on PATH", tool=tool)


class SpawnFailure(BuildError):
    pass


class BaselineFailure(BuildError):
    pass


""" Validation family """

class ValidationFailure(CheckmateError):
    exit_code = 5


class ValidationDiscard(ValidationFailure):
    def __init__(self, knob):
        super().__init__(f"Every tested value of knob '{knob}' failed at runtime", knob=knob)
        self.knob = knob


""" Simulation family """

class SimulationError(CheckmateError):
    exit_code = 6


class MalformedTrace(SimulationError):
    def __init__(self, line, reason):
        super().__init__(f"Trace line {line}: {reason}", line=line, reason=reason)
        self.line = line


class NonProgressive(SimulationError):
    def __init__(self, work_done):
        super().__init__(f"Program stalled at {work_done} work units", work_done=work_done)


class InsufficientCapacitor(SimulationError):
    def __init__(self):
        super().__init__("Capacitor never reaches the turn-on threshold")


class IncompleteBaseline(SimulationError):
    def __init__(self, trace_id):
        super().__init__(f"Original program does not finish within trace {trace_id}", trace=trace_id)


""" Tuning family, includes scoring """

class TuningError(CheckmateError):
    exit_code = 7


class TypeMismatch(TuningError):
    pass


class EmptyReference(TuningError):
    def __init__(self):
        super().__init__("Reference output is empty")


class ZeroReference(TuningError):
    def __init__(self):
        super().__init__("Original accuracy is zero, deviation is undefined")


class EmptyList(TuningError):
    def __init__(self):
        super().__init__("Nothing to aggregate")


class EmptySpace(TuningError):
    def __init__(self, knob):
        super().__init__(f"Knob '{knob}' has no values left after validation", knob=knob)


class EvaluatorFailure(TuningError):
    def __init__(self, values, reason):
        super().__init__(f"Evaluation of {values} failed: {reason}", values=dict(values), reason=reason)
        self.values = values
        self.reason = reason


class IoFailure(TuningError):
    pass
