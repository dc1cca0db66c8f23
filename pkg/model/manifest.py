""" Project manifest and platform profiles """
from dataclasses import dataclass, field, replace, fields
from enum import Enum
from pathlib import Path
import json
import logging

from __init__ import config
from model.errors import MissingField, InvalidValue, IncompatibleAccuracyClass, UnknownPlatform

logger = logging.getLogger(__name__)


class OutputType(str, Enum):
    NUMERIC = "numeric"
    TEXT = "text"
    IMAGE = "image"
    BOOLEAN = "boolean"


class AccuracyClass(str, Enum):
    RAW_ABSOLUTE_ERROR = "raw_absolute_error"
    NORMALIZED_R_SQUARED = "normalized_r_squared"
    ONE_MINUS_WER = "one_minus_wer"
    ONE_MINUS_PIXEL_ERROR = "one_minus_pixel_error"
    SSIM = "ssim"
    F1 = "f1"


class Platform(str, Enum):
    MSP430 = "msp430-class"
    CORTEX_M = "cortex-m-class"


# Which accuracy classes can score which output type
ACCURACY_CLASSES = {
    OutputType.NUMERIC: (AccuracyClass.RAW_ABSOLUTE_ERROR, AccuracyClass.NORMALIZED_R_SQUARED),
    OutputType.TEXT: (AccuracyClass.ONE_MINUS_WER,),
    OutputType.IMAGE: (AccuracyClass.ONE_MINUS_PIXEL_ERROR, AccuracyClass.SSIM),
    OutputType.BOOLEAN: (AccuracyClass.F1,),
}


def output_type_of(accuracy_class):
    """Returns the single output type an accuracy class applies to."""
    for output_type, classes in ACCURACY_CLASSES.items():
        if AccuracyClass(accuracy_class) in classes:
            return output_type
    raise InvalidValue("accuracy_class", f"unknown class {accuracy_class}")


@dataclass(frozen=True)
class OutputSpec:
    path: str
    type: OutputType

    def read(self):
        return {"path": self.path, "type": self.type.value}


@dataclass(frozen=True)
class PlatformProfile:
    """
    Energy model of a target platform.

    The numbers are calibration constants for the desk-scale simulator, not
    measurements of real silicon.

    Attributes:
        energy_per_work_unit: joules spent per counted work unit
        checkpoint_cost: work-unit equivalents of energy spent per checkpoint
        v_on, v_warn, v_off: turn-on, checkpoint-trigger and brown-out thresholds in volts
        diode_drop: forward drop of the harvester diode in volts
        series_resistance: charging path resistance in ohms
        work_rate: work units executed per second while ON
    """
    energy_per_work_unit: float
    checkpoint_cost: float
    v_on: float
    v_off: float
    v_warn: float
    diode_drop: float
    series_resistance: float
    work_rate: float

    def read(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}


DEFAULT_PROFILES = {
    Platform.MSP430: PlatformProfile(
        energy_per_work_unit=2.0e-7,
        checkpoint_cost=20,
        v_on=2.8,
        v_off=1.8,
        v_warn=2.2,
        diode_drop=0.3,
        series_resistance=100.0,
        work_rate=8.0e6,
    ),
    Platform.CORTEX_M: PlatformProfile(
        energy_per_work_unit=5.0e-7,
        checkpoint_cost=40,
        v_on=2.8,
        v_off=1.8,
        v_warn=2.2,
        diode_drop=0.3,
        series_resistance=50.0,
        work_rate=2.0e7,
    ),
}


def platform_profile(platform, overrides=None):
    """Returns the built-in profile for platform with overrides applied and checked."""
    try:
        platform = Platform(platform)
    except ValueError:
        raise UnknownPlatform(platform)

    overrides = dict(overrides or {})
    known = {f.name for f in fields(PlatformProfile)}
    for key, value in overrides.items():
        if key not in known:
            raise InvalidValue(f"platform_overrides.{key}", "unknown profile field")
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise InvalidValue(f"platform_overrides.{key}", "must be a number")

    profile = replace(DEFAULT_PROFILES[platform], **{k: float(v) for k, v in overrides.items()})

    for f in fields(PlatformProfile):
        if getattr(profile, f.name) <= 0:
            raise InvalidValue(f.name, "must be strictly positive")
    if not profile.v_off < profile.v_warn < profile.v_on:
        raise InvalidValue("v_on", "thresholds must satisfy v_off < v_warn < v_on")
    return profile


@dataclass(frozen=True)
class ProjectManifest:
    """
    The six user inputs plus the output specification.

    Paths are absolute after loading so read() and load_manifest() round-trip.
    """
    source_dir: Path
    input_traces: tuple
    energy_traces: tuple
    accuracy_class: AccuracyClass
    error_bound: float
    platform: Platform
    capacitor_uF: float
    output_spec: OutputSpec
    platform_overrides: dict = field(default_factory=dict, compare=False)

    @property
    def capacitance(self):
        """Capacitance in farads"""
        return self.capacitor_uF * 1e-6

    def profile(self):
        return platform_profile(self.platform, self.platform_overrides)

    def read(self):
        return {
            "source_dir": str(self.source_dir),
            "input_traces": [str(p) for p in self.input_traces],
            "energy_traces": [str(p) for p in self.energy_traces],
            "accuracy_class": self.accuracy_class.value,
            "error_bound": self.error_bound,
            "platform": self.platform.value,
            "capacitor_uF": self.capacitor_uF,
            "output_spec": self.output_spec.read(),
            "platform_overrides": dict(self.platform_overrides),
        }

    def __str__(self):
        return json.dumps(self.read())


REQUIRED_FIELDS = ("source_dir", "input_traces", "energy_traces", "accuracy_class",
                   "platform", "capacitor_uF", "output_spec")
OPTIONAL_FIELDS = ("error_bound", "platform_overrides")


def _number(body, name):
    value = body[name]
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise InvalidValue(name, "must be a number")
    return float(value)


def _existing_path(base, raw, name):
    if not isinstance(raw, str) or not raw:
        raise InvalidValue(name, "must be a non-empty path string")
    path = (base / raw).resolve()
    if not path.exists():
        raise InvalidValue(name, f"{path} does not exist")
    return path


def _path_list(base, body, name):
    raw = body[name]
    if not isinstance(raw, list) or len(raw) == 0:
        raise InvalidValue(name, "must be a non-empty list of paths")
    return tuple(_existing_path(base, item, name) for item in raw)


def parse_manifest(body, base_dir):
    """Validates a decoded manifest document, relative paths resolve against base_dir."""
    if not isinstance(body, dict):
        raise InvalidValue("manifest", "top level must be a JSON object")

    ''' Avoid garbage in, error checking '''
    for key in body:
        if key not in REQUIRED_FIELDS + OPTIONAL_FIELDS:
            raise InvalidValue(key, "unknown field")
    for name in REQUIRED_FIELDS:
        if name not in body:
            raise MissingField(name)

    base = Path(base_dir)
    source_dir = _existing_path(base, body["source_dir"], "source_dir")
    if not source_dir.is_dir():
        raise InvalidValue("source_dir", "must be a directory")

    error_bound = config['ERROR_BOUND']
    if "error_bound" in body:
        error_bound = _number(body, "error_bound")
    if not 0 < error_bound <= 1:
        raise InvalidValue("error_bound", "must lie in (0, 1]")

    capacitor_uF = _number(body, "capacitor_uF")
    if capacitor_uF <= 0:
        raise InvalidValue("capacitor_uF", "must be positive")

    spec = body["output_spec"]
    if not isinstance(spec, dict):
        raise InvalidValue("output_spec", "must be an object with 'path' and 'type'")
    for key in spec:
        if key not in ("path", "type"):
            raise InvalidValue(f"output_spec.{key}", "unknown field")
    for key in ("path", "type"):
        if key not in spec:
            raise MissingField(f"output_spec.{key}")
    if not isinstance(spec["path"], str) or not spec["path"]:
        raise InvalidValue("output_spec.path", "must be a non-empty string")
    try:
        output_type = OutputType(spec["type"])
    except ValueError:
        raise InvalidValue("output_spec.type", f"expected one of {[t.value for t in OutputType]}")

    try:
        accuracy_class = AccuracyClass(body["accuracy_class"])
    except ValueError:
        raise InvalidValue("accuracy_class", f"expected one of {[c.value for c in AccuracyClass]}")
    if accuracy_class not in ACCURACY_CLASSES[output_type]:
        raise IncompatibleAccuracyClass(accuracy_class.value, output_type.value)

    try:
        platform = Platform(body["platform"])
    except ValueError:
        raise InvalidValue("platform", f"expected one of {[p.value for p in Platform]}")

    overrides = body.get("platform_overrides") or {}
    if not isinstance(overrides, dict):
        raise InvalidValue("platform_overrides", "must be an object")
    # fail early on bad overrides rather than at simulation time
    platform_profile(platform, overrides)

    return ProjectManifest(
        source_dir=source_dir,
        input_traces=_path_list(base, body, "input_traces"),
        energy_traces=_path_list(base, body, "energy_traces"),
        accuracy_class=accuracy_class,
        error_bound=error_bound,
        platform=platform,
        capacitor_uF=capacitor_uF,
        output_spec=OutputSpec(path=spec["path"], type=output_type),
        platform_overrides=dict(overrides),
    )


def load_manifest(path):
    """Reads and validates the manifest JSON file at path."""
    path = Path(path)
    if not path.is_file():
        raise InvalidValue("manifest", f"{path} is not a file")
    try:
        body = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise InvalidValue("manifest", f"not valid JSON ({e})")
    manifest = parse_manifest(body, path.parent)
    logger.info("Loaded manifest for %s (%s, %s)", manifest.source_dir,
                manifest.platform.value, manifest.accuracy_class.value)
    return manifest
