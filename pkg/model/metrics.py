""" Accuracy classes, output deviation, power-cycle ratio and the capped objective """
from dataclasses import dataclass, field
import json
import logging

import numpy as np
from sklearn.metrics import f1_score, r2_score

from model.errors import TypeMismatch, EmptyReference, ZeroReference, EmptyList
from model.manifest import AccuracyClass, OutputType, output_type_of

logger = logging.getLogger(__name__)

CAP = 1.0


@dataclass(frozen=True)
class Image:
    pixels: np.ndarray
    maxval: int

    @property
    def shape(self):
        return self.pixels.shape


""" Output parsers """

def _decode(data):
    if isinstance(data, str):
        return data
    try:
        return bytes(data).decode("utf-8")
    except UnicodeDecodeError:
        raise TypeMismatch("Output is not UTF-8 text")


def _parse_pgm(text):
    tokens = []
    for line in text.splitlines():
        tokens.extend(line.split("#", 1)[0].split())
    if len(tokens) < 4 or tokens[0] != "P2":
        raise TypeMismatch("Output is not a plain (P2) PGM image")
    try:
        width, height, maxval = (int(t) for t in tokens[1:4])
        values = np.array([int(t) for t in tokens[4:]], dtype=float)
    except ValueError:
        raise TypeMismatch("PGM header or pixel is not an integer")
    if width <= 0 or height <= 0 or maxval <= 0:
        raise TypeMismatch("PGM dimensions must be positive")
    if values.size != width * height:
        raise TypeMismatch(f"PGM holds {values.size} pixels, header says {width * height}")
    return Image(pixels=values.reshape(height, width), maxval=maxval)


def parse_output(data, output_type):
    """Parses program output: numeric and boolean one value per line, text as UTF-8, image as text PGM"""
    output_type = OutputType(output_type)
    text = _decode(data)
    if output_type == OutputType.TEXT:
        return text
    if output_type == OutputType.IMAGE:
        return _parse_pgm(text)
    tokens = text.split()
    if output_type == OutputType.NUMERIC:
        try:
            return np.array([float(t) for t in tokens], dtype=float)
        except ValueError:
            raise TypeMismatch("Numeric output holds a non-number")
    flags = {"0": False, "1": True, "false": False, "true": True}
    try:
        return np.array([flags[t.lower()] for t in tokens], dtype=bool)
    except KeyError:
        raise TypeMismatch("Boolean output must be 0/1 per line")


""" Scores """

def word_error_rate(reference, hypothesis):
    '''Word-level Levenshtein distance over the reference word count'''
    ref = reference.split()
    hyp = hypothesis.split()
    if not ref:
        raise EmptyReference()
    row = np.arange(len(hyp) + 1)
    for i, word in enumerate(ref, start=1):
        previous = row.copy()
        row[0] = i
        for j, other in enumerate(hyp, start=1):
            row[j] = min(previous[j] + 1, row[j - 1] + 1, previous[j - 1] + (word != other))
    return row[-1] / len(ref)


def global_ssim(reference, candidate):
    """Single-window SSIM over the whole image, stabilisers from the reference's dynamic range"""
    if reference.shape != candidate.shape:
        return 0.0
    x = reference.pixels.astype(float).ravel()
    y = candidate.pixels.astype(float).ravel()
    data_range = float(reference.maxval)
    c1 = (0.01 * data_range) ** 2
    c2 = (0.03 * data_range) ** 2
    mx, my = x.mean(), y.mean()
    vx, vy = x.var(), y.var()
    cov = ((x - mx) * (y - my)).mean()
    value = ((2 * mx * my + c1) * (2 * cov + c2)) / ((mx ** 2 + my ** 2 + c1) * (vx + vy + c2))
    return float(min(1.0, max(0.0, value)))


def _r_squared(reference, candidate):
    if candidate.size != reference.size:
        return 0.0
    if reference.size < 2:
        return 1.0 if np.array_equal(reference, candidate) else 0.0
    return float(max(0.0, r2_score(reference, candidate)))


def score(reference_output, candidate_output, accuracy_class):
    """
    Scores candidate against reference for one accuracy class.

    Bounded classes return a float in [0, 1]. raw_absolute_error returns the
    candidate's parsed values unchanged; deviation() compares them value by
    value against the reference.
    """
    accuracy_class = AccuracyClass(accuracy_class)
    output_type = output_type_of(accuracy_class)
    reference = parse_output(reference_output, output_type)
    candidate = parse_output(candidate_output, output_type)

    if output_type in (OutputType.NUMERIC, OutputType.BOOLEAN) and reference.size == 0:
        raise EmptyReference()
    if output_type == OutputType.TEXT and not reference.split():
        raise EmptyReference()

    if accuracy_class == AccuracyClass.RAW_ABSOLUTE_ERROR:
        return candidate
    if accuracy_class == AccuracyClass.NORMALIZED_R_SQUARED:
        return _r_squared(reference, candidate)
    if accuracy_class == AccuracyClass.ONE_MINUS_WER:
        return float(max(0.0, 1.0 - word_error_rate(reference, candidate)))
    if accuracy_class == AccuracyClass.ONE_MINUS_PIXEL_ERROR:
        if reference.shape != candidate.shape:
            return 0.0
        return float(1.0 - np.count_nonzero(reference.pixels != candidate.pixels) / reference.pixels.size)
    if accuracy_class == AccuracyClass.SSIM:
        return global_ssim(reference, candidate)
    # f1: reference is the truth, candidate the prediction
    if candidate.size != reference.size:
        return 0.0
    return float(f1_score(reference, candidate, zero_division=1.0))


@dataclass(frozen=True)
class AccuracyScore:
    a_o: object
    a_a: object
    accuracy_class: AccuracyClass


def accuracy(reference_output, candidate_output, accuracy_class):
    """a_o scores the reference against itself, a_a the candidate against the reference"""
    accuracy_class = AccuracyClass(accuracy_class)
    if accuracy_class == AccuracyClass.RAW_ABSOLUTE_ERROR:
        output_type = output_type_of(accuracy_class)
        a_o = parse_output(reference_output, output_type)
        if a_o.size == 0:
            raise EmptyReference()
        return AccuracyScore(a_o, parse_output(candidate_output, output_type), accuracy_class)
    return AccuracyScore(score(reference_output, reference_output, accuracy_class),
                         score(reference_output, candidate_output, accuracy_class),
                         accuracy_class)


""" Deviation, cycle ratio and objective """

def e_m(a_o, a_a):
    if a_o == 0:
        raise ZeroReference()
    return abs(a_o - a_a) / abs(a_o)


def _e_m_or_fallback(a_o, a_a):
    try:
        return e_m(a_o, a_a)
    except ZeroReference:
        # undefined at a_o = 0: no error only if the candidate is also 0
        return 0.0 if a_a == 0 else 1.0


def deviation(score):
    """e_m for an AccuracyScore, zero references resolved, missing raw values count as 1"""
    if score.accuracy_class != AccuracyClass.RAW_ABSOLUTE_ERROR:
        return float(_e_m_or_fallback(float(score.a_o), float(score.a_a)))
    reference = np.asarray(score.a_o, dtype=float)
    candidate = np.asarray(score.a_a, dtype=float)
    per_value = [
        _e_m_or_fallback(reference[i], candidate[i]) if i < candidate.size else 1.0
        for i in range(reference.size)
    ]
    return float(np.mean(per_value))


def c_r(c_o, c_a):
    return c_a / c_o


def reduction(c_ratio):
    '''Percentage of power cycles saved'''
    return 100.0 * (1.0 - c_ratio)


def objective(e_m_value, c_r_value, e_b):
    """(value, capped): e_m + c_r inside the bound, CAP + c_r beyond it"""
    if e_m_value <= e_b:
        return e_m_value + c_r_value, False
    return CAP + c_r_value, True


@dataclass(frozen=True)
class TraceMetrics:
    trace_id: str
    e_m: float
    c_r: float
    completed: bool = True

    def read(self):
        return {"trace": self.trace_id, "e_m": self.e_m, "c_r": self.c_r, "completed": self.completed}


@dataclass(frozen=True)
class MetricReport:
    e_m: float
    c_r: float
    objective: float
    capped: bool
    per_trace: tuple = field(default_factory=tuple)

    @property
    def reduction(self):
        return reduction(self.c_r)

    @property
    def worsened(self):
        '''The approximation costs more power cycles than the original'''
        return self.c_r > 1.0

    def read(self):
        return {
            "e_m": self.e_m,
            "c_r": self.c_r,
            "objective": self.objective,
            "capped": self.capped,
            "reduction_percent": self.reduction,
            "per_trace": [t.read() for t in self.per_trace],
        }

    def __str__(self):
        return json.dumps(self.read())


def aggregate(per_trace, e_b):
    """
    Means of e_m and c_r over traces, objective recomputed on the means.

    Items are TraceMetrics or (e_m, c_r) pairs. A trace whose simulation did
    not complete contributes e_m = 1 and c_r = 1.
    """
    items = []
    for k, item in enumerate(per_trace):
        if not isinstance(item, TraceMetrics):
            item = TraceMetrics(trace_id=str(k), e_m=float(item[0]), c_r=float(item[1]))
        if not item.completed:
            item = TraceMetrics(item.trace_id, CAP, 1.0, completed=False)
        items.append(item)
    if not items:
        raise EmptyList()

    mean_e_m = float(np.mean([t.e_m for t in items]))
    mean_c_r = float(np.mean([t.c_r for t in items]))
    value, capped = objective(mean_e_m, mean_c_r, e_b)
    if mean_c_r > 1.0:
        logger.warning("Approximation increases power cycles (c_r = %.3f)", mean_c_r)
    return MetricReport(e_m=mean_e_m, c_r=mean_c_r, objective=value, capped=capped, per_trace=tuple(items))
