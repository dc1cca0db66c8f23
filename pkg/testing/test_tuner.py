import numpy as np
import pytest

from model.buildsys import SafeInterval
from model.errors import EmptySpace, EvaluatorFailure
from model.knobs import KnobSpec
from model.metrics import objective
from model.tuner import Dim, SearchSpace, _neighbours, build_space, expected_improvement, export_history, load_history, tune

STRIDE = KnobSpec("k", (1, 4), "Integer", "f")
GAIN = KnobSpec("gain", (0.1, 1.0), "Real", "g")
C_R = {1: 0.9, 2: 0.5, 3: 0.7, 4: 0.8}


def stride_evaluator(values):
    return 0.0, C_R[values["f.k"]]


def test_build_space_intersects_safe_interval():
    space = build_space([STRIDE, GAIN], {"f.k": SafeInterval("k", (2, 4)), "gain": (0.2, 2.0)})
    assert space.dims == (Dim("f.k", "Integer", 2, 4), Dim("g.gain", "Real", 0.2, 1.0))
    assert space.grid_size() is None
    assert build_space([STRIDE], {"f.k": (1, 4)}).grid_size() == 4


def test_build_space_empty():
    with pytest.raises(EmptySpace):
        build_space([STRIDE], {"f.k": (6, 9)})
    with pytest.raises(EmptySpace):
        build_space([STRIDE], {})


def test_dim_rounds_integer_knobs():
    dim = Dim("f.k", "Integer", 1, 4)
    assert dim.from_unit(0.0) == 1
    assert dim.from_unit(1.0) == 4
    assert isinstance(dim.from_unit(0.4), int)
    assert Dim("g.gain", "Real", 0.0, 2.0).from_unit(0.25) == 0.5


def test_small_integer_space_is_exhausted():
    space = build_space([STRIDE], {"f.k": (1, 4)})
    result = tune(stride_evaluator, space, budget=10, e_b=0.3, seed=0)
    assert result.budget_used == 4
    assert sorted(r.values["f.k"] for r in result.history) == [1, 2, 3, 4]
    assert result.best.values == {"f.k": 2}
    assert result.best.objective == pytest.approx(0.5)


def test_evaluator_failures_are_penalised():
    def evaluator(values):
        if values["f.k"] == 2:
            raise EvaluatorFailure(values, "crashed")
        return stride_evaluator(values)

    result = tune(evaluator, build_space([STRIDE], {"f.k": (1, 4)}), budget=10, e_b=0.3, seed=0)
    failed = [r for r in result.history if r.failed]
    assert [r.values for r in failed] == [{"f.k": 2}]
    assert failed[0].objective == 2.0
    assert failed[0].capped
    assert result.best.values == {"f.k": 3}


def test_capped_records_never_beat_bounded_ones():
    def evaluator(values):
        return (0.9, 0.1) if values["f.k"] == 4 else stride_evaluator(values)

    result = tune(evaluator, build_space([STRIDE], {"f.k": (1, 4)}), budget=4, e_b=0.3, seed=0)
    capped = [r for r in result.history if r.values["f.k"] == 4][0]
    assert capped.capped
    assert capped.objective == pytest.approx(1.1)
    assert result.best.values == {"f.k": 2}


def test_same_seed_same_history():
    space = build_space([STRIDE, GAIN], {"f.k": (1, 4), "g.gain": (0.1, 1.0)})

    def evaluator(values):
        return 0.2 * values["g.gain"], C_R[values["f.k"]] * (1.1 - values["g.gain"])

    first = tune(evaluator, space, budget=12, e_b=0.3, seed=7)
    second = tune(evaluator, space, budget=12, e_b=0.3, seed=7)
    assert [r.values for r in first.history] == [r.values for r in second.history]
    assert first.best == second.best
    assert first.budget_used == 12


def test_budget_must_be_positive():
    with pytest.raises(EmptySpace):
        tune(stride_evaluator, build_space([STRIDE], {"f.k": (1, 4)}), budget=0)
    with pytest.raises(EmptySpace):
        tune(stride_evaluator, SearchSpace(()), budget=5)


def test_expected_improvement():
    ei = expected_improvement(np.array([0.5, 0.5, 0.9]), np.array([0.0, 0.1, 0.1]), best=0.6)
    assert ei[0] == 0.0
    assert ei[1] > ei[2] > 0.0


def test_history_export_and_reload(tmp_path):
    def evaluator(values):
        if values["f.k"] == 3:
            raise EvaluatorFailure(values, "timed out")
        return stride_evaluator(values)

    result = tune(evaluator, build_space([STRIDE], {"f.k": (1, 4)}), budget=4, e_b=0.3, seed=0)
    path = export_history(result, tmp_path / "history.csv")
    assert path.read_text().splitlines()[0] == "iteration,f.k,e_m,c_r,objective,capped"
    reloaded = load_history(path)
    assert reloaded == list(result.history)
    assert [r.failed for r in reloaded] == [r.failed for r in result.history]


@pytest.mark.slow
def test_finds_largest_knob_inside_error_bound():
    '''e_m grows and c_r shrinks with the knob, the bound is crossed above 75'''
    knob = KnobSpec("level", (1, 100), "Integer", "f")
    space = build_space([knob], {"f.level": (1, 100)})

    def evaluator(values):
        level = values["f.level"]
        return 0.004 * level, 1.0 - 0.008 * level

    result = tune(evaluator, space, budget=60, e_b=0.3, seed=0)
    assert not result.best.capped
    assert 65 <= result.best.values["f.level"] <= 75
    assert all(r.objective >= 1.0 for r in result.history if r.capped)


def test_history_splits_at_error_bound():
    '''Past the bound every objective jumps above 1.0, inside it stays below'''
    space = build_space([KnobSpec("level", (0, 100), "Integer", "f")], {"f.level": (0, 100)})

    def evaluator(values):
        level = values["f.level"]
        return 0.006 * level, 1.0 - 0.007 * level

    result = tune(evaluator, space, budget=20, e_b=0.3, seed=5)
    capped = [r.objective for r in result.history if r.capped]
    bounded = [r for r in result.history if not r.capped]
    assert capped and bounded
    assert all(value >= 1.0 for value in capped)
    assert all(r.objective < 1.0 + max(b.e_m for b in bounded) for r in bounded)
    assert min(capped) > max(r.objective for r in bounded)


def test_neighbours_step_one_integer_dim():
    space = build_space([STRIDE, GAIN], {"f.k": (1, 4), "g.gain": (0.1, 1.0)})
    seen = {(3, 0.5)}
    assert _neighbours(space, {"f.k": 2, "g.gain": 0.5}, seen) == [{"f.k": 1, "g.gain": 0.5}]
    assert _neighbours(space, {"f.k": 4, "g.gain": 0.5}, set()) == [{"f.k": 3, "g.gain": 0.5}]


def distance_to_37(values):
    return abs(values["f.k"] - 37) / 100, 0.2


def test_distance_landscape_minimum():
    space = build_space([KnobSpec("k", (0, 100), "Integer", "f")], {"f.k": (0, 100)})
    result = tune(distance_to_37, space, budget=150, e_b=0.3, seed=0)
    assert result.best.values == {"f.k": 37}
    assert result.best.objective == pytest.approx(0.2)


def perforation(values):
    k = values["f.k"]
    return 0.0008 * k, 1.0 - 0.0015 * k


def valley(values):
    a, b = values["f.a"], values["f.b"]
    return 0.002 * (a - 11) ** 2 + 0.001 * abs(b - 20), 0.8 - 0.0005 * b


def bowl(values):
    a, b = values["f.a"], values["f.b"]
    return 0.001 * ((a - 12) ** 2 + (b - 7) ** 2), 0.5


def ripple(values):
    k = values["f.k"]
    return 0.05 + 0.05 * float(np.sin(k / 15.0)), 0.5 + 0.001 * abs(k - 290)


# (evaluator, {knob: (lo, hi)}), every space lists at most 512 points
LANDSCAPES = {
    "distance": (distance_to_37, {"k": (0, 100)}),
    "perforation": (perforation, {"k": (0, 511)}),
    "valley": (valley, {"a": (0, 15), "b": (0, 31)}),
    "bowl": (bowl, {"a": (0, 19), "b": (0, 24)}),
    "ripple": (ripple, {"k": (0, 399)}),
}


@pytest.mark.slow
@pytest.mark.parametrize("name", sorted(LANDSCAPES))
def test_tuner_matches_exhaustive_search(name):
    evaluator, ranges = LANDSCAPES[name]
    knobs = [KnobSpec(knob, bounds, "Integer", "f") for knob, bounds in ranges.items()]
    space = build_space(knobs, {f"f.{knob}": bounds for knob, bounds in ranges.items()})
    assert space.grid_size() <= 512
    optimum = min(objective(*map(float, evaluator(values)), 0.3)[0] for values in space.grid())

    hits = 0
    for seed in range(20):
        result = tune(evaluator, space, budget=150, e_b=0.3, seed=seed)
        for record in result.history:
            for dim in space.dims:
                value = record.values[dim.name]
                assert isinstance(value, int)
                assert dim.lo <= value <= dim.hi
        hits += result.best.objective == optimum
    assert hits >= 19
