""" Intermittent-execution simulator.

A harvester charges a capacitor through a diode and a series resistor. The
device turns on at v_on, spends energy_per_work_unit per work unit, takes a
just-in-time checkpoint when the capacitor sags to v_warn and sleeps until
v_on again. If the checkpoint cannot be paid for from the energy between
v_warn and v_off, the device browns out and loses the work done since the
last checkpoint.
"""
from dataclasses import dataclass, fields
from pathlib import Path
import hashlib
import logging
import math
import threading

import numpy as np
import pandas as pd

from model.errors import MalformedTrace, NonProgressive, InsufficientCapacitor, InvalidValue

logger = logging.getLogger(__name__)

TRACE_COLUMNS = ["time_s", "voltage_v"]
# consecutive ON periods without persisted progress before a run is non-progressive
STALL_LIMIT = 2


@dataclass(frozen=True, eq=False)
class EnergyTrace:
    times: np.ndarray
    voltages: np.ndarray
    dt: float
    source: str = ""

    @property
    def id(self):
        return Path(self.source).stem if self.source else "trace"

    @property
    def duration(self):
        return float(self.times[-1] - self.times[0]) + self.dt

    def __len__(self):
        return len(self.voltages)


@dataclass(frozen=True)
class CapacitorState:
    capacitance: float
    voltage: float = 0.0

    @property
    def energy(self):
        return 0.5 * self.capacitance * self.voltage ** 2


@dataclass(frozen=True)
class SimResult:
    power_cycles: int
    completed: bool
    work_done: int
    checkpoints_taken: int
    sim_time: float
    energy_delivered: float = 0.0
    energy_spent: float = 0.0

    def read(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}


def load_trace(path):
    """Reads a `time_s,voltage_v` CSV with uniform sampling and non-negative voltages"""
    path = Path(path)
    try:
        frame = pd.read_csv(path, dtype=str, skip_blank_lines=True)
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise MalformedTrace(1, f"unreadable CSV ({e})")
    if [c.strip() for c in frame.columns] != TRACE_COLUMNS:
        raise MalformedTrace(1, f"header must be {','.join(TRACE_COLUMNS)}")
    frame.columns = TRACE_COLUMNS
    if len(frame) < 2:
        raise MalformedTrace(len(frame) + 1, "need at least two samples")

    numeric = frame.apply(pd.to_numeric, errors="coerce")
    bad = numeric.isna().any(axis=1)
    if bad.any():
        raise MalformedTrace(int(np.argmax(bad.to_numpy())) + 2, "non-numeric value")
    times = numeric["time_s"].to_numpy(dtype=float)
    voltages = numeric["voltage_v"].to_numpy(dtype=float)

    negative = np.flatnonzero(voltages < 0)
    if negative.size:
        raise MalformedTrace(int(negative[0]) + 2, "negative voltage")
    steps = np.diff(times)
    backwards = np.flatnonzero(steps <= 0)
    if backwards.size:
        raise MalformedTrace(int(backwards[0]) + 3, "timestamps must strictly increase")
    dt = float(steps[0])
    uneven = np.flatnonzero(~np.isclose(steps, dt, rtol=1e-6, atol=1e-12))
    if uneven.size:
        raise MalformedTrace(int(uneven[0]) + 3, "timestamps are not uniformly spaced")
    return EnergyTrace(times=times, voltages=voltages, dt=dt, source=str(path))


def step_charge(cap, source_voltage, profile, dt):
    """One Euler step of the diode/resistor charging path, never discharges through the source"""
    if dt <= 0:
        raise InvalidValue("dt", "must be positive")
    ceiling = source_voltage - profile.diode_drop
    current = max(0.0, (ceiling - cap.voltage) / profile.series_resistance)
    if current == 0.0:
        return cap
    voltage = min(cap.voltage + current * dt / cap.capacitance, ceiling)
    return CapacitorState(cap.capacitance, voltage)


def _energy_between(capacitance, upper, lower):
    if upper <= lower:
        return 0.0
    return 0.5 * capacitance * (upper ** 2 - lower ** 2)


def _voltage_after(capacitance, voltage, energy):
    return math.sqrt(max(0.0, voltage ** 2 - 2.0 * energy / capacitance))


def simulate(total_work, trace, cap0, profile, observe=None):
    """
    Replays trace once and returns the power cycles needed for total_work.

    Each step charges first, then an ON device executes as many units as
    work_rate and the energy above v_warn allow. Running out of energy above
    v_warn ends the ON period with a checkpoint or a brown-out.

    observe(step, cap, delivered, spent) is called once every step has
    settled, the last call coming from the step that completes the work.
    """
    if total_work <= 0:
        raise InvalidValue("total_work", "program reported no work")
    total_work = int(total_work)
    capacitance = cap0.capacitance
    epu = profile.energy_per_work_unit
    checkpoint_energy = profile.checkpoint_cost * epu
    rate_limit = max(1, int(math.floor(profile.work_rate * trace.dt)))

    cap = cap0
    on = False
    power_cycles = 0
    persisted = 0
    volatile = 0
    checkpoints = 0
    stalled = 0
    persisted_at_on = 0
    delivered = cap0.energy
    spent = 0.0
    sim_time = 0.0

    for step, source_voltage in enumerate(trace.voltages):
        sim_time = (step + 1) * trace.dt
        before = cap.energy
        cap = step_charge(cap, float(source_voltage), profile, trace.dt)
        delivered += cap.energy - before

        if not on:
            if cap.voltage < profile.v_on:
                if observe is not None:
                    observe(step, cap, delivered, spent)
                continue
            on = True
            power_cycles += 1
            persisted_at_on = persisted

        remaining = total_work - persisted - volatile
        window = _energy_between(capacitance, cap.voltage, profile.v_warn)
        affordable = int(math.floor(window / epu + 1e-9))
        executed = min(remaining, rate_limit, affordable)
        if executed:
            cap = CapacitorState(capacitance, _voltage_after(capacitance, cap.voltage, executed * epu))
            spent += executed * epu
            volatile += executed

        if persisted + volatile >= total_work:
            if observe is not None:
                observe(step, cap, delivered, spent)
            return SimResult(power_cycles, True, total_work, checkpoints, sim_time, delivered, spent)

        if executed < min(remaining, rate_limit):
            # sagged to v_warn: checkpoint from the reserve above v_off or lose the volatile work
            reserve = _energy_between(capacitance, cap.voltage, profile.v_off)
            if checkpoint_energy <= reserve:
                cap = CapacitorState(capacitance, _voltage_after(capacitance, cap.voltage, checkpoint_energy))
                spent += checkpoint_energy
                persisted += volatile
                checkpoints += 1
            else:
                spent += reserve
                cap = CapacitorState(capacitance, min(cap.voltage, profile.v_off))
            volatile = 0
            on = False

            stalled = stalled + 1 if persisted == persisted_at_on else 0
            if stalled >= STALL_LIMIT:
                raise NonProgressive(persisted)

        if observe is not None:
            observe(step, cap, delivered, spent)

    if power_cycles == 0:
        raise InsufficientCapacitor()
    return SimResult(power_cycles, False, persisted + volatile, checkpoints, sim_time, delivered, spent)


class SimulationCache:
    """Insert-or-get store shared by concurrent evaluations"""

    def __init__(self):
        self._lock = threading.Lock()
        self._results = {}

    def get_or_compute(self, key, compute):
        with self._lock:
            if key in self._results:
                return self._results[key]
        result = compute()
        with self._lock:
            return self._results.setdefault(key, result)

    def __len__(self):
        return len(self._results)


_cache = SimulationCache()


def _file_digest(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def cycles_for(binary, input_trace, trace, manifest, run_result=None, timeout=None, cache=None):
    """
    Power cycles of the instrumented binary on one input and one energy trace.

    The binary runs once to count its work units unless run_result is
    supplied; results are cached on (binary hash, input, trace, profile).
    """
    from model import buildsys

    cache = _cache if cache is None else cache
    profile = manifest.profile()
    key = (_file_digest(binary), str(input_trace), trace.source, _file_digest(trace.source) if trace.source else None,
           tuple(sorted(profile.read().items())), manifest.capacitance)

    def compute():
        result = run_result or buildsys.run(binary, input_trace, timeout=timeout,
                                            output_path=manifest.output_spec.path)
        if not result.work_units:
            raise InvalidValue("total_work", f"{binary} reported no work units")
        return simulate(result.work_units, trace, CapacitorState(manifest.capacitance, 0.0), profile)

    return cache.get_or_compute(key, compute)
