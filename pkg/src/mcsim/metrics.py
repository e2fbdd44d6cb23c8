"""Scaling laws, parallel and multiprogrammed metrics, power and energy."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field
from typing import Optional

from mcsim.config import DvfsParams
from mcsim.core import dynamic_power
from mcsim.errors import InvalidDuration, MissingBaseline


def amdahl(f: float, n: float) -> float:
    return 1 / ((1 - f) + f / n)


def gustafson(f: float, n: float) -> float:
    return (1 - f) + f * n


def normalized_time(f: float, n: float) -> float:
    """Execution time relative to one thread for a fixed problem size."""
    return (1 - f) + f / n


@dataclass(frozen=True)
class ScalingInput:
    f: float
    n: int

    def __post_init__(self):
        if not (0.0 <= self.f <= 1.0):
            raise ValueError(f"parallel fraction must lie in [0, 1], got {self.f}")
        if self.n < 1:
            raise ValueError(f"thread count must be >= 1, got {self.n}")


def scaling_law(inp: ScalingInput, law: str = "Amdahl") -> float:
    law = law.lower()
    if law == "amdahl":
        return amdahl(inp.f, inp.n)
    if law == "gustafson":
        return gustafson(inp.f, inp.n)
    raise ValueError(f"unknown law {law!r}")


def law_table(f: float, n_max: int, law: str = "Amdahl") -> list:
    """``(n, speedup)`` rows for n = 1..n_max."""
    return [(n, scaling_law(ScalingInput(f, n), law)) for n in range(1, n_max + 1)]


def parallel_metrics(t_sequential: float, t_parallel: float, n: int):
    """Parallel speedup and efficiency; super-linear values are not clamped."""
    if t_sequential <= 0 or t_parallel <= 0 or n < 1:
        raise ValueError("times must be positive and n >= 1")
    speedup = t_sequential / t_parallel
    return speedup, t_sequential / (t_parallel * n)


@dataclass
class AppPerf:
    app_id: int
    ipc_alone: Optional[float] = None
    ipc_shared: Optional[float] = None
    t_sequential: Optional[float] = None
    t_parallel: Optional[float] = None
    instructions: int = 0
    cycles: int = 0


@dataclass
class MetricReport:
    slowdowns: dict = field(default_factory=dict)
    weighted_speedup: float = 0.0
    harmonic_speedup: float = 0.0
    fairness: float = 0.0
    max_slowdown: float = 0.0
    parallel_speedup: Optional[float] = None
    parallel_efficiency: Optional[float] = None
    energy_joules: Optional[float] = None
    average_power_watts: Optional[float] = None
    extra: dict = field(default_factory=dict)

    def rows(self) -> list:
        """``(metric, app, value)`` rows; app is empty for system-wide metrics."""
        out = [("slowdown", str(a), s) for a, s in sorted(self.slowdowns.items())]
        out += [
            ("weighted_speedup", "", self.weighted_speedup),
            ("harmonic_speedup", "", self.harmonic_speedup),
            ("fairness", "", self.fairness),
            ("max_slowdown", "", self.max_slowdown),
        ]
        for name in ("parallel_speedup", "parallel_efficiency", "energy_joules", "average_power_watts"):
            v = getattr(self, name)
            if v is not None:
                out.append((name, "", v))
        for (name, app), v in sorted(self.extra.items()):
            out.append((name, app, v))
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["metric", "app", "value"])
        for metric, app, value in self.rows():
            w.writerow([metric, app, fmt(value)])
        return buf.getvalue()

    def to_json(self) -> dict:
        d = asdict(self)
        d["slowdowns"] = {str(k): v for k, v in sorted(self.slowdowns.items())}
        d["extra"] = [{"metric": m, "app": a, "value": v} for (m, a), v in sorted(self.extra.items())]
        return d


def fmt(value) -> str:
    """Fixed 6-significant-digit rendering used in every CSV."""
    if isinstance(value, bool):
        return str(int(value))
    if isinstance(value, int):
        return str(value)
    return f"{value:.6g}"


def multiprogram_metrics(apps) -> MetricReport:
    """Slowdowns, weighted/harmonic speedup, fairness and max slowdown."""
    apps = list(apps)
    if not apps:
        raise MissingBaseline("no applications given")
    slowdowns = {}
    for a in apps:
        if not a.ipc_alone or not a.ipc_shared:
            raise MissingBaseline(f"app {a.app_id} lacks an alone or shared IPC")
        slowdowns[a.app_id] = a.ipc_alone / a.ipc_shared
    vals = sorted(slowdowns.values())
    return MetricReport(
        slowdowns=slowdowns,
        weighted_speedup=sum(1.0 / s for s in vals),
        harmonic_speedup=len(vals) / sum(vals),
        fairness=vals[0] / vals[-1],
        max_slowdown=vals[-1],
    )


def ws_improvement(ws_before: float, ws_after: float) -> float:
    if ws_before <= 0 or ws_after <= 0:
        raise ValueError("weighted speedups must be positive")
    return ws_after / ws_before


def power_energy(segments, params: DvfsParams, static_watts: float = 0.0):
    """Average power (W) and energy (J) over ``(frequency_hz, seconds)`` segments."""
    segments = list(segments)
    if not segments:
        raise InvalidDuration("no DVFS segments")
    energy = 0.0
    total = 0.0
    for f, t in segments:
        if t <= 0:
            raise InvalidDuration(f"segment duration must be positive, got {t}")
        energy += (dynamic_power(params, f) + static_watts) * t
        total += t
    return energy / total, energy


def report_json(report: MetricReport, **extra) -> str:
    data = dict(extra)
    data["metrics"] = report.to_json()
    return json.dumps(data, indent=2, sort_keys=True) + "\n"
