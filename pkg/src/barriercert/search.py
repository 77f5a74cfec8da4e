"""Bisection search over a scalar problem parameter.

Feasibility of the certification problem is assumed monotone in the
parameter: for a performance level ``gamma`` larger values are easier to
certify (``minimize_gamma``), for a growth rate ``lambda`` smaller values
are easier (``maximize_lambda``).  The driver checks this orientation at
both bracket ends before bisecting and refuses to run on a bracket that
does not separate the frontier.

Each probe solves a full certification problem at one parameter value;
probes are recorded (value, status, residuals, wall time) and can be
streamed to a CSV file.  With ``workers > 1`` each bisection round probes
several interior points concurrently, shrinking the bracket by a factor
``workers + 1`` per round instead of 2.
"""

from __future__ import annotations

import csv
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Mapping

from .barrier import make_ansatz
from .certifier import Certificate, CertifyOptions, CertifyResult, verify
from .pde_model import PdeProblem, load_problem

__all__ = [
    "SearchSpec", "SearchResult", "ProbeRecord", "BracketError",
    "minimize_gamma", "maximize_lambda", "reprobe_invariants",
]


class BracketError(Exception):
    """The bracket endpoints do not straddle the feasibility frontier."""


@dataclass
class ProbeRecord:
    value: float
    status: str           # "certified" | "no-certificate" | "numerical-failure"
    solver_status: str
    iterations: int
    residuals: dict
    wall_time: float

    @property
    def certified(self) -> bool:
        return self.status == "certified"


@dataclass(frozen=True)
class SearchSpec:
    parameter: str                    # name of the scalar problem parameter
    lo: float                         # bracket lower end (lo < hi)
    hi: float                         # bracket upper end
    tolerance: float                  # stop when bracket width <= tolerance
    ansatz: Mapping = field(default_factory=dict)   # kwargs for make_ansatz
    options: CertifyOptions = field(default_factory=CertifyOptions)
    mode: str = "auto"                # "auto" | "final-time" | "all-time"
    workers: int = 1                  # concurrent probes per bisection round
    max_probes: int = 200
    csv_path: str | None = None       # stream probe records here as they finish

    def __post_init__(self):
        if not self.lo < self.hi:
            raise ValueError(f"bracket requires lo < hi, got ({self.lo}, {self.hi})")
        if not self.tolerance > 0:
            raise ValueError("tolerance must be positive")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")


@dataclass
class SearchResult:
    value: float                      # sharpest certified parameter value
    certificate: Certificate
    result: CertifyResult             # full result of the probe at `value`
    probes: list[ProbeRecord]         # in completion order
    direction: str                    # "min" | "max"

    def write_csv(self, path: str) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(_CSV_HEADER)
            for p in self.probes:
                w.writerow(_csv_row(p))


_CSV_HEADER = ("value", "status", "solver_status", "iterations",
               "primal_residual", "dual_residual", "gap", "wall_time_s")


def _csv_row(p: ProbeRecord):
    r = p.residuals or {}
    return (repr(p.value), p.status, p.solver_status, p.iterations,
            r.get("primal", ""), r.get("dual", ""), r.get("gap", ""),
            f"{p.wall_time:.3f}")


def _load(source, spec: SearchSpec, value: float) -> PdeProblem:
    if callable(source):
        return source(value)
    return load_problem(source, overrides={spec.parameter: value})


def _probe(source, spec: SearchSpec, value: float) -> tuple[ProbeRecord, CertifyResult]:
    problem = _load(source, spec, value)
    ansatz = make_ansatz(problem, **dict(spec.ansatz))
    t0 = time.monotonic()
    if spec.mode == "final-time":
        from .certifier import verify_theorem31 as run
    elif spec.mode == "all-time":
        from .certifier import verify_corollary31 as run
    else:
        run = verify
    res = run(problem, ansatz, spec.options)
    rec = ProbeRecord(value=value, status=res.status,
                      solver_status=res.solver_status,
                      iterations=res.iterations,
                      residuals=dict(res.residuals or {}),
                      wall_time=time.monotonic() - t0)
    return rec, res


class _Driver:
    """Shared bisection machinery; `feasible_high` orients the frontier."""

    def __init__(self, source, spec: SearchSpec, feasible_high: bool):
        self.source = source
        self.spec = spec
        self.feasible_high = feasible_high
        self.probes: list[ProbeRecord] = []
        self.results: dict[float, CertifyResult] = {}
        self._csv = None
        self._writer = None
        if spec.csv_path:
            self._csv = open(spec.csv_path, "w", newline="")
            self._writer = csv.writer(self._csv)
            self._writer.writerow(_CSV_HEADER)

    def close(self):
        if self._csv:
            self._csv.close()
            self._csv = None

    def _record(self, rec: ProbeRecord, res: CertifyResult):
        self.probes.append(rec)
        self.results[rec.value] = res
        if self._writer:
            self._writer.writerow(_csv_row(rec))
            self._csv.flush()

    def probe(self, value: float) -> bool:
        if value in self.results:
            return self.results[value].certified
        rec, res = _probe(self.source, self.spec, value)
        self._record(rec, res)
        return res.certified

    def probe_many(self, values: list[float]) -> list[bool]:
        todo = [v for v in values if v not in self.results]
        if len(todo) > 1 and self.spec.workers > 1:
            with ThreadPoolExecutor(max_workers=self.spec.workers) as pool:
                out = list(pool.map(lambda v: _probe(self.source, self.spec, v), todo))
            for rec, res in out:
                self._record(rec, res)
        else:
            for v in todo:
                self.probe(v)
        return [self.results[v].certified for v in values]

    def run(self) -> SearchResult:
        spec = self.spec
        lo, hi = spec.lo, spec.hi
        feas_end, infeas_end = (hi, lo) if self.feasible_high else (lo, hi)
        try:
            ok_feas, ok_infeas = self.probe_many([feas_end, infeas_end])
            if not ok_feas:
                raise BracketError(
                    f"{spec.parameter} = {feas_end} must be certifiable but the "
                    f"probe returned {self.results[feas_end].status!r}; widen the "
                    "bracket or raise the ansatz/multiplier degrees")
            if ok_infeas:
                raise BracketError(
                    f"{spec.parameter} = {infeas_end} was certified, so the whole "
                    "bracket is feasible; move the bracket toward the frontier")
            best = feas_end
            while hi - lo > spec.tolerance:
                if len(self.probes) >= spec.max_probes:
                    break
                w = max(1, min(spec.workers, spec.max_probes - len(self.probes)))
                mids = [lo + (hi - lo) * (i + 1) / (w + 1) for i in range(w)]
                flags = self.probe_many(mids)
                # tighten to the subinterval that still straddles the frontier
                pts = [lo, *mids, hi]
                if self.feasible_high:
                    # feasible above: find first certified point
                    cut = next(i for i, v in enumerate([*flags, True]) if v)
                    lo = pts[cut]
                    hi = pts[cut + 1]
                    best = hi
                else:
                    # feasible below: find last certified point
                    cut = max(i for i, v in enumerate([True, *flags]) if v)
                    lo = pts[cut]
                    hi = pts[cut + 1]
                    best = lo
            res = self.results[best]
            return SearchResult(value=best, certificate=res.certificate,
                                result=res, probes=self.probes,
                                direction="min" if self.feasible_high else "max")
        finally:
            self.close()


def minimize_gamma(source, spec: SearchSpec) -> SearchResult:
    """Smallest certified value of an easier-when-larger parameter.

    ``source`` is a problem-file path (the parameter is overridden per
    probe) or a callable mapping a parameter value to a ``PdeProblem``.
    Requires ``spec.hi`` certifiable and ``spec.lo`` not; raises
    ``BracketError`` otherwise.
    """
    return _Driver(source, spec, feasible_high=True).run()


def maximize_lambda(source, spec: SearchSpec) -> SearchResult:
    """Largest certified value of an easier-when-smaller parameter.

    Requires ``spec.lo`` certifiable and ``spec.hi`` not; raises
    ``BracketError`` otherwise.
    """
    return _Driver(source, spec, feasible_high=False).run()


def reprobe_invariants(source, spec: SearchSpec, result: SearchResult) -> dict:
    """Audit a finished search: the returned value shifted by one tolerance
    toward feasibility must certify, shifted the other way it must not."""
    sign = 1.0 if result.direction == "min" else -1.0
    rec_f, res_f = _probe(source, spec, result.value + sign * spec.tolerance)
    rec_i, res_i = _probe(source, spec, result.value - sign * spec.tolerance)
    return {
        "feasible_side_certified": res_f.certified,
        "infeasible_side_certified": res_i.certified,
        "ok": res_f.certified and not res_i.certified,
        "probes": [rec_f, rec_i],
    }
