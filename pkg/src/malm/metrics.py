"""KKT residuals, iteration traces, output selection and trace averaging."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import DimensionError, FormatError
from .numerics import as_vector
from .problems import full_gradient, objective

__all__ = [
    "IterationRecord",
    "Trace",
    "AveragedCurve",
    "Reservoir",
    "TRACE_HEADER",
    "kkt_residuals",
    "make_record",
    "select_output",
    "average_traces",
    "write_trace_csv",
    "read_trace_csv",
    "format_float",
]

TRACE_HEADER = ("iter", "grad_evals", "elapsed_ns", "stationarity", "feasibility", "objective")


@dataclass(frozen=True)
class IterationRecord:
    iter: int
    stationarity: float
    feasibility: float
    objective: float
    grad_evals: int
    elapsed_ns: int = 0

    @property
    def combined(self):
        return self.stationarity + self.feasibility


@dataclass
class Trace:
    records: list
    solver: str
    seed: int = 0
    trial: int = 0
    constants: object = None
    params: object = None
    x: np.ndarray | None = None
    mu: np.ndarray | None = None
    selections: list = field(default_factory=list)
    diverged_at: int | None = None

    @property
    def final(self):
        return self.records[-1]

    def column(self, name):
        return np.array([getattr(rec, name) for rec in self.records], dtype=float)


@dataclass
class AveragedCurve:
    abscissa: np.ndarray
    stationarity: np.ndarray
    feasibility: np.ndarray
    axis: str
    solver: str
    n_traces: int
    objective: np.ndarray | None = None
    elapsed_ns: np.ndarray | None = None
    iters: np.ndarray | None = None
    grad_evals: np.ndarray | None = None


def kkt_residuals(problem, x, mu):
    """Return ``(||grad f(x) + A^T mu||, ||Ax - b||)`` with the exact gradient."""
    x = as_vector(x, problem.d, "x")
    mu = as_vector(mu, problem.m, "mu")
    stat = np.linalg.norm(full_gradient(problem, x) + problem.A.T @ mu)
    feas = np.linalg.norm(problem.A @ x - problem.b)
    return float(stat), float(feas)


def make_record(problem, state, elapsed_ns=0):
    stat, feas = kkt_residuals(problem, state.x, state.mu)
    return IterationRecord(
        iter=state.r, stationarity=stat, feasibility=feas,
        objective=objective(problem, state.x), grad_evals=state.grad_evals,
        elapsed_ns=int(elapsed_ns),
    )


class Reservoir:
    """Size-one reservoir: after offers ``1..K`` holds each one w.p. ``1/K``.

    Used to draw the output pair ``(x^{R+1}, mu^{R+1})`` with ``R`` uniform on
    ``{0, ..., K-1}`` without storing the trajectory.
    """

    def __init__(self, rng):
        self.rng = rng
        self.count = 0
        self.index = None
        self.x = None
        self.mu = None

    def offer(self, index, x, mu):
        self.count += 1
        if self.rng.random() * self.count < 1.0:
            self.index = index
            self.x = x
            self.mu = mu

    @property
    def item(self):
        return self.index, self.x, self.mu


def select_output(trace, mode="uniform_random", draw=0):
    """Pick the reported iterate of a finished run.

    ``uniform_random`` returns the `draw`-th reservoir sample taken during the
    run, ``best_combined`` the recorded iterate with the smallest
    stationarity + feasibility, ``last`` the final pair. For the recorded
    modes only the index is meaningful for intermediate records, since
    traces do not keep intermediate iterates; ``x``/``mu`` are returned when
    the chosen record is the final one.
    """
    if not trace.records:
        raise ValueError("empty trace")
    if mode == "uniform_random":
        if not trace.selections:
            raise ValueError("trace was run without reservoir selection")
        return trace.selections[draw]
    if mode == "last":
        return trace.final.iter, trace.x, trace.mu
    if mode == "best_combined":
        k = int(np.argmin([rec.combined for rec in trace.records]))
        rec = trace.records[k]
        if k == len(trace.records) - 1:
            return rec.iter, trace.x, trace.mu
        return rec.iter, None, None
    raise ValueError(f"unknown selection mode {mode!r}")


def _step_interp(xs, ys, grid):
    # last value at or before each grid point; before the first record use the first value
    idx = np.searchsorted(xs, grid, side="right") - 1
    return ys[np.clip(idx, 0, len(xs) - 1)]


def average_traces(traces, grid="by_iter", points=None):
    """Pointwise mean of stationarity/feasibility over trials.

    ``by_iter`` requires identical record grids. ``by_grad_evals`` aligns each
    trace on the gradient-evaluation axis with last-value interpolation; the
    abscissa is `points` if given, else the union of all record positions.
    Wall-clock is aggregated by the per-point median.
    """
    if not traces:
        raise ValueError("no traces to average")
    solvers = {t.solver for t in traces}
    if len(solvers) != 1:
        raise ValueError(f"traces mix solver tags {sorted(solvers)}")
    solver = solvers.pop()
    if grid == "by_iter":
        iters = traces[0].column("iter")
        for t in traces[1:]:
            if len(t.records) != len(iters) or not np.array_equal(t.column("iter"), iters):
                raise DimensionError("record grids differ across traces")
        cols = {name: np.array([t.column(name) for t in traces])
                for name in ("stationarity", "feasibility", "objective", "elapsed_ns", "grad_evals")}
        return AveragedCurve(
            abscissa=iters, stationarity=cols["stationarity"].mean(axis=0),
            feasibility=cols["feasibility"].mean(axis=0), axis="iter", solver=solver,
            n_traces=len(traces), objective=cols["objective"].mean(axis=0),
            elapsed_ns=np.median(cols["elapsed_ns"], axis=0), iters=iters,
            grad_evals=cols["grad_evals"].mean(axis=0),
        )
    if grid == "by_grad_evals":
        if points is None:
            points = np.unique(np.concatenate([t.column("grad_evals") for t in traces]))
        points = np.asarray(points, dtype=float)
        stat = np.zeros_like(points)
        feas = np.zeros_like(points)
        obj = np.zeros_like(points)
        for t in traces:
            ge = t.column("grad_evals")
            stat += _step_interp(ge, t.column("stationarity"), points)
            feas += _step_interp(ge, t.column("feasibility"), points)
            obj += _step_interp(ge, t.column("objective"), points)
        n = len(traces)
        return AveragedCurve(
            abscissa=points, stationarity=stat / n, feasibility=feas / n,
            axis="grad_evals", solver=solver, n_traces=n, objective=obj / n,
            grad_evals=points,
        )
    raise ValueError(f"unknown grid {grid!r}")


# ---------------------------------------------------------------------------
# CSV


def format_float(v):
    """Shortest repr that round-trips; 17 significant digits at most."""
    v = float(v)
    if math.isnan(v) or math.isinf(v):
        return repr(v)
    return repr(v) if float(repr(v)) == v else f"{v:.17g}"


def _rows_from_records(records):
    for rec in records:
        yield (str(rec.iter), str(rec.grad_evals), str(rec.elapsed_ns),
               format_float(rec.stationarity), format_float(rec.feasibility),
               format_float(rec.objective))


def _rows_from_curve(curve):
    n = len(curve.abscissa)
    iters = curve.iters if curve.iters is not None else np.full(n, -1)
    ge = curve.grad_evals if curve.grad_evals is not None else curve.abscissa
    el = curve.elapsed_ns if curve.elapsed_ns is not None else np.zeros(n)
    obj = curve.objective if curve.objective is not None else np.full(n, np.nan)
    for i in range(n):
        yield (str(int(iters[i])), format_float(ge[i]) if ge[i] != int(ge[i]) else str(int(ge[i])),
               str(int(round(el[i]))), format_float(curve.stationarity[i]),
               format_float(curve.feasibility[i]), format_float(obj[i]))


def write_trace_csv(obj, path=None):
    """Write a :class:`Trace` or :class:`AveragedCurve` in the trace CSV schema.

    Returns the CSV text; writes it to `path` when given.
    """
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TRACE_HEADER)
    rows = _rows_from_curve(obj) if isinstance(obj, AveragedCurve) else _rows_from_records(obj.records)
    w.writerows(rows)
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text)
    return text


def read_trace_csv(path, solver=None):
    """Parse a trace CSV back into a :class:`Trace`; errors name the bad row."""
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise FormatError(f"{path}: empty file") from None
        if tuple(header) != TRACE_HEADER:
            raise FormatError(f"{path}: row 1: unexpected header {header}")
        records = []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(TRACE_HEADER):
                raise FormatError(f"{path}: row {lineno}: expected 6 fields, got {len(row)}")
            try:
                records.append(IterationRecord(
                    iter=int(row[0]), grad_evals=int(float(row[1])), elapsed_ns=int(row[2]),
                    stationarity=float(row[3]), feasibility=float(row[4]), objective=float(row[5]),
                ))
            except ValueError as exc:
                raise FormatError(f"{path}: row {lineno}: {exc}") from None
    return Trace(records=records, solver=solver or path.stem)
