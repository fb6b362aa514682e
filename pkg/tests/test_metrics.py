import numpy as np
import pytest
from scipy.stats import chisquare

from malm.exceptions import DimensionError, FormatError
from malm.metrics import (
    TRACE_HEADER,
    IterationRecord,
    Reservoir,
    Trace,
    average_traces,
    kkt_residuals,
    read_trace_csv,
    select_output,
    write_trace_csv,
)
from malm.numerics import RngStream
from malm.problems import make_quadratic


def rec(i, stat, feas=0.0, ge=None, ns=0, obj=0.0):
    return IterationRecord(iter=i, grad_evals=i + 1 if ge is None else ge, elapsed_ns=ns,
                           stationarity=stat, feasibility=feas, objective=obj)


def trace(stats, solver="malm", step=1, per=1, feas=None):
    feas = feas or [0.0] * len(stats)
    return Trace(records=[rec(k * step, s, f, ge=per * k * step + 1)
                          for k, (s, f) in enumerate(zip(stats, feas))], solver=solver)


def test_kkt_residuals_by_hand():
    p = make_quadratic([[1.0]], [0.0], [[1.0]], [0.0])
    stat, feas = kkt_residuals(p, [0.25], [0.5])
    assert stat == pytest.approx(0.75) and feas == pytest.approx(0.25)


def test_kkt_residuals_vanish_at_solution():
    p = make_quadratic(np.eye(2), np.zeros(2), [[1.0, 1.0]], [1.0])
    stat, feas = kkt_residuals(p, p.x_star, p.mu_star)
    assert stat < 1e-14 and feas < 1e-14


def reservoir_oracle(us):
    # replacement at offer j happens iff u_j < 1/j
    chosen = None
    for j, u in enumerate(us, start=1):
        if u < 1.0 / j:
            chosen = j
    return chosen


@pytest.mark.parametrize("seed", range(20))
def test_reservoir_matches_full_history_rule(seed):
    K = 37
    res = Reservoir(RngStream(seed))
    for j in range(1, K + 1):
        res.offer(j, np.array([j]), np.array([-j]))
    us = RngStream(seed).random(K)
    idx, x, mu = res.item
    assert idx == reservoir_oracle(us)
    assert x[0] == idx and mu[0] == -idx


def test_reservoir_is_uniform():
    K, n = 10, 20_000
    counts = np.zeros(K)
    for s in range(n):
        res = Reservoir(RngStream(s, 0, (1,)))
        for j in range(1, K + 1):
            res.offer(j, None, None)
        counts[res.index - 1] += 1
    assert chisquare(counts).pvalue > 1e-3


def test_reservoir_single_offer():
    res = Reservoir(RngStream(0))
    res.offer(1, "x", "mu")
    assert res.item == (1, "x", "mu")


def test_select_output_modes():
    t = trace([3.0, 1.0, 2.0], feas=[0.0, 0.5, 0.0])
    t.x, t.mu, t.selections = "X", "MU", [(2, "x2", "mu2")]
    assert select_output(t, "uniform_random") == (2, "x2", "mu2")
    assert select_output(t, "last") == (2, "X", "MU")
    assert select_output(t, "best_combined")[0] == 1
    with pytest.raises(ValueError):
        select_output(t, "nope")


def test_average_by_iter():
    a, b = trace([1.0, 3.0]), trace([3.0, 5.0])
    avg = average_traces([a, b])
    np.testing.assert_array_equal(avg.stationarity, [2.0, 4.0])
    np.testing.assert_array_equal(avg.abscissa, [0, 1])
    assert avg.n_traces == 2


def test_average_rejects_mixed_inputs():
    with pytest.raises(ValueError):
        average_traces([trace([1.0]), trace([1.0], solver="spd")])
    with pytest.raises(DimensionError):
        average_traces([trace([1.0, 2.0]), trace([1.0, 2.0], step=2)])


def test_average_by_grad_evals_uses_last_value():
    # grad_evals 1, 3, 5 versus 1, 2, 3
    a = trace([4.0, 2.0, 1.0], per=2)
    b = trace([8.0, 6.0, 4.0], per=1)
    avg = average_traces([a, b], grid="by_grad_evals", points=[1, 2, 3, 4, 5])
    np.testing.assert_array_equal(avg.stationarity, [6.0, 5.0, 3.0, 3.0, 2.5])
    assert avg.axis == "grad_evals"


def test_csv_round_trip(tmp_path):
    t = trace([1 / 3, 1e-300, 2.5e10], feas=[0.1, 0.2, np.pi])
    path = tmp_path / "malm.csv"
    text = write_trace_csv(t, path)
    assert text.splitlines()[0] == ",".join(TRACE_HEADER)
    back = read_trace_csv(path)
    assert back.solver == "malm"
    assert back.records == t.records


def test_averaged_curve_writes_same_schema(tmp_path):
    avg = average_traces([trace([1.0, 3.0]), trace([3.0, 5.0])])
    write_trace_csv(avg, tmp_path / "x.csv")
    back = read_trace_csv(tmp_path / "x.csv")
    np.testing.assert_array_equal(back.column("stationarity"), [2.0, 4.0])


@pytest.mark.parametrize("body,row", [
    ("iter,grad_evals\n", 1),
    (",".join(TRACE_HEADER) + "\n0,1,0,1.0,0.0\n", 2),
    (",".join(TRACE_HEADER) + "\n0,1,0,1.0,0.0,0.0\n1,2,0,abc,0.0,0.0\n", 3),
])
def test_csv_errors_name_the_row(tmp_path, body, row):
    path = tmp_path / "bad.csv"
    path.write_text(body)
    with pytest.raises(FormatError, match=f"row {row}"):
        read_trace_csv(path)
