import numpy as np
import pytest

from conftest import heat_trace
from fracorder.errors import AssumptionWarning, TailError
from fracorder.forward import (
    ForwardConfig,
    TimeGrid,
    TraceSeries,
    read_trace,
    solve_trace_delta,
    solve_trace_l2,
    trace_from_weights,
    truncation_bound,
    write_trace,
)
from fracorder.mlf import FractionalModel
from fracorder.spectral import ModalWeights

HALF = FractionalModel((0.5,), (1.0,))


def test_time_grid():
    g = TimeGrid(0.1, 10.0, 3)
    assert np.allclose(g.times(), [0.1, 1.0, 10.0])
    assert np.allclose(TimeGrid(1.0, 3.0, 3, "linear").times(), [1, 2, 3])
    for bad in [(1.0, 0.5, 3), (0.0, 1.0, 3), (0.1, 1.0, 1)]:
        with pytest.raises(ValueError):
            TimeGrid(*bad)
    with pytest.raises(ValueError):
        TimeGrid(spacing="random")


def test_config_validation():
    with pytest.raises(ValueError):
        ForwardConfig(mode_count=0)
    with pytest.raises(ValueError):
        ForwardConfig(mode_tail_tol=0.0)
    with pytest.raises(ValueError):
        ForwardConfig(ode_levels=1, estimate_error=True)


def test_trace_series_validation():
    with pytest.raises(ValueError):
        TraceSeries([1.0, 0.5], [1.0, 1.0])
    with pytest.raises(ValueError):
        TraceSeries([1.0, 2.0], [1.0, np.nan])
    tr = TraceSeries([1.0, 2.0], [3.0, 4.0])
    assert tr.window == (1.0, 2.0) and len(tr) == 2


def test_classical_heat_trace(cosine_eigs):
    cfg = ForwardConfig(mode_count=200, mode_tail_tol=1e-6, time_grid=TimeGrid(0.1, 2.0, 12), ode_initial_steps=512, ode_substeps=32, ode_levels=3)
    trace = solve_trace_delta(cosine_eigs, FractionalModel((1.0,), (1.0,)), cfg)
    exact = heat_trace(trace.times)
    assert np.max(np.abs(trace.values - exact) / exact) <= 1e-6


def test_truncation_metadata(interval):
    eigs, weights = interval
    cfg = ForwardConfig(mode_count=60, mode_tail_tol=1e-6, time_grid=TimeGrid(1e-3, 10.0, 20))
    trace = solve_trace_l2(eigs, weights, HALF, cfg)
    assert 1 <= trace.meta["modes"] <= 60
    assert trace.meta["tail_estimate"] <= 1e-6
    assert trace.meta["model.orders"] == [0.5]


def test_tail_error_when_modes_insufficient(interval):
    eigs, weights = interval
    cfg = ForwardConfig(mode_count=3, mode_tail_tol=1e-9, time_grid=TimeGrid(1e-4, 1.0, 10))
    with pytest.raises(TailError):
        solve_trace_l2(eigs, weights, HALF, cfg)


def test_more_modes_change_little(interval):
    eigs, weights = interval
    times = np.geomspace(1e-2, 10.0, 15)
    full = trace_from_weights(weights, HALF, times)
    half = trace_from_weights(weights.truncated(30), HALF, times)
    bound = truncation_bound(eigs, HALF, 30, 1e-2, weights)
    assert np.max(np.abs(full - half)) <= bound


def test_truncation_bound_decreases(cosine_eigs):
    model = FractionalModel((0.3, 0.7), (1.0, 2.0))
    bounds = [truncation_bound(cosine_eigs, model, J, 0.01) for J in (10, 50, 150)]
    assert bounds[0] > bounds[1] > bounds[2] > 0
    with pytest.raises(ValueError):
        truncation_bound(cosine_eigs, model, 0, 0.01)


def test_linearity_in_weights(interval):
    _, weights = interval
    times = np.geomspace(1e-2, 5.0, 10)
    other = ModalWeights(np.cos(np.arange(len(weights))), weights.lambdas)
    lhs = trace_from_weights(weights + other, HALF, times)
    rhs = trace_from_weights(weights, HALF, times) + trace_from_weights(other, HALF, times)
    assert np.allclose(lhs, rhs, rtol=0, atol=1e-13)


def test_batched_models_match_single(interval):
    _, weights = interval
    times = np.geomspace(1e-2, 5.0, 10)
    models = [HALF, FractionalModel((0.2, 0.9), (1.0, 0.5))]
    batch = trace_from_weights(weights, models, times, grid_order=0.5)
    for k, m in enumerate(models):
        assert np.allclose(batch[k], trace_from_weights(weights, m, times, grid_order=0.5), atol=1e-14)


def test_negative_data_warns(interval):
    eigs, weights = interval
    with pytest.warns(AssumptionWarning):
        solve_trace_l2(eigs, weights, HALF, ForwardConfig(mode_count=60, time_grid=TimeGrid(0.01, 1.0, 5)), initial_data=-eigs.mesh)


def test_wrong_boundary_conditions(interval, cosine_eigs):
    eigs, weights = interval
    with pytest.raises(ValueError):
        solve_trace_delta(eigs, HALF)
    with pytest.raises(ValueError):
        solve_trace_l2(cosine_eigs, weights, HALF)


def test_csv_round_trip(tmp_path, interval):
    eigs, weights = interval
    trace = solve_trace_l2(eigs, weights, HALF, ForwardConfig(mode_count=60, time_grid=TimeGrid(0.01, 1.0, 8)), x0=0.5)
    path = tmp_path / "trace.csv"
    write_trace(trace, path)
    back = read_trace(path)
    assert np.array_equal(back.times, trace.times)
    assert np.array_equal(back.values, trace.values)
    write_trace(back, tmp_path / "again.csv")
    assert (tmp_path / "again.csv").read_text().splitlines()[-8:] == path.read_text().splitlines()[-8:]


@pytest.mark.parametrize(
    "text",
    [
        "t,value\n1,2\n",
        "# fracorder-trace v1\nt,v\n1,2\n2,3\n3,4\n4,5\n",
        "# fracorder-trace v1\nt,value\n1,2\n2,3\n",
        "# fracorder-trace v1\nt,value\n1,2,3\n2,3\n3,4\n4,5\n",
        "# fracorder-trace v1\nt,value\n1,x\n2,3\n3,4\n4,5\n",
    ],
)
def test_csv_rejects_malformed(tmp_path, text):
    path = tmp_path / "bad.csv"
    path.write_text(text)
    with pytest.raises(ValueError):
        read_trace(path)


@pytest.mark.parametrize("orders", [(0.5,), (0.2, 0.9), (0.3, 0.6, 0.95)])
def test_doubling_modes_changes_trace_below_tolerance(interval, orders):
    eigs, weights = interval
    model = FractionalModel(orders, (1.0,) * len(orders))
    cfg = ForwardConfig(mode_count=60, mode_tail_tol=1e-5, time_grid=TimeGrid(0.1, 5.0, 10))
    trace = solve_trace_l2(eigs, weights, model, cfg)
    J = trace.meta["modes"]
    assert 2 * J <= len(weights)
    doubled = trace_from_weights(weights.truncated(2 * J), model, trace.times, cfg)
    assert np.max(np.abs(doubled - trace.values)) <= cfg.mode_tail_tol
