"""Geodesic engine tests against closed-form and hand-built oracles."""

import json

import numpy as np
import pytest

from carnot.errors import NonFiniteState, TooFewSamples, UnsupportedStep
from carnot.geodesics import (
    GeodesicTrace,
    MomentumState,
    abnormal_residual,
    integrate_normal,
    integrate_stepwise,
    normal_rhs,
)
from carnot.groups import (
    build_group,
    engel,
    frame_apply,
    frame_solve,
    h1,
    hn,
    left_frame,
    random_two_step,
)


def h1_orbit(lam, t):
    """Unit-speed circle orbit from the origin with P0 = (1, 0, lam)."""
    t = np.asarray(t, dtype=float)
    x = np.stack(
        [
            np.sin(lam * t) / lam,
            (1.0 - np.cos(lam * t)) / lam,
            (lam * t - np.sin(lam * t)) / (2.0 * lam**2),
        ],
        axis=-1,
    )
    p = np.stack(
        [np.cos(lam * t), np.sin(lam * t), np.full_like(t, lam)], axis=-1
    )
    return x, p


def test_frame_apply_matches_matrix():
    rng = np.random.default_rng(1)
    for g in (h1(), engel(), hn(2), random_two_step(5, 2, rng)):
        x = rng.standard_normal(g.n)
        w = rng.standard_normal(g.n)
        np.testing.assert_allclose(
            frame_apply(g, x, w), left_frame(g, x) @ w, atol=1e-14
        )
        np.testing.assert_allclose(
            frame_solve(g, x, w),
            np.linalg.solve(left_frame(g, x), w),
            atol=1e-13,
        )


def test_normal_rhs_h1_values():
    g = h1()
    lam = 2.0
    dx, dP = normal_rhs(g, np.zeros(3), np.array([1.0, 0.0, lam]))
    np.testing.assert_allclose(dx, [1.0, 0.0, 0.0], atol=1e-15)
    # dP = -lam * [[0,1],[-1,0]] @ (1,0) padded: rotation starts upward
    np.testing.assert_allclose(dP, [0.0, lam, 0.0], atol=1e-15)
    dx, dP = normal_rhs(g, np.zeros(3), np.array([0.0, 1.0, lam]))
    np.testing.assert_allclose(dP, [-lam, 0.0, 0.0], atol=1e-15)


def test_normal_rhs_batch():
    g = engel()
    rng = np.random.default_rng(4)
    xs = rng.standard_normal((7, 4))
    ps = rng.standard_normal((7, 4))
    dx, dP = normal_rhs(g, xs, ps)
    for i in range(7):
        dxi, dPi = normal_rhs(g, xs[i], ps[i])
        np.testing.assert_array_equal(dx[i], dxi)
        np.testing.assert_array_equal(dP[i], dPi)


def test_h1_integration_matches_analytic():
    g = h1()
    lam = 1.3
    T = 2.0 * np.pi / lam
    tr = integrate_normal(g, np.zeros(3), [1.0, 0.0, lam], T, 2000)
    x_ref, p_ref = h1_orbit(lam, tr.times)
    assert np.max(np.abs(tr.xs - x_ref)) < 1e-9
    assert np.max(np.abs(tr.ps - p_ref)) < 1e-9
    # full turn returns to the vertical axis
    np.testing.assert_allclose(
        tr.xs[-1], [0.0, 0.0, np.pi / lam**2], atol=1e-9
    )


def test_conservation_diagnostics():
    g = h1()
    tr = integrate_normal(g, np.zeros(3), [0.6, -0.8, 2.0], 5.0, 2000)
    assert tr.meta["energy_drift_per_unit_time"] < 1e-13
    assert tr.meta["ph_norm_drift_per_unit_time"] < 1e-13
    assert tr.meta["top_layer_drift"] == 0.0
    ge = engel()
    tr = integrate_normal(ge, np.zeros(4), [0.3, 0.9, -0.4, 0.7], 3.0, 1500)
    assert tr.meta["energy_drift_per_unit_time"] < 1e-12
    assert tr.meta["top_layer_drift"] == 0.0


def test_integration_batch_consistency():
    g = hn(2)
    rng = np.random.default_rng(9)
    P0 = rng.standard_normal((4, 5))
    tr = integrate_normal(g, np.zeros(5), P0, 1.0, 200)
    assert tr.xs.shape == (201, 4, 5)
    for i in range(4):
        single = integrate_normal(g, np.zeros(5), P0[i], 1.0, 200)
        np.testing.assert_allclose(tr.xs[:, i], single.xs, atol=1e-14)


def test_stepwise_matches_normal_2step():
    rng = np.random.default_rng(21)
    for g in (h1(), hn(2), random_two_step(4, 2, rng)):
        P0 = rng.standard_normal(g.n)
        a = integrate_normal(g, np.zeros(g.n), P0, 1.0, 800)
        b = integrate_stepwise(g, np.zeros(g.n), P0, 1.0, 800)
        assert np.max(np.abs(a.xs - b.xs)) < 1e-9
        assert np.max(np.abs(a.ps - b.ps)) < 1e-9


def test_stepwise_matches_normal_engel():
    g = engel()
    rng = np.random.default_rng(33)
    for _ in range(5):
        P0 = rng.standard_normal(4)
        x0 = rng.standard_normal(4) * 0.3
        a = integrate_normal(g, x0, P0, 1.0, 1000)
        b = integrate_stepwise(g, x0, P0, 1.0, 1000)
        assert np.max(np.abs(a.xs - b.xs)) < 1e-8
        assert np.max(np.abs(a.ps - b.ps)) < 1e-8


def test_stepwise_abelian():
    g = build_group((3,), [])
    tr = integrate_stepwise(g, np.zeros(3), [1.0, 2.0, -1.0], 2.0, 10)
    np.testing.assert_allclose(tr.xs[-1], [2.0, 4.0, -2.0], atol=1e-14)


def test_stepwise_rejects_step4():
    g = build_group(
        (2, 1, 1, 1), [(3, 1, 2, 1.0), (4, 1, 3, 1.0), (5, 1, 4, 1.0)]
    )
    with pytest.raises(UnsupportedStep):
        integrate_stepwise(g, np.zeros(5), np.ones(5), 1.0, 10)


def test_nonfinite_detection():
    g = h1()
    with pytest.raises(NonFiniteState):
        integrate_normal(g, np.zeros(3), [1e200, 0.0, 1e200], 10.0, 50)


def test_too_few_samples():
    g = h1()
    with pytest.raises(TooFewSamples):
        integrate_normal(g, np.zeros(3), np.ones(3), 1.0, 0)
    tiny = integrate_normal(g, np.zeros(3), np.ones(3), 1.0, 2)
    with pytest.raises(TooFewSamples):
        abnormal_residual(g, tiny)


def test_richardson_diagnostic():
    g = h1()
    tr = integrate_normal(g, np.zeros(3), [1.0, 0.0, 3.0], 2.0, 100, richardson=True)
    assert 0.0 < tr.meta["richardson_error"] < 1e-6
    fine = integrate_normal(g, np.zeros(3), [1.0, 0.0, 3.0], 2.0, 3200)
    true_err = max(
        np.max(np.abs(tr.xs[-1] - fine.xs[-1])),
        np.max(np.abs(tr.ps[-1] - fine.ps[-1])),
    )
    assert 0.5 * true_err < tr.meta["richardson_error"] < 2.0 * true_err


def test_abnormal_residual_on_true_abnormal():
    # growth (3,2) with [e1,e2]=e4, [e1,e3]=e5: the e2-axis line with
    # covector P = e5 satisfies all four abnormal conditions.
    g = build_group((3, 2), [(4, 1, 2, 1.0), (5, 1, 3, 1.0)])
    times = np.linspace(0.0, 1.0, 101)
    xs = np.zeros((101, 5))
    xs[:, 1] = times
    ps = np.zeros((101, 5))
    ps[:, 4] = 1.0
    res = abnormal_residual(g, GeodesicTrace(times, xs, ps))
    assert res["consistent"]
    for name in (
        "algebraic",
        "vertical_momentum",
        "vertical_velocity",
        "horizontal_momentum",
    ):
        assert res["sup"][name] < 1e-12


def test_abnormal_residual_flags_normal_geodesic():
    g = h1()
    tr = integrate_normal(g, np.zeros(3), [1.0, 0.0, 1.0], 1.0, 100)
    res = abnormal_residual(g, tr)
    assert not res["consistent"]
    np.testing.assert_allclose(res["horizontal_momentum"], 1.0, atol=1e-12)


def test_trace_exports():
    g = h1()
    tr = integrate_normal(g, np.zeros(3), [1.0, 0.0, 0.5], 1.0, 4)
    table = tr.as_table()
    lines = table.strip().split("\n")
    assert lines[0].split() == ["t", "x1", "x2", "x3", "P1", "P2", "P3"]
    assert len(lines) == 6
    first = [float(tok) for tok in lines[1].split()]
    np.testing.assert_allclose(first, [0, 0, 0, 0, 1, 0, 0.5], atol=1e-15)
    blob = json.loads(tr.as_json())
    assert blob["meta"]["method"] == "rk4-normal"
    assert len(blob["times"]) == 5
    st = tr.state(0)
    assert isinstance(st, MomentumState)
    np.testing.assert_array_equal(st.P, [1.0, 0.0, 0.5])


def test_momentum_state_validation():
    with pytest.raises(ValueError):
        MomentumState(np.zeros(3), np.zeros(4))
