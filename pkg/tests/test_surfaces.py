"""Hypersurface normal, chart, and horizontal-distance tests.

The vertical hyperplane {x1 = 0} is the exactly solvable case: its metric
normals are straight lines, delta_H(x) = |x1| on the nose, and the chart
Jacobian is 1. The surface {x3 = 0} supplies the characteristic point at
the origin and the closed-form Jacobian value 1/2 at (1, 0, 0).
"""

import numpy as np
import pytest

from carnot.distance import distance_point
from carnot.errors import (
    Characteristic,
    NotOnSurface,
    OutsideChart,
    ZeroGradient,
)
from carnot.groups import group_product, h1, hn
from carnot.surfaces import (
    build_chart,
    coordinate_hyperplane,
    delta_H,
    frame_gradient,
    grad_delta_H,
    metric_normal,
    phi_jacobian,
    phi_map,
    polynomial_field,
    project_to_surface,
    surface_normals,
)


def paraboloid():
    # f = x1 - x2^2: curved, non-characteristic near the origin
    return polynomial_field(
        3, [(1.0, (1, 0, 0)), (-1.0, (0, 2, 0))], name="x1-x2^2"
    )


def test_normals_h1_reference_values():
    g = h1()
    f3 = coordinate_hyperplane(3, 3)
    nd = surface_normals(g, f3, [1.0, 0.0, 0.0])
    assert not nd.characteristic
    np.testing.assert_allclose(nd.nuH, [0.0, 1.0], atol=1e-14)
    np.testing.assert_allclose(nd.varpi, [2.0], atol=1e-14)
    np.testing.assert_allclose(nd.N, [0.0, 1.0, 2.0], atol=1e-14)
    # frame gradient itself: X1 f = 0, X2 f = 1/2, X3 f = 1
    np.testing.assert_allclose(
        frame_gradient(g, f3, np.array([1.0, 0.0, 0.0])),
        [0.0, 0.5, 1.0],
        atol=1e-14,
    )


def test_characteristic_point_flagged_not_fatal():
    g = h1()
    nd = surface_normals(g, coordinate_hyperplane(3, 3), np.zeros(3))
    assert nd.characteristic
    assert nd.nuH is None and nd.varpi is None
    np.testing.assert_allclose(nd.nu, [0.0, 0.0, 1.0], atol=1e-14)
    with pytest.raises(Characteristic):
        nd.N


def test_vertical_hyperplane_normals_everywhere():
    g = hn(2)
    f1 = coordinate_hyperplane(5, 1)
    rng = np.random.default_rng(2)
    for _ in range(4):
        nd = surface_normals(g, f1, rng.normal(size=5))
        np.testing.assert_allclose(nd.nuH, [1.0, 0.0, 0.0, 0.0], atol=1e-13)
        np.testing.assert_allclose(nd.varpi, [0.0], atol=1e-13)


def test_zero_gradient_rejected():
    g = h1()
    flat = polynomial_field(3, [(1.0, (0, 0, 0))])
    with pytest.raises(ZeroGradient):
        surface_normals(g, flat, np.zeros(3))


def test_polynomial_field_gradient_matches_fd():
    rng = np.random.default_rng(3)
    fld = polynomial_field(
        4,
        [(0.7, (1, 0, 0, 0)), (-1.3, (0, 2, 1, 0)), (0.4, (0, 0, 0, 3))],
    )
    bare = type(fld)(f=fld.f)  # same values, fd gradient
    for _ in range(3):
        x = rng.normal(size=4)
        np.testing.assert_allclose(
            fld.coordinate_gradient(x),
            bare.coordinate_gradient(x),
            atol=1e-7,
        )
    with pytest.raises(ValueError):
        polynomial_field(3, [(1.0, (2, 2, 0))])
    with pytest.raises(ValueError):
        polynomial_field(3, [(1.0, (1, 0))])


def test_metric_normal_straight_case():
    g = h1()
    f1 = coordinate_hyperplane(3, 1)
    tr = metric_normal(g, f1, np.zeros(3), t_range=(0.0, 1.0), samples=21)
    line = np.outer(tr.times, [1.0, 0.0, 0.0])
    assert np.max(np.abs(tr.xs - line)) < 1e-14
    assert tr.meta["varpi_norm"] == 0.0


def test_metric_normal_momentum_and_mirror():
    g = h1()
    f3 = coordinate_hyperplane(3, 3)
    y = np.array([1.0, 0.0, 0.0])
    plus = metric_normal(g, f3, y, t_range=(0.0, 0.8), samples=9)
    np.testing.assert_allclose(plus.ps[0], [0.0, 1.0, 2.0], atol=1e-13)
    minus = metric_normal(g, f3, y, t_range=(0.0, -0.8), samples=9, sign=-1)
    # opposite orientation runs the same arc backwards in time
    np.testing.assert_allclose(minus.xs, plus.xs, atol=1e-12)


def test_metric_normal_gates():
    g = h1()
    f3 = coordinate_hyperplane(3, 3)
    with pytest.raises(NotOnSurface):
        metric_normal(g, f3, [0.0, 0.0, 0.5])
    with pytest.raises(Characteristic):
        metric_normal(g, f3, np.zeros(3))


def test_hyperplane_chart_is_exact():
    g = h1()
    chart = build_chart(
        g, coordinate_hyperplane(3, 1), np.zeros(3), radius=1.2, eps0=0.8
    )
    assert chart.eps0 == 0.8  # nothing to shrink for straight normals
    rng = np.random.default_rng(4)
    for _ in range(5):
        x = rng.uniform(-0.6, 0.6, size=3)
        y, t = project_to_surface(chart, x)
        assert abs(t - x[0]) < 1e-10
        assert abs(y[0]) < 1e-12
        assert abs(delta_H(chart, x) - abs(x[0])) < 1e-10
        back = phi_map(chart, y, t)
        assert np.max(np.abs(back - x)) < 1e-8


def test_projection_fixed_point_on_surface():
    g = h1()
    chart = build_chart(
        g, coordinate_hyperplane(3, 1), np.zeros(3), radius=1.0, eps0=0.5
    )
    x = np.array([0.0, 0.3, -0.2])
    res = project_to_surface(chart, x)
    assert abs(res.t) < 1e-10
    np.testing.assert_allclose(res.y, x, atol=1e-9)


def test_projection_distance_consistency():
    # |t| really is the CC-distance to the projected point
    g = h1()
    chart = build_chart(
        g, paraboloid(), np.zeros(3), radius=0.5, eps0=0.4
    )
    for x in ([0.25, 0.1, 0.05], [0.2, -0.15, -0.08]):
        res = project_to_surface(chart, np.asarray(x))
        d = distance_point(g, np.asarray(x), res.y).T
        assert abs(d - abs(res.t)) < 1e-5


def test_delta_lower_bounds_surface_grid():
    # no sampled surface point is closer than delta_H says
    g = h1()
    chart = build_chart(
        g, coordinate_hyperplane(3, 1), np.zeros(3), radius=1.6, eps0=0.9
    )
    x = np.array([0.3, 0.25, -0.1])
    d = delta_H(chart, x)
    assert abs(d - 0.3) < 1e-10
    from carnot.distance import distance_batch

    # grid centered on the analytic foot (x2, x3 + x1 x2 / 2); the vertical
    # surface coordinate needs fine resolution, the cost grows as res^2/d^3
    foot = np.array([0.25, -0.1 + 0.5 * 0.3 * 0.25])
    uu, vv = np.meshgrid(
        foot[0] + np.linspace(-0.45, 0.45, 31),
        foot[1] + np.linspace(-0.45, 0.45, 31),
        indexing="ij",
    )
    grid = np.stack(
        [np.zeros(uu.size), uu.ravel(), vv.ravel()], axis=-1
    )
    batch = distance_batch(g, x, grid, starts=6)
    assert batch.converged.all()
    assert batch.T.min() >= d - 1e-8
    # the foot sits on the grid, so the minimum lands on delta itself
    assert batch.T.min() - d < 1e-6


def test_phi_jacobian_values():
    g = h1()
    chart = build_chart(
        g, coordinate_hyperplane(3, 1), np.zeros(3), radius=1.0, eps0=0.5
    )
    pj = phi_jacobian(chart, np.array([0.0, 0.4, 0.1]))
    assert abs(pj.closed_form - 1.0) < 1e-12
    assert abs(pj.fd - pj.closed_form) < 1e-8

    f3 = coordinate_hyperplane(3, 3)
    chart3 = build_chart(g, f3, [1.0, 0.0, 0.0], radius=0.3, eps0=0.2)
    pj3 = phi_jacobian(chart3, np.array([1.0, 0.0, 0.0]))
    # |g_H| / |grad f| = |(0, 1/2)| / 1
    assert abs(pj3.closed_form - 0.5) < 1e-12
    assert abs(pj3.fd - pj3.closed_form) < 1e-6


def test_phi_jacobian_curved_surface():
    g = h1()
    chart = build_chart(g, paraboloid(), np.zeros(3), radius=0.5, eps0=0.4)
    rng = np.random.default_rng(6)
    for _ in range(4):
        u = rng.uniform(-0.3, 0.3, size=2)
        y = chart.surface_point(u[None, :])[0]
        pj = phi_jacobian(chart, y)
        assert abs(pj.fd - pj.closed_form) < 1e-5


def test_grad_delta_matches_fd_and_eikonal():
    g = h1()
    chart = build_chart(g, paraboloid(), np.zeros(3), radius=0.5, eps0=0.4)
    x = np.array([0.25, 0.1, 0.05])
    formula = grad_delta_H(chart, x)
    assert abs(np.linalg.norm(formula[:2]) - 1.0) < 1e-12
    eps = 1e-5
    fd = np.empty(3)
    for i in range(3):
        e = np.zeros(3)
        e[i] = eps
        fd[i] = (
            delta_H(chart, group_product(g, x, e))
            - delta_H(chart, group_product(g, x, -e))
        ) / (2.0 * eps)
    assert np.max(np.abs(fd - formula)) < 1e-6
    # negative side flips the gradient's sign
    xneg = np.array([-0.2, 0.1, 0.05])
    gneg = grad_delta_H(chart, xneg)
    assert gneg[0] < 0.0


def test_chart_gates():
    g = h1()
    f3 = coordinate_hyperplane(3, 3)
    with pytest.raises(Characteristic):
        build_chart(g, f3, np.zeros(3), radius=0.2, eps0=0.2)
    with pytest.raises(NotOnSurface):
        build_chart(g, f3, [1.0, 0.0, 0.5], radius=0.2, eps0=0.2)
    chart = build_chart(
        g, coordinate_hyperplane(3, 1), np.zeros(3), radius=0.4, eps0=0.3
    )
    with pytest.raises(OutsideChart):
        project_to_surface(chart, np.array([0.35, 0.0, 0.0]))
    with pytest.raises(OutsideChart):
        phi_map(chart, np.array([0.0, 1.5, 0.0]), 0.1)
    with pytest.raises(NotOnSurface):
        phi_map(chart, np.array([0.2, 0.0, 0.0]), 0.1)


def test_h2_hyperplane_chart():
    g = hn(2)
    chart = build_chart(
        g, coordinate_hyperplane(5, 1), np.zeros(5), radius=1.0, eps0=0.6
    )
    rng = np.random.default_rng(8)
    xs = rng.uniform(-0.4, 0.4, size=(4, 5))
    d = delta_H(chart, xs)
    np.testing.assert_allclose(d, np.abs(xs[:, 0]), atol=1e-9)
    grads = grad_delta_H(chart, xs)
    for k in range(4):
        expect = np.zeros(5)
        expect[0] = np.sign(xs[k, 0])
        np.testing.assert_allclose(grads[k], expect, atol=1e-9)
