"""Levi-Civita data of the left-invariant metric and variational checks.

Index conventions (0-based in code):

    gamma[I][J][K]        = <nabla_{X_K} X_J, X_I>
    curvature[I][J][K][L] = <R(X_I, X_J) X_K, X_L>

with the curvature operator R(X,Y)Z = nabla_Y nabla_X Z - nabla_X nabla_Y Z
- nabla_{[Y,X]} Z.  That is the opposite of the most common sign choice; the
Jacobi systems implemented here were derived with it, so it is kept as is.
On the orthonormal frame the Christoffel array is exactly skew in its first
two slots and satisfies gamma[I][J][K] - gamma[I][K][J] = C[I][K][J].

A field along a curve is stored by its frame components xi_I(t) on the
trace's grid, and

    (nabla_t xi)_I = d/dt xi_I + sum_{J,K} gamma[I][J][K] xi_J u_K

where u = L(x)^{-1} dx/dt are the frame components of the velocity.  The
variation checks build the concrete homotopy theta_s(t) = x(t) + s L(x(t)) Y(t)
in coordinates, with multiplier P_V(t) + s Q_V(t), and difference the action
quadrature in s; grid-induced quadrature bias is smooth in s and cancels in
the differences.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import cos, sin

import numpy as np

from .errors import (
    EndpointViolation,
    GridMismatch,
    NotUnitSpeed,
    TooFewSamples,
)
from .expmap import _simpson
from .geodesics import GeodesicTrace, integrate_normal
from .groups import CarnotGroup, c_operator, frame_apply, frame_solve

# FD-velocity unit-speed gate is loose: second differences of sampled
# coordinates carry O(dt^2) noise that is not a speed violation.
UNIT_SPEED_TOL = 1e-3
MOMENTUM_SPEED_TOL = 1e-6
ENDPOINT_TOL = 1e-4


@dataclass
class ConnectionData:
    """Constant Christoffel and curvature arrays of the ambient metric."""

    gamma: np.ndarray
    curvature: np.ndarray


@dataclass
class FieldAlongCurve:
    """Frame components of a vector field sampled on a trace's grid."""

    times: np.ndarray
    components: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.components = np.asarray(self.components, dtype=float)
        if self.components.shape[0] != self.times.shape[0]:
            raise GridMismatch(
                f"{self.components.shape[0]} samples on a "
                f"{self.times.shape[0]}-point grid"
            )

    def __len__(self):
        return len(self.times)


def connection_data(group: CarnotGroup) -> ConnectionData:
    """Christoffels and curvature of the left-invariant metric.

    gamma[I][J][K] = 0.5 (C[I][K][J] - C[K][J][I] + C[J][I][K]); the
    curvature follows by frame composition, with the bracket term taken
    through the structure constants.
    """
    C = group.C
    gamma = 0.5 * (
        C.transpose(0, 2, 1) - C.transpose(2, 1, 0) + C.transpose(1, 0, 2)
    )
    # <nabla_{X_J} nabla_{X_I} X_K, X_L>, its (I, J) swap, and the
    # nabla_{[X_J, X_I]} X_K term, per the stated sign convention.
    t1 = np.einsum("lmj,mki->ijkl", gamma, gamma)
    t2 = np.einsum("lmi,mkj->ijkl", gamma, gamma)
    t3 = np.einsum("rji,lkr->ijkl", C, gamma)
    return ConnectionData(gamma=gamma, curvature=t1 - t2 - t3)


def _resolve_group(trace: GeodesicTrace, group: CarnotGroup | None) -> CarnotGroup:
    if group is not None:
        return group
    if trace.group is not None:
        return trace.group
    raise ValueError("trace carries no group; pass one explicitly")


def _uniform_dt(times: np.ndarray) -> float:
    if times.shape[0] < 4:
        raise TooFewSamples("curve operators need at least 4 samples")
    steps = np.diff(times)
    if not np.allclose(steps, steps[0], rtol=1e-9, atol=1e-12):
        raise GridMismatch("nonuniform time grid")
    return float(steps[0])


def _frame_velocity(group: CarnotGroup, times, xs) -> np.ndarray:
    dx = np.gradient(xs, times, axis=0, edge_order=2)
    return frame_solve(group, xs, dx)


def _covdiff(gamma, times, xi, u) -> np.ndarray:
    dxi = np.gradient(xi, times, axis=0, edge_order=2)
    return dxi + np.einsum("ijk,mj,mk->mi", gamma, xi, u)


def _field_components(obj, trace: GeodesicTrace, width: int, what: str) -> np.ndarray:
    """Normalize a field argument to an (m, width) sample array."""
    if isinstance(obj, FieldAlongCurve):
        if obj.times.shape != trace.times.shape or not np.allclose(
            obj.times, trace.times
        ):
            raise GridMismatch(f"{what} is sampled on a different grid")
        arr = obj.components
    else:
        arr = np.asarray(obj, dtype=float)
    m = trace.times.shape[0]
    if arr.ndim == 1 and arr.shape[0] == width:
        arr = np.broadcast_to(arr, (m, width))
    if arr.shape != (m, width):
        raise GridMismatch(
            f"{what} has shape {arr.shape}, expected ({m}, {width})"
        )
    return np.asarray(arr, dtype=float)


def covariant_derivative_along(
    trace: GeodesicTrace, field: FieldAlongCurve, group: CarnotGroup | None = None
) -> FieldAlongCurve:
    """nabla_t of a sampled field along the trace's curve.

    The velocity is recovered from the sampled positions by central
    differences and converted to frame components through the frame at
    each point; the field's time derivative uses the same stencils.
    """
    g = _resolve_group(trace, group)
    _uniform_dt(trace.times)
    xi = _field_components(field, trace, g.n, "field")
    u = _frame_velocity(g, trace.times, trace.xs)
    gamma = connection_data(g).gamma
    return FieldAlongCurve(trace.times, _covdiff(gamma, trace.times, xi, u))


def _action(group: CarnotGroup, times, xs, pv, dt) -> float:
    """Action quadrature |u_H| + <P_V, u_V> on a sampled curve."""
    u = _frame_velocity(group, times, xs)
    h = group.h
    integrand = np.linalg.norm(u[:, :h], axis=1)
    if pv is not None:
        integrand = integrand + np.sum(pv * u[:, h:], axis=1)
    return float(_simpson(integrand, dt))


def sr_action(trace: GeodesicTrace, P_V_field=None, group: CarnotGroup | None = None) -> float:
    """Constrained action of a sampled curve with attached multiplier.

    ``P_V_field`` may be a constant (v,) covector, (m, v) samples, a
    FieldAlongCurve, or None for a plain sub-Riemannian length integrand.
    """
    g = _resolve_group(trace, group)
    dt = _uniform_dt(trace.times)
    pv = None
    if P_V_field is not None:
        pv = _field_components(P_V_field, trace, g.v, "multiplier")
    return _action(g, trace.times, trace.xs, pv, dt)


def _endpoint_gate(Y: np.ndarray):
    scale = max(float(np.max(np.linalg.norm(Y, axis=1))), 1e-12)
    for end in (0, -1):
        if np.linalg.norm(Y[end]) > ENDPOINT_TOL * max(1.0, scale):
            raise EndpointViolation(
                "variation field must vanish at both endpoints"
            )


def _fd_speed_gate(u: np.ndarray, h: int):
    speed = np.linalg.norm(u[:, :h], axis=1)
    if np.max(np.abs(speed - 1.0)) > UNIT_SPEED_TOL:
        raise NotUnitSpeed("base curve is not parametrized by arclength")


def _momentum_velocity(trace: GeodesicTrace, h: int) -> np.ndarray:
    """Frame velocity of a normal geodesic read off its momenta."""
    u = np.array(trace.ps, dtype=float)
    u[:, h:] = 0.0
    speed = np.linalg.norm(u[:, :h], axis=1)
    if np.max(np.abs(speed - 1.0)) > MOMENTUM_SPEED_TOL:
        raise NotUnitSpeed("trace momenta are not unit horizontal")
    return u


def first_variation_check(
    group: CarnotGroup,
    trace: GeodesicTrace,
    Y,
    Q_V=None,
    s_step: float = 1e-4,
) -> tuple[float, float]:
    """First variation of the action: printed formula vs finite differences.

    Returns (formula value, fd value).  The formula integrates
    <Q_V, u> - <Y, nabla_t u + dP_V/dt + C(P_V) u>; the finite-difference
    side perturbs the curve through the frame and the multiplier linearly
    and central-differences the action at ``s_step``.
    """
    g = _resolve_group(trace, group)
    times, xs = trace.times, trace.xs
    if xs.ndim != 2:
        raise ValueError("variation checks need an unbatched trace")
    dt = _uniform_dt(times)
    h = g.h
    Y = _field_components(Y, trace, g.n, "Y")
    _endpoint_gate(Y)
    q = (
        np.zeros((len(times), g.v))
        if Q_V is None
        else _field_components(Q_V, trace, g.v, "Q_V")
    )
    u = _frame_velocity(g, times, xs)
    _fd_speed_gate(u, h)
    pv = np.asarray(trace.ps[:, h:], dtype=float)

    gamma = connection_data(g).gamma
    core = _covdiff(gamma, times, u, u)
    core = core + np.einsum("mij,mj->mi", c_operator(g, pv), u)
    core[:, h:] += np.gradient(pv, times, axis=0, edge_order=2)
    integrand = np.sum(q * u[:, h:], axis=1) - np.sum(Y * core, axis=1)
    formula = float(_simpson(integrand, dt))

    s = float(s_step)
    push = frame_apply(g, xs, Y)
    upper = _action(g, times, xs + s * push, pv + s * q, dt)
    lower = _action(g, times, xs - s * push, pv - s * q, dt)
    return formula, (upper - lower) / (2.0 * s)


def second_variation_check(
    group: CarnotGroup,
    trace: GeodesicTrace,
    Y,
    Q_V=None,
    mode: str = "general",
    s_step: float = 1e-3,
) -> tuple[float, float]:
    """Second variation along a unit-speed normal geodesic.

    ``mode="general"`` evaluates the full quadratic form (pinned-frame
    homotopy on the finite-difference side); ``mode="geodesic-variation"``
    evaluates the geodesic-family form and differences the action of the
    reconstructed family: initial horizontal momentum rotated at constant
    norm in the plane spanned by P_H(0) and the horizontal part of
    dY/dt(0), with the vertical momentum held fixed.

    In geodesic-variation mode the second-order operator is paired with Y
    through its horizontal rows only; the vertical rows are replaced by the
    transport defect dY_V/dt - [Y, u]_V, which vanishes on fields that come
    from actual families of geodesics (see ``jacobi_residual``).
    """
    if mode not in ("general", "geodesic-variation"):
        raise ValueError(f"unknown mode {mode!r}")
    g = _resolve_group(trace, group)
    times, xs = trace.times, trace.xs
    if xs.ndim != 2:
        raise ValueError("variation checks need an unbatched trace")
    dt = _uniform_dt(times)
    h = g.h
    Y = _field_components(Y, trace, g.n, "Y")
    _endpoint_gate(Y)
    q = (
        np.zeros((len(times), g.v))
        if Q_V is None
        else _field_components(Q_V, trace, g.v, "Q_V")
    )
    u = _momentum_velocity(trace, h)
    pv = np.asarray(trace.ps[:, h:], dtype=float)

    conn = connection_data(g)
    gamma, Rm = conn.gamma, conn.curvature
    covY = _covdiff(gamma, times, Y, u)
    CP = c_operator(g, pv)
    Rterm = np.einsum("mi,mj,mk,ijkl->ml", u, Y, u, Rm)
    s = float(s_step)

    if mode == "general":
        brYu = np.einsum("rij,mi,mj->mr", g.C, Y, u)
        YH = Y.copy()
        YH[:, h:] = 0.0
        D1H = _covdiff(gamma, times, YH, u)
        D2H = _covdiff(gamma, times, D1H, u)
        CYV = c_operator(g, Y[:, h:])
        qexpr = covY - 0.75 * brYu - 0.25 * np.einsum("mij,mj->mi", CYV, u)
        yexpr = (
            D2H
            + np.einsum("mij,mj->mi", CP, D1H + brYu)
            + brYu
            + Rterm
        )
        integrand = 2.0 * np.sum(q * qexpr[:, h:], axis=1) - np.sum(
            Y * yexpr, axis=1
        )
        formula = float(_simpson(integrand, dt))

        push = frame_apply(g, xs, Y)
        mid = _action(g, times, xs, pv, dt)
        upper = _action(g, times, xs + s * push, pv + s * q, dt)
        lower = _action(g, times, xs - s * push, pv - s * q, dt)
        return formula, (upper - 2.0 * mid + lower) / (s * s)

    bruY = np.einsum("rij,mi,mj->mr", g.C, u, Y)
    A = np.einsum("ijk,mk->mij", gamma, u)
    udot = -np.einsum("mij,mj->mi", CP, u)
    Adot = np.einsum("ijk,mk->mij", gamma, udot)
    Ydot = np.gradient(Y, times, axis=0, edge_order=2)
    cov2Y = (
        _second_derivative(dt, Y)
        + np.einsum("mij,mj->mi", Adot, Y)
        + 2.0 * np.einsum("mij,mj->mi", A, Ydot)
        + np.einsum("mij,mjk,mk->mi", A, A, Y)
    )
    yexpr = cov2Y + Rterm + np.einsum("mij,mj->mi", CP, covY)
    yexpr[:, :h] -= _pairing_commutator(g, pv, Y, u)
    # Vertical rows: transport defect, as in jacobi_residual.  bruY = [u,Y].
    yexpr[:, h:] = Ydot[:, h:] + bruY[:, h:]
    integrand = np.sum(q * (covY + bruY)[:, h:], axis=1) - np.sum(
        Y * yexpr, axis=1
    )
    formula = float(_simpson(integrand, dt))

    # One-sided cubic stencil; Y(0) = 0 was enforced above, so this is the
    # initial momentum perturbation of the generating family.
    ydot0 = (-11.0 * Y[0] + 18.0 * Y[1] - 9.0 * Y[2] + 2.0 * Y[3]) / (6.0 * dt)
    P0 = np.asarray(trace.ps[0], dtype=float)
    PH0 = P0[:h]
    r = float(np.linalg.norm(PH0))
    W = ydot0[:h]
    Wperp = W - (np.dot(W, PH0) / (r * r)) * PH0
    wn = float(np.linalg.norm(Wperp))
    if wn < 1e-12 * max(1.0, r):
        return formula, 0.0
    omega = wn / r
    axis = Wperp / wn
    duration = float(times[-1] - times[0])
    mid = _action(g, times, xs, pv, dt)
    ends = []
    for sign in (1.0, -1.0):
        ang = omega * s * sign
        P_init = P0.copy()
        P_init[:h] = cos(ang) * PH0 + sin(ang) * r * axis
        fam = integrate_normal(g, xs[0], P_init, duration, len(times) - 1)
        ends.append(_action(g, times, fam.xs, pv + sign * s * q, dt))
    return formula, (ends[0] - 2.0 * mid + ends[1]) / (s * s)


def _second_derivative(dt: float, Y: np.ndarray) -> np.ndarray:
    """Uniform-grid second difference, O(dt^2) at the boundary rows too."""
    d2 = np.empty_like(Y)
    d2[1:-1] = (Y[2:] - 2.0 * Y[1:-1] + Y[:-2]) / (dt * dt)
    d2[0] = (2.0 * Y[0] - 5.0 * Y[1] + 4.0 * Y[2] - Y[3]) / (dt * dt)
    d2[-1] = (2.0 * Y[-1] - 5.0 * Y[-2] + 4.0 * Y[-3] - Y[-4]) / (dt * dt)
    return d2


def _pairing_commutator(group: CarnotGroup, pv, Y, u) -> np.ndarray:
    """(1/2)[C_H(P_V), C_H(Y_V)] P_H on each sample.

    The multiplier pairing z -> C_H(z) is a left-invariant operator but it
    is not parallel for the Levi-Civita connection, so differentiating
    C(P_V) along a variation leaves this commutator behind in the
    horizontal second-order rows.  It vanishes whenever the second layer
    is one dimensional (the two matrices are then proportional).
    """
    h = group.h
    v2 = group.CH.shape[0]
    M = np.einsum("vij,mv->mij", group.CH, pv[:, :v2])
    S = np.einsum("vij,mv->mij", group.CH, Y[:, h : h + v2])
    uH = u[:, :h]
    return 0.5 * (
        np.einsum("mij,mjk,mk->mi", M, S, uH)
        - np.einsum("mij,mjk,mk->mi", S, M, uH)
    )


def jacobi_residual(
    group: CarnotGroup, trace: GeodesicTrace, field: FieldAlongCurve
) -> FieldAlongCurve:
    """Defect of the constant-multiplier Jacobi system on a sampled field.

    Horizontal rows evaluate nabla_t^2 Y + R(P_H, Y) P_H + C(P_V) nabla_t Y
    - (1/2)[C_H(P_V), C_H(Y_V)] P_H with the geodesic's velocity taken from
    its momenta; the commutator term is what the pairing z -> C_H(z)
    contributes alongside the curvature (see ``_pairing_commutator``), and
    fields obtained by differencing actual geodesic families vanish against
    these rows.  Vertical rows report the transport defect
    dY_V/dt - [Y, P_H]_V instead: variation fields keep their vertical part
    slaved to the horizontal one through that first-order equation, and the
    second-order operator applied to the vertical rows reduces to
    d/dt [Y, P_H]_V, which carries no information the transport row does
    not already have.  The second covariant derivative is expanded as
    Y'' + A'Y + 2AY' + A(AY) with A the Christoffel contraction of the
    velocity, so no stencil is applied to the output of another and the
    defect stays uniformly second order up to the boundary samples.
    """
    g = _resolve_group(trace, group)
    dt = _uniform_dt(trace.times)
    h = g.h
    Y = _field_components(field, trace, g.n, "field")
    u = _momentum_velocity(trace, h)
    pv = np.asarray(trace.ps[:, h:], dtype=float)
    conn = connection_data(g)
    CP = c_operator(g, pv)
    A = np.einsum("ijk,mk->mij", conn.gamma, u)
    udot = -np.einsum("mij,mj->mi", CP, u)
    Adot = np.einsum("ijk,mk->mij", conn.gamma, udot)
    Ydot = np.gradient(Y, trace.times, axis=0, edge_order=2)
    AY = np.einsum("mij,mj->mi", A, Y)
    covY = Ydot + AY
    cov2Y = (
        _second_derivative(dt, Y)
        + np.einsum("mij,mj->mi", Adot, Y)
        + 2.0 * np.einsum("mij,mj->mi", A, Ydot)
        + np.einsum("mij,mj->mi", A, AY)
    )
    res = (
        cov2Y
        + np.einsum("mi,mj,mk,ijkl->ml", u, Y, u, conn.curvature)
        + np.einsum("mij,mj->mi", CP, covY)
    )
    res[:, :h] -= _pairing_commutator(g, pv, Y, u)
    res[:, h:] = Ydot[:, h:] - np.einsum("rij,mi,mj->mr", g.C, Y, u)[:, h:]
    return FieldAlongCurve(trace.times, res)


def _half_samples(a: np.ndarray) -> np.ndarray:
    """Midpoint values of uniformly sampled smooth data, cubic accuracy."""
    m = a.shape[0]
    mid = np.empty((m - 1,) + a.shape[1:])
    mid[1:-1] = (-a[0 : m - 3] + 9.0 * a[1 : m - 2] + 9.0 * a[2 : m - 1] - a[3:m]) / 16.0
    mid[0] = (5.0 * a[0] + 15.0 * a[1] - 5.0 * a[2] + a[3]) / 16.0
    mid[-1] = (a[m - 4] - 5.0 * a[m - 3] + 15.0 * a[m - 2] + 5.0 * a[m - 1]) / 16.0
    return mid


def integrate_jacobi(
    group: CarnotGroup,
    trace: GeodesicTrace,
    J0,
    J0dot,
    mode: str = "constant-multiplier",
) -> FieldAlongCurve:
    """March the Jacobi system along a unit-speed normal geodesic.

    The state is (Y, Z) with Z the plain time derivative of the frame
    components.  Horizontal rows integrate the second-order system whose
    defect ``jacobi_residual`` measures (curvature, C(P_V) coupling and the
    pairing commutator); vertical rows integrate the derivative of the
    transport equation, dZ_V/dt = [Z, P_H]_V + [Y, dP_H/dt]_V, so initial
    data with Z_V(0) = [Y(0), P_H(0)]_V reproduce fields of actual geodesic
    variations and arbitrary initial data still give a well-posed linear
    flow of dimension 2n.  RK4 on the trace's grid; coefficients at half
    steps come from cubic interpolation of the momenta, keeping the
    classical order.  Both modes integrate the same system;
    ``mode="full"`` additionally reports the vertical transport defect
    Z_V - [Y, P_H]_V in the meta, monitored rather than enforced.
    ``J0``/``J0dot`` accept leading batch axes.
    """
    if mode not in ("full", "constant-multiplier"):
        raise ValueError(f"unknown mode {mode!r}")
    g = group
    times = trace.times
    dt = _uniform_dt(times)
    h, n = g.h, g.n
    u = _momentum_velocity(trace, h)
    pv = np.asarray(trace.ps[:, h:], dtype=float)

    conn = connection_data(g)
    gamma, Rm = conn.gamma, conn.curvature
    v2 = g.CH.shape[0]

    def coeffs(uu, pp):
        CP = np.einsum("vij,mv->mij", g.C[h:], pp)
        ud = -np.einsum("mij,mj->mi", CP, uu)
        A = np.einsum("ijk,mk->mij", gamma, uu)
        Adot = np.einsum("ijk,mk->mij", gamma, ud)
        B = np.einsum("mi,mk,ijkl->mlj", uu, uu, Rm)
        M = np.einsum("vij,mv->mij", g.CH, pp[:, :v2])
        return {"u": uu, "ud": ud, "A": A, "Adot": Adot, "CP": CP, "B": B, "M": M}

    on_grid = coeffs(u, pv)
    on_half = coeffs(_half_samples(u), _half_samples(pv))

    J0 = np.asarray(J0, dtype=float)
    J0dot = np.asarray(J0dot, dtype=float)
    if J0.shape[-1] != n or J0dot.shape[-1] != n:
        raise ValueError(f"initial data must have {n} frame components")
    shape = np.broadcast_shapes(J0.shape, J0dot.shape)
    Y = np.broadcast_to(J0, shape).astype(float)
    Z = np.broadcast_to(J0dot, shape).astype(float)

    def rhs(c, i, Y, Z):
        A, Adot, CP, B, M = c["A"][i], c["Adot"][i], c["CP"][i], c["B"][i], c["M"][i]
        uu, ud = c["u"][i], c["ud"][i]
        AY = np.einsum("ij,...j->...i", A, Y)
        rest = (
            np.einsum("ij,...j->...i", Adot, Y)
            + 2.0 * np.einsum("ij,...j->...i", A, Z)
            + np.einsum("ij,...j->...i", A, AY)
            + np.einsum("lj,...j->...l", B, Y)
            + np.einsum("ij,...j->...i", CP, Z + AY)
        )
        S = np.einsum("vij,...v->...ij", g.CH, Y[..., h : h + v2])
        corr = 0.5 * (
            np.einsum("ij,...jk,k->...i", M, S, uu[:h])
            - np.einsum("...ij,jk,k->...i", S, M, uu[:h])
        )
        dZ = np.empty_like(Z)
        dZ[..., :h] = corr - rest[..., :h]
        dZ[..., h:] = (
            np.einsum("rij,...i,j->...r", g.C, Z, uu)
            + np.einsum("rij,...i,j->...r", g.C, Y, ud)
        )[..., h:]
        return Z.copy(), dZ

    m = len(times)
    Ys = np.empty((m,) + shape)
    Zs = np.empty((m,) + shape)
    Ys[0], Zs[0] = Y, Z
    for i in range(m - 1):
        k1y, k1z = rhs(on_grid, i, Y, Z)
        k2y, k2z = rhs(on_half, i, Y + 0.5 * dt * k1y, Z + 0.5 * dt * k1z)
        k3y, k3z = rhs(on_half, i, Y + 0.5 * dt * k2y, Z + 0.5 * dt * k2z)
        k4y, k4z = rhs(on_grid, i + 1, Y + dt * k3y, Z + dt * k3z)
        Y = Y + dt / 6.0 * (k1y + 2.0 * k2y + 2.0 * k3y + k4y)
        Z = Z + dt / 6.0 * (k1z + 2.0 * k2z + 2.0 * k3z + k4z)
        Ys[i + 1], Zs[i + 1] = Y, Z

    meta = {"mode": mode, "derivative": Zs}
    if mode == "full":
        br = np.einsum("rij,m...i,mj->m...r", g.C, Ys, u)
        defect = (Zs - br)[..., h:]
        meta["constraint_defect"] = defect
        meta["constraint_defect_sup"] = float(np.max(np.abs(defect)))
    return FieldAlongCurve(times, Ys, meta)
