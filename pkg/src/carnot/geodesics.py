"""Normal geodesic flow, layer-by-layer integration, abnormal residuals.

The normal equations on momentum space are

    dx/dt = sum_i P_i X_i(x),      dP/dt = -C(P_V) PH,

with PH the momentum's horizontal part zero-padded to length n. The flow
conserves |P_H| and the energy |P_H|^2 / 2, and the top-layer momentum
components are constant because the grading leaves no structure constants
that could move them.

``integrate_normal`` is a fixed-step RK4 scheme over a uniform grid; initial
data may carry leading batch axes, in which case the whole batch is advanced
in lock step (the acceptance sweeps rely on this). ``integrate_stepwise``
exploits the grading instead: for step 2 the horizontal momentum is an
algebraic function of position, leaving an ODE in x alone; for step 3 the
second-layer momentum is algebraic and only (x, P_H) is integrated.

Abnormal curves satisfy the mixed algebraic-differential system

    C_H(P_V) x_H = 0,   dP_V/dt = -(C(P_V) x)_V,   dx_V/dt = 0,   P_H = 0,

which has no ODE form, so ``abnormal_residual`` only evaluates the four
condition magnitudes along a sampled curve.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import NonFiniteState, TooFewSamples, UnsupportedStep
from .groups import CarnotGroup, frame_apply

__all__ = [
    "MomentumState",
    "GeodesicTrace",
    "normal_rhs",
    "integrate_normal",
    "integrate_stepwise",
    "abnormal_residual",
]


@dataclass
class MomentumState:
    """Point on the cotangent bundle in exponential coordinates."""

    x: np.ndarray
    P: np.ndarray

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        self.P = np.asarray(self.P, dtype=float)
        if self.x.shape != self.P.shape:
            raise ValueError("position and momentum shapes differ")


@dataclass
class GeodesicTrace:
    """Sampled trajectory: times (m,), xs and ps (m, ..., n), diagnostics.

    ``group`` is the structure the trace was integrated on; callers that
    assemble traces by hand should set it so that curve-level operators
    (covariant derivatives, action quadrature) can resolve the frame.
    """

    times: np.ndarray
    xs: np.ndarray
    ps: np.ndarray
    meta: dict = field(default_factory=dict)
    group: CarnotGroup | None = field(default=None, repr=False, compare=False)

    def __len__(self):
        return len(self.times)

    def state(self, i: int) -> MomentumState:
        return MomentumState(self.xs[i], self.ps[i])

    def as_table(self) -> str:
        """Whitespace table: t, x1..xn, P1..Pn. Single trajectories only."""
        if self.xs.ndim != 2:
            raise ValueError("tabular export needs an unbatched trace")
        n = self.xs.shape[1]
        header = (
            ["t"]
            + [f"x{i + 1}" for i in range(n)]
            + [f"P{i + 1}" for i in range(n)]
        )
        rows = [" ".join(header)]
        for t, x, p in zip(self.times, self.xs, self.ps):
            vals = np.concatenate(([t], x, p))
            rows.append(" ".join(f"{w:.12e}" for w in vals))
        return "\n".join(rows) + "\n"

    def as_dict(self) -> dict:
        return {
            "times": self.times.tolist(),
            "x": self.xs.tolist(),
            "P": self.ps.tolist(),
            "meta": self.meta,
        }

    def as_json(self) -> str:
        return json.dumps(self.as_dict(), indent=2)


def normal_rhs(group: CarnotGroup, x, P):
    """Right-hand side (dx, dP) of the normal system. Batch-friendly."""
    x = np.asarray(x, dtype=float)
    P = np.asarray(P, dtype=float)
    h = group.h
    PH = P.copy()
    PH[..., h:] = 0.0
    dx = frame_apply(group, x, PH)
    dP = -np.einsum("aij,...a,...j->...i", group.CV, P[..., h:], PH)
    return dx, dP


def _rk4(rhs, y0, T, steps):
    """Fixed-step RK4 storing every node; y may have any shape."""
    if steps < 1:
        raise TooFewSamples("integration needs at least one step")
    dt = T / steps
    ys = np.empty((steps + 1,) + y0.shape)
    ys[0] = y0
    y = y0
    with np.errstate(over="ignore", invalid="ignore"):
        for i in range(steps):
            k1 = rhs(y)
            k2 = rhs(y + 0.5 * dt * k1)
            k3 = rhs(y + 0.5 * dt * k2)
            k4 = rhs(y + dt * k3)
            y = y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            ys[i + 1] = y
    if not np.all(np.isfinite(ys[-1])):
        raise NonFiniteState("integration produced non-finite values")
    return np.linspace(0.0, T, steps + 1), ys


def _conservation_meta(group: CarnotGroup, times, xs, ps) -> dict:
    h = group.h
    T = float(times[-1] - times[0]) or 1.0
    ph_norm = np.linalg.norm(ps[..., :h], axis=-1)
    energy = 0.5 * ph_norm**2
    top = group.growth.layer_slice(group.step)
    top_drift = (
        0.0
        if group.step == 1
        else float(np.max(np.abs(ps[..., top] - ps[0, ..., top])))
    )
    return {
        "energy_drift_per_unit_time": float(np.max(np.abs(energy - energy[0])))
        / abs(T),
        "ph_norm_drift_per_unit_time": float(np.max(np.abs(ph_norm - ph_norm[0])))
        / abs(T),
        "top_layer_drift": top_drift,
    }


def integrate_normal(
    group: CarnotGroup,
    x0,
    P0,
    T: float,
    steps: int,
    richardson: bool = False,
) -> GeodesicTrace:
    """RK4 integration of the normal system on a uniform grid.

    ``x0`` and ``P0`` broadcast against each other and may carry batch axes;
    the sampled arrays then have shape (steps+1, ..., n). With ``richardson``
    a halved-step rerun estimates the endpoint error (diagnostic only).
    """
    x0 = group.point(np.asarray(x0, dtype=float))
    P0 = group.point(np.asarray(P0, dtype=float))
    shape = np.broadcast_shapes(x0.shape, P0.shape)
    y0 = np.stack(
        [np.broadcast_to(x0, shape), np.broadcast_to(P0, shape)], axis=-2
    )

    def rhs(y):
        dx, dP = normal_rhs(group, y[..., 0, :], y[..., 1, :])
        return np.stack([dx, dP], axis=-2)

    times, ys = _rk4(rhs, y0, float(T), int(steps))
    xs = ys[..., 0, :]
    ps = ys[..., 1, :]
    meta = {
        "group": group.name,
        "method": "rk4-normal",
        "steps": int(steps),
        **_conservation_meta(group, times, xs, ps),
    }
    if richardson:
        # endpoint error estimate for the returned grid: the halved-step
        # endpoint differs from the truth by ~1/16 of the coarse error
        _, ys2 = _rk4(rhs, y0, float(T), 2 * int(steps))
        err = np.max(np.abs(ys2[-1] - ys[-1])) * (16.0 / 15.0)
        meta["richardson_error"] = float(err)
    return GeodesicTrace(times, xs, ps, meta, group=group)


def _stepwise_momentum(group: CarnotGroup, x0, P0, xs, phs=None):
    """Reconstruct the full momentum along a stepwise trace."""
    h = group.h
    full = np.empty(xs.shape[:-1] + (group.n,))
    full[..., h:] = P0[..., h:]
    if group.step == 2:
        CHz = np.einsum("...a,aij->...ij", P0[..., h:], group.CH)
        full[..., :h] = P0[..., :h] - np.einsum(
            "...ij,...j->...i", CHz, xs[..., :h] - x0[..., :h]
        )
    else:
        full[..., :h] = phs
        n2 = group.growth.offsets[1]
        top = P0[..., h:].copy()
        top[..., : n2 - h] = 0.0
        Ctop = np.einsum("...a,aij->...ij", top, group.CV)
        drift = np.einsum("...ij,...j->...i", Ctop, xs - x0)
        full[..., h:n2] = P0[..., h:n2] - drift[..., h:n2]
    return full


def integrate_stepwise(
    group: CarnotGroup, x0, P0, T: float, steps: int
) -> GeodesicTrace:
    """Layer-by-layer integration of the normal flow, step <= 3.

    Top-layer momentum is constant. For step 2 the horizontal momentum is
    P_H(0) - C_H(P_V)(x_H(t) - x_H(0)), so only x is integrated. For step 3
    the same identity expresses the second-layer momentum through x(t) and
    the state shrinks to (x, P_H). Results land on the same uniform grid as
    ``integrate_normal`` for direct comparison.
    """
    if group.step > 3:
        raise UnsupportedStep(
            f"stepwise integration covers step <= 3, group has step {group.step}"
        )
    x0 = group.point(np.asarray(x0, dtype=float))
    P0 = group.point(np.asarray(P0, dtype=float))
    shape = np.broadcast_shapes(x0.shape, P0.shape)
    x0 = np.broadcast_to(x0, shape).copy()
    P0 = np.broadcast_to(P0, shape).copy()
    h = group.h

    if group.step == 1:
        times = np.linspace(0.0, float(T), int(steps) + 1)
        tcol = times.reshape((-1,) + (1,) * x0.ndim)
        xs = x0 + tcol * P0
        ps = np.broadcast_to(P0, xs.shape).copy()
        meta = {"group": group.name, "method": "stepwise", "steps": int(steps)}
        return GeodesicTrace(times, xs, ps, meta, group=group)

    if group.step == 2:
        CHz = np.einsum("...a,aij->...ij", P0[..., h:], group.CH)

        def rhs(x):
            PH = np.zeros(x.shape)
            PH[..., :h] = P0[..., :h] - np.einsum(
                "...ij,...j->...i", CHz, x[..., :h] - x0[..., :h]
            )
            return frame_apply(group, x, PH)

        times, xs = _rk4(rhs, x0, float(T), int(steps))
        ps = _stepwise_momentum(group, x0, P0, xs)
    else:
        n2 = group.growth.offsets[1]
        top = P0[..., h:].copy()
        top[..., : n2 - h] = 0.0
        Ctop = np.einsum("...a,aij->...ij", top, group.CV)

        def rhs(y):
            x, ph = y[..., 0, :], y[..., 1, :h]
            PV = np.empty(x.shape[:-1] + (group.v,))
            PV[...] = P0[..., h:]
            drift = np.einsum("...ij,...j->...i", Ctop, x - x0)
            PV[..., : n2 - h] = P0[..., h:n2] - drift[..., h:n2]
            PH = np.zeros(x.shape)
            PH[..., :h] = ph
            dx = frame_apply(group, x, PH)
            dph = -np.einsum("aij,...a,...j->...i", group.CV, PV, PH)[..., :h]
            dy = np.zeros(y.shape)
            dy[..., 0, :] = dx
            dy[..., 1, :h] = dph
            return dy

        y0 = np.zeros(shape[:-1] + (2, group.n))
        y0[..., 0, :] = x0
        y0[..., 1, :h] = P0[..., :h]
        times, ys = _rk4(rhs, y0, float(T), int(steps))
        xs = ys[..., 0, :]
        ps = _stepwise_momentum(group, x0, P0, xs, phs=ys[..., 1, :h])

    meta = {
        "group": group.name,
        "method": "stepwise",
        "steps": int(steps),
        **_conservation_meta(group, times, xs, ps),
    }
    return GeodesicTrace(times, xs, ps, meta, group=group)


def abnormal_residual(
    group: CarnotGroup, trace: GeodesicTrace, tol: float = 1e-8
) -> dict:
    """Residual magnitudes of the four abnormal conditions along a trace.

    Derivatives are central differences at the local grid spacing. Returns
    per-time series plus sup norms; ``consistent`` reports whether every sup
    norm is below ``tol``. No existence claim is made: this certifies only
    that the sampled curve satisfies the system.
    """
    if len(trace) < 5:
        raise TooFewSamples("abnormal residuals need at least 5 samples")
    times, xs, ps = trace.times, trace.xs, trace.ps
    h = group.h
    PV = ps[..., h:]
    CHpv = np.einsum("...a,aij->...ij", PV[..., : group.CH.shape[0]], group.CH)
    algebraic = np.linalg.norm(
        np.einsum("...ij,...j->...i", CHpv, xs[..., :h]), axis=-1
    )
    dPV = np.gradient(PV, times, axis=0)
    Cpv_x = np.einsum("aij,...a,...j->...i", group.CV, PV, xs)
    vertical_momentum = np.linalg.norm(dPV + Cpv_x[..., h:], axis=-1)
    dxV = np.gradient(xs[..., h:], times, axis=0)
    vertical_velocity = np.linalg.norm(dxV, axis=-1)
    horizontal_momentum = np.linalg.norm(ps[..., :h], axis=-1)
    series = {
        "algebraic": algebraic,
        "vertical_momentum": vertical_momentum,
        "vertical_velocity": vertical_velocity,
        "horizontal_momentum": horizontal_momentum,
    }
    sups = {name: float(np.max(arr)) for name, arr in series.items()}
    series["sup"] = sups
    series["consistent"] = all(s < tol for s in sups.values())
    return series
