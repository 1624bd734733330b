"""Implicit hypersurfaces in 2-step groups and the tubular distance chart.

A surface S = {f = 0} is described by a scalar evaluator; all geometry runs
through the frame gradient g = L(x)^T grad f, whose horizontal part encodes
everything: the horizontal unit normal nu_H = g_H / |g_H|, the rescaled
vertical remainder varpi = g_V / |g_H|, and the characteristic set where
|g_H| degenerates relative to |g|. The covector N = (nu_H, varpi) has unit
horizontal norm, so it is directly a shooting covector: the metric normal
through a non-characteristic surface point is the normal geodesic with that
initial momentum, and the map Phi(y, t) = exp(y, N(y))(t) is a local
diffeomorphism onto a two-sided tube around the patch. Inverting Phi by
Newton gives the nearest surface point and the signed normal time t, whose
absolute value is the horizontal distance delta_H to the surface; the
gradient of delta_H needs no differencing at all, it is the transported
normal (e^{-C_H(varpi) t} nu_H, varpi) up to the sign of t.

The chart half-width is found by probing: forward-map a grid of
(surface parameter, t) pairs and require the Newton inversion, started the
same way ordinary queries start, to come back to the generating parameters;
the width is halved until the probe passes. The Jacobian determinant of Phi
at t = 0 has the closed form |g_H| / |grad f| when the surface is
parameterized by a Euclidean-orthonormal tangent basis (the determinant
contracts the geodesic velocity against the tangent cofactor, and only the
horizontal momentum of the normal survives); phi_jacobian returns that
value next to a finite-difference determinant so the identity stays a
measurable statement.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    Characteristic,
    NoConvergence,
    NotOnSurface,
    OutsideChart,
    WrongStep,
    ZeroGradient,
)
from .expmap import ClosedFormPath, exp_matrix
from .geodesics import GeodesicTrace
from .groups import CarnotGroup, c_operator, left_frame

__all__ = [
    "HypersurfaceField",
    "SurfaceNormalData",
    "TubularChart",
    "ProjectionResult",
    "coordinate_hyperplane",
    "polynomial_field",
    "frame_gradient",
    "surface_normals",
    "metric_normal",
    "build_chart",
    "phi_map",
    "phi_jacobian",
    "project_to_surface",
    "delta_H",
    "grad_delta_H",
]

CHARACTERISTIC_REL = 1e-10
ON_SURFACE_TOL = 1e-9
GRAD_FD_STEP = 1e-6


@dataclass
class HypersurfaceField:
    """Scalar surface function with an optional analytic gradient.

    Both evaluators must accept stacked points of shape (..., n) and
    broadcast; without an analytic gradient the coordinate gradient falls
    back to central differences with step 1e-6 (1 + |x|).
    """

    f: callable
    grad: callable = None
    name: str = ""

    def value(self, x):
        return np.asarray(self.f(np.asarray(x, dtype=float)), dtype=float)

    def coordinate_gradient(self, x):
        x = np.asarray(x, dtype=float)
        if self.grad is not None:
            g = np.asarray(self.grad(x), dtype=float)
            return np.broadcast_to(g, x.shape).copy()
        n = x.shape[-1]
        s = GRAD_FD_STEP * (1.0 + np.linalg.norm(x, axis=-1))
        out = np.empty(x.shape)
        for i in range(n):
            xp = x.copy()
            xm = x.copy()
            xp[..., i] += s
            xm[..., i] -= s
            out[..., i] = (self.value(xp) - self.value(xm)) / (2.0 * s)
        return out


def coordinate_hyperplane(n, axis, offset=0.0):
    """The surface {x_axis = offset}; axis is 1-based like coordinates."""
    if not 1 <= axis <= n:
        raise ValueError("axis out of range")
    i = axis - 1
    e = np.zeros(n)
    e[i] = 1.0

    return HypersurfaceField(
        f=lambda x: x[..., i] - offset,
        grad=lambda x: np.broadcast_to(e, np.shape(x)),
        name=f"x{axis}" + (f"-{offset:g}" if offset else ""),
    )


def polynomial_field(n, terms, name=""):
    """Polynomial surface sum(c * prod x_i^e_i), monomial degree <= 3.

    terms: iterable of (coefficient, exponent tuple of length n).
    """
    terms = [(float(c), tuple(int(e) for e in exps)) for c, exps in terms]
    for c, exps in terms:
        if len(exps) != n:
            raise ValueError("exponent tuple length must equal n")
        if min(exps) < 0 or sum(exps) > 3:
            raise ValueError("monomials limited to degree <= 3")

    def f(x):
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape[:-1])
        for c, exps in terms:
            term = np.full(x.shape[:-1], c)
            for i, e in enumerate(exps):
                if e:
                    term = term * x[..., i] ** e
            out = out + term
        return out

    def grad(x):
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape)
        for c, exps in terms:
            for j, ej in enumerate(exps):
                if not ej:
                    continue
                term = np.full(x.shape[:-1], c * ej)
                for i, e in enumerate(exps):
                    p = e - 1 if i == j else e
                    if p:
                        term = term * x[..., i] ** p
                out[..., j] += term
        return out

    return HypersurfaceField(f=f, grad=grad, name=name)


def frame_gradient(group, field, x):
    """Frame components (X_1 f, ..., X_n f) = L(x)^T grad f(x), batched."""
    x = group.point(np.asarray(x, dtype=float))
    gradf = field.coordinate_gradient(x)
    return np.einsum("...ji,...j->...i", left_frame(group, x), gradf)


@dataclass
class SurfaceNormalData:
    """Normal package at one surface point, frame components throughout.

    nu is the unit normal oriented along grad f. At characteristic points
    the horizontal data does not exist: nuH and varpi stay None and the
    combined covector property raises instead of guessing.
    """

    nu: np.ndarray
    nuH: np.ndarray
    varpi: np.ndarray
    characteristic: bool
    horizontal_fraction: float

    @property
    def N(self):
        if self.characteristic:
            raise Characteristic(
                "no horizontal normal at a characteristic point"
            )
        return np.concatenate([self.nuH, self.varpi])


def _normal_split(group, g):
    """Batched (nu, nuH, varpi, char mask) from frame gradients g."""
    h = group.h
    gn = np.linalg.norm(g, axis=-1)
    if np.any(gn == 0.0):
        raise ZeroGradient("surface gradient vanishes at a queried point")
    ghn = np.linalg.norm(g[..., :h], axis=-1)
    char = ghn < CHARACTERISTIC_REL * gn
    nu = g / gn[..., None]
    safe = np.where(char, 1.0, ghn)
    nuH = g[..., :h] / safe[..., None]
    varpi = g[..., h:] / safe[..., None]
    return nu, nuH, varpi, char, ghn / gn


def surface_normals(group, field, x):
    """Normal data of {f=0} at x; the characteristic case is a flag.

    x need not lie on the surface: the construction only uses f's gradient,
    so it applies to every level set through x.
    """
    _require_step2(group, "surface normals")
    g = frame_gradient(group, field, x)
    if g.ndim != 1:
        raise ValueError("surface_normals takes a single point")
    nu, nuH, varpi, char, frac = _normal_split(group, g)
    if char:
        return SurfaceNormalData(nu, None, None, True, float(frac))
    return SurfaceNormalData(nu, nuH, varpi, False, float(frac))


def _require_step2(group, what):
    if group.step != 2:
        raise WrongStep(
            "%s needs a step-2 group, got step %d" % (what, group.step)
        )


def _check_on_surface(field, y):
    val = np.abs(field.value(y))
    scale = 1.0 + np.linalg.norm(np.asarray(y, dtype=float), axis=-1)
    if np.any(val > ON_SURFACE_TOL * scale):
        raise NotOnSurface(
            "point misses the surface by %.3e" % float(np.max(val))
        )


def metric_normal(group, field, y, t_range=(-1.0, 1.0), samples=201, sign=1):
    """The metric normal geodesic through surface point y as a trace.

    The momentum is sign * N(y); both orientations trace the same set. With
    varpi = 0 the curve is the straight one-parameter subgroup line.
    """
    _require_step2(group, "metric normal")
    y = group.point(np.asarray(y, dtype=float))
    _check_on_surface(field, y)
    data = surface_normals(group, field, y)
    P0 = float(sign) * data.N
    times = np.linspace(float(t_range[0]), float(t_range[1]), int(samples))
    path = ClosedFormPath(group=group, x0=y, P0=P0)
    xs, ps = path.point(times, return_momentum=True)
    meta = {
        "group": group.name,
        "method": "closed-form-metric-normal",
        "surface": field.name,
        "varpi_norm": float(np.linalg.norm(data.varpi)),
    }
    return GeodesicTrace(times, xs, ps, meta, group=group)


def _householder_complement(w):
    """Orthonormal columns spanning w-perp for a single unit vector w."""
    n = w.size
    u = w.copy()
    u[0] += 1.0 if w[0] >= 0.0 else -1.0
    H = np.eye(n) - 2.0 * np.outer(u, u) / (u @ u)
    return H[:, 1:]


def _project_batch(field, p, tol=1e-13, max_iter=60):
    """Newton projection of points p onto {f=0} along the gradient."""
    y = np.array(p, dtype=float)
    scale = 1.0 + np.linalg.norm(y, axis=-1)
    for _ in range(max_iter):
        val = field.value(y)
        if np.all(np.abs(val) <= tol * scale):
            return y
        g = field.coordinate_gradient(y)
        gn2 = np.einsum("...i,...i->...", g, g)
        if np.any(gn2 == 0.0):
            raise ZeroGradient("surface gradient vanishes during projection")
        y = y - (val / gn2)[..., None] * g
    raise NoConvergence(
        "surface projection stalled at |f| = %.3e" % float(np.max(np.abs(val)))
    )


@dataclass
class TubularChart:
    """Immutable two-sided tube chart around a non-characteristic patch.

    Surface parameters u live in the tangent basis E at the base point
    (|u| <= radius); normal times t in (-eps0, eps0). All queries are pure.
    """

    group: CarnotGroup
    field: HypersurfaceField
    base: np.ndarray
    E: np.ndarray
    radius: float
    eps0: float
    probe_failures: int = 0

    def surface_point(self, u):
        u = np.asarray(u, dtype=float)
        return _project_batch(self.field, self.base + u @ self.E.T)


def _chart_forward(chart, U, T):
    """Batched Phi(u, t): surface points, their covectors, endpoints."""
    group = chart.group
    ys = chart.surface_point(U)
    g = frame_gradient(group, chart.field, ys)
    nu, nuH, varpi, char, _ = _normal_split(group, g)
    if np.any(char):
        raise Characteristic(
            "patch touches the characteristic set; shrink the radius"
        )
    N = np.concatenate([nuH, varpi], axis=-1)
    path = ClosedFormPath(group=group, x0=ys, P0=N)
    return ys, N, path.point(np.asarray(T, dtype=float))


def _invert_batch(chart, xs, u0, t0, tol=1e-12, max_iter=60):
    """Damped Newton on Phi(u, t) = x for a batch of targets.

    Returns (u, t, residual, converged). The Jacobian is forward finite
    differences in the chart parameters; steps scale with the parameter
    magnitudes, the damping is plain backtracking on the residual norm.
    """
    m, n = xs.shape
    d = n - 1
    u = np.array(u0, dtype=float)
    t = np.array(t0, dtype=float)
    scale = tol * (1.0 + np.linalg.norm(xs, axis=1))

    _, _, pts = _chart_forward(chart, u, t)
    F = pts - xs
    fn = np.linalg.norm(F, axis=1)
    conv = fn <= scale
    stalled = np.zeros(m, dtype=bool)

    for _ in range(max_iter):
        act = ~conv & ~stalled
        if not act.any():
            break
        idx = np.nonzero(act)[0]
        ua, ta, fa = u[idx], t[idx], fn[idx]
        ka = idx.size

        hu = 1e-6 * (1.0 + np.abs(ua))
        ht = 1e-6 * (1.0 + np.abs(ta))
        Up = np.broadcast_to(ua, (d + 1, ka, d)).copy()
        Tp = np.broadcast_to(ta, (d + 1, ka)).copy()
        for j in range(d):
            Up[j, :, j] += hu[:, j]
        Tp[d] += ht
        _, _, ptsP = _chart_forward(
            chart, Up.reshape(-1, d), Tp.reshape(-1)
        )
        ptsP = ptsP.reshape(d + 1, ka, n)
        _, _, base = _chart_forward(chart, ua, ta)
        Fb = base - xs[idx]
        steps = np.concatenate([hu, ht[:, None]], axis=1)
        J = np.moveaxis(
            (ptsP - base) / steps.T[:, :, None], 0, 2
        )

        delta = -np.linalg.solve(J, Fb[..., None])[..., 0]
        improved = np.zeros(ka, dtype=bool)
        un, tn = ua.copy(), ta.copy()
        fnew = fa.copy()
        step = np.ones(ka)
        sc = scale[idx]
        for _ in range(8):
            rem = ~improved
            if not rem.any():
                break
            uc = ua[rem] + step[rem, None] * delta[rem, :d]
            tc = ta[rem] + step[rem] * delta[rem, d]
            _, _, ptsC = _chart_forward(chart, uc, tc)
            fc = np.linalg.norm(ptsC - xs[idx][rem], axis=1)
            ok = np.isfinite(fc) & ((fc < fa[rem]) | (fc <= sc[rem]))
            sel = np.nonzero(rem)[0][ok]
            un[sel], tn[sel], fnew[sel] = uc[ok], tc[ok], fc[ok]
            improved[sel] = True
            step[rem & ~improved] *= 0.5
        u[idx[improved]] = un[improved]
        t[idx[improved]] = tn[improved]
        fn[idx[improved]] = fnew[improved]
        stalled[idx[~improved]] = True
        conv[idx] = fn[idx] <= scale[idx]

    return u, t, fn, conv


def build_chart(
    group, field, base, radius=0.5, eps0=0.5, probe=5, min_eps=None
):
    """Construct the tubular chart around a surface base point.

    The half-width starts at eps0 and is halved until a probe grid of
    forward-mapped (u, t) pairs inverts back to its own parameters from the
    standard starting guess; that is exactly the property later queries
    rely on. Probing also certifies the patch stays clear of the
    characteristic set.
    """
    _require_step2(group, "tubular chart")
    base = group.point(np.asarray(base, dtype=float))
    _check_on_surface(field, base)
    data = surface_normals(group, field, base)
    if data.characteristic:
        raise Characteristic("chart base point is characteristic")

    gradf = field.coordinate_gradient(base)
    E = _householder_complement(gradf / np.linalg.norm(gradf))
    n = group.n
    d = n - 1

    if probe**d <= 4096:
        axes = [np.linspace(-radius, radius, probe)] * d
        U = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, d)
    else:
        rng = np.random.default_rng(99)
        U = rng.uniform(-radius, radius, size=(2000, d))
    tgrid = np.linspace(-0.9, 0.9, probe)

    if min_eps is None:
        min_eps = eps0 * 2.0**-12
    eps = float(eps0)
    failures = 0
    while True:
        chart = TubularChart(
            group=group,
            field=field,
            base=base,
            E=E,
            radius=float(radius),
            eps0=eps,
            probe_failures=failures,
        )
        Ug = np.repeat(U, tgrid.size, axis=0)
        Tg = np.tile(tgrid * eps, U.shape[0])
        _, _, xs = _chart_forward(chart, Ug, Tg)
        u0, t0 = _default_start(chart, xs)
        u, t, _, conv = _invert_batch(chart, xs, u0, t0)
        ok = (
            conv
            & (np.abs(u - Ug).max(axis=1) <= 1e-6 * (1.0 + np.abs(Ug).max()))
            & (np.abs(t - Tg) <= 1e-6 * (1.0 + np.abs(Tg)))
        )
        if ok.all():
            return chart
        failures += 1
        eps *= 0.5
        if eps < min_eps:
            raise NoConvergence(
                "chart probe kept failing down to half-width %.3e" % eps
            )


def _default_start(chart, xs):
    """Starting guess for the inversion: tangent coordinates and an f-slope
    estimate of the normal time (f grows at rate |g_H| along the normal)."""
    xs = np.atleast_2d(xs)
    u0 = (xs - chart.base) @ chart.E
    g = frame_gradient(chart.group, chart.field, chart.base)
    rate = np.linalg.norm(g[: chart.group.h])
    t0 = np.asarray(chart.field.value(xs), dtype=float) / rate
    lim = 0.95 * chart.eps0
    return u0, np.clip(t0, -lim, lim)


def _chart_membership(chart, u, t):
    if np.any(np.linalg.norm(np.atleast_2d(u), axis=1) > chart.radius * (1 + 1e-9)):
        raise OutsideChart("surface parameter beyond the patch radius")
    if np.any(np.abs(t) >= chart.eps0):
        raise OutsideChart("normal time beyond the chart half-width")


def phi_map(chart, y, t):
    """Phi(y, t) = exp(y, N(y))(t) for a surface point inside the patch."""
    y = chart.group.point(np.asarray(y, dtype=float))
    _check_on_surface(chart.field, y)
    u = (y - chart.base) @ chart.E
    ys = chart.surface_point(np.atleast_2d(u))[0]
    if np.linalg.norm(ys - y) > 1e-6 * (1.0 + np.linalg.norm(y)):
        raise OutsideChart("surface point is not on this patch's graph")
    _chart_membership(chart, u, t)
    data = surface_normals(chart.group, chart.field, y)
    path = ClosedFormPath(group=chart.group, x0=y, P0=data.N)
    return path.point(float(t))


@dataclass
class PhiJacobian:
    """|det J Phi(y, 0)| both ways; equal up to finite-difference error."""

    fd: float
    closed_form: float


def phi_jacobian(chart, y, step=1e-4):
    """Jacobian determinant of Phi at (y, 0), finite-difference vs closed.

    The chart directions at y are taken Euclidean-orthonormal in the
    tangent plane of the surface; in that parameterization the closed form
    is |g_H| / |grad f| (contract the geodesic velocity L(y) nu_H against
    the unit tangent cofactor, which is grad f / |grad f|; the horizontal
    momentum |g_H| is what survives). The finite-difference side differences
    the projected surface chart and the geodesic flow, so the agreement is
    a real check of the degenerate-direction bookkeeping.
    """
    group = chart.group
    y = group.point(np.asarray(y, dtype=float))
    _check_on_surface(chart.field, y)
    u_in = (y - chart.base) @ chart.E
    _chart_membership(chart, u_in, 0.0)

    gradf = chart.field.coordinate_gradient(y)
    g = frame_gradient(group, chart.field, y)
    ghn = np.linalg.norm(g[: group.h])
    gn = np.linalg.norm(g)
    if ghn < CHARACTERISTIC_REL * gn:
        raise Characteristic("Jacobian degenerates at a characteristic point")
    closed = ghn / np.linalg.norm(gradf)

    B = _householder_complement(gradf / np.linalg.norm(gradf))
    n = group.n
    cols = np.empty((n, n))
    plus = _project_batch(chart.field, y + step * B.T)
    minus = _project_batch(chart.field, y - step * B.T)
    cols[:, : n - 1] = ((plus - minus) / (2.0 * step)).T
    data = surface_normals(group, chart.field, y)
    path = ClosedFormPath(group=group, x0=y, P0=data.N)
    two = path.point(np.array([step, -step]))
    cols[:, n - 1] = (two[0] - two[1]) / (2.0 * step)
    return PhiJacobian(fd=float(abs(np.linalg.det(cols))), closed_form=float(closed))


@dataclass
class ProjectionResult:
    """Nearest-point data: unpacks as (y, t) like the plain signature."""

    y: np.ndarray
    t: float
    u: np.ndarray
    residual: float

    def __iter__(self):
        return iter((self.y, self.t))


def project_to_surface(chart, x, tol=1e-12, max_iter=60):
    """Invert Phi around the patch: nearest surface point and signed time.

    t carries the orientation sign (positive on the f > 0 side); |t| is the
    horizontal distance to the surface inside the chart. Points the Newton
    iteration cannot reach raise NoConvergence, solutions landing beyond
    the patch or the half-width raise OutsideChart.
    """
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    xs = np.atleast_2d(x)
    if xs.shape[1] != chart.group.n:
        raise ValueError("expected %d coordinates" % chart.group.n)
    u0, t0 = _default_start(chart, xs)
    u, t, fn, conv = _invert_batch(chart, xs, u0, t0, tol=tol, max_iter=max_iter)
    if not conv.all():
        raise NoConvergence(
            "chart inversion failed for %d of %d points; worst residual %.3e"
            % (int((~conv).sum()), conv.size, float(fn[~conv].max()))
        )
    _chart_membership(chart, u, t)
    ys = chart.surface_point(u)
    if single:
        return ProjectionResult(
            y=ys[0], t=float(t[0]), u=u[0], residual=float(fn[0])
        )
    return ProjectionResult(y=ys, t=t, u=u, residual=fn)


def delta_H(chart, x, **kw):
    """Horizontal distance |t(x)| to the surface, valid inside the chart."""
    res = project_to_surface(chart, x, **kw)
    return abs(res.t) if np.isscalar(res.t) or np.ndim(res.t) == 0 else np.abs(res.t)


def grad_delta_H(chart, x, **kw):
    """Frame gradient of delta_H as the transported normal covector.

    No differencing: grad delta_H at x = Phi(y, t) equals
    sign(t) (e^{-C_H(varpi(y)) t} nu_H(y), varpi(y)); its horizontal norm
    is 1 by construction (the eikonal property).
    """
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    res = project_to_surface(chart, np.atleast_2d(x), **kw)
    group = chart.group
    out = np.empty((np.atleast_2d(x).shape[0], group.n))
    ys = np.atleast_2d(res.y)
    ts = np.atleast_1d(res.t)
    for k in range(out.shape[0]):
        data = surface_normals(group, chart.field, ys[k])
        M = c_operator(group, data.varpi, horizontal=True)
        gh = exp_matrix(M, float(ts[k])) @ data.nuH
        sgn = 1.0 if ts[k] >= 0.0 else -1.0
        out[k] = sgn * np.concatenate([gh, data.varpi])
    return out[0] if single else out
