"""CC-distance by shooting on the closed-form exponential, step-2 groups.

The boundary-value problem behind d(x, y) is reduced to the origin by left
invariance (targets become (-x) * y) and solved as a square root-finding
problem in the unknowns (direction on the unit horizontal sphere, vertical
covector, arrival time): a normal geodesic with |P_H(0)| = 1 is unit speed,
so the arrival time of a root IS the length of an admissible curve, and the
distance is the smallest arrival time over all roots. The solver is a damped
Gauss-Newton iteration on batches of (target, start) tracks at once, with the
direction handled in local angular coordinates (an orthonormal basis of the
tangent plane at the current direction, re-centered every iteration, so there
are no chart poles) and the time through its logarithm (positivity for free).
The Jacobian is forward finite differences of the closed-form exponential;
direction and time columns reuse the spectral data of the current vertical
covector, so each iteration costs one eigendecomposition per covector
perturbation plus one for the candidate.

Multiple roots are real (they appear past conjugate points, and targets on
the vertical axis carry whole families of minimizers), hence the multi-start
grid; the reduction over converged roots is deterministic: smallest T, ties
broken by lexicographic comparison of the initial covector, so batched and
repeated runs agree to the bit. Any converged root only ever overestimates
the distance, which is what makes the cheap certified lower bound
(|y_H| <= L and |y_a| <= |C^a| L^2 / 4 from the signed-area form of the
vertical displacement) useful for pruning brute-force sweeps.

The orthogonality system integrator reproduces the normal flow in the
(position, horizontal direction, vertical covector) variables; it exists as
an assembly of its own so the coincidence of the two systems is a testable
statement rather than a definition.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import NoConvergence, NotUnit, WrongStep
from .expmap import ClosedFormPath, exp_sr_2step
from .geodesics import GeodesicTrace, _conservation_meta, _rk4
from .groups import CarnotGroup, c_operator, frame_apply, group_product

__all__ = [
    "ShootingSolution",
    "ShootingBatch",
    "SphereSample",
    "gauss_system_integrate",
    "distance_point",
    "distance_batch",
    "distance_lower_bound",
    "horizontal_distance_gradient",
    "sphere_sample",
    "conjugate_detect",
    "exp_jacobian_det",
]

UNIT_TOL = 1e-9
AXIS_TOL = 1e-9
ROOT_TOL = 1e-10
SPHERE_REL_TOL = 1e-5
TIE_REL = 1e-9
DISTINCT_ROOT_TOL = 1e-5

# Start lattice: (rotation of the primary direction, covector turn label)
# pairs in priority order. Turn coverage must grow sign-symmetrically with
# the start count: basins of distinct shooting roots are separated mainly by
# the vertical turn, so a prefix of this list that reaches +1.1 without -1.1
# would systematically miss minimizers on one side of the surface. The
# initial turn fraction actually swept is label*(1 + 0.45*label) because the
# time guess inflates with the label; the 0.72 rows sit at effective turn
# 0.95, covering near-axis targets whose minimizers approach a full period.
_START_PAIRS = np.array(
    [
        (0.0, 0.0), (1.05, 0.0),
        (0.0, 0.55), (0.0, -0.55),
        (0.0, 0.72), (0.0, -0.72),
        (1.05, 0.55), (1.05, -0.55),
        (0.0, 1.1), (0.0, -1.1),
        (-1.05, 0.72), (-1.05, -0.72),
        (1.05, 1.1), (1.05, -1.1),
        (0.0, 1.65), (0.0, -1.65),
        (-1.05, 0.0), (2.1, 0.0),
        (2.1, 1.1), (2.1, -1.1),
        (1.05, 1.65), (1.05, -1.65),
        (0.0, 2.2), (0.0, -2.2),
        (3.1416, 0.0), (3.1416, 0.55),
        (-1.05, 1.1), (-1.05, -1.1),
        (2.1, 0.55), (2.1, -0.55),
        (3.1416, 1.1), (3.1416, -1.1),
    ]
)


@dataclass
class ShootingSolution:
    """One solved boundary-value problem: unit covector, time, diagnostics.

    T is the arrival time of the selected root, which for a unit-horizontal
    covector equals the curve length, i.e. the distance when the root is
    minimizing. ``multiplicity`` marks targets where distinct minimizing
    roots tie (vertical-axis families, conjugate-sphere pairs); ``on_axis``
    the vertical-axis case specifically.
    """

    P0: np.ndarray
    T: float
    residual: float
    multiplicity: bool = False
    on_axis: bool = False
    group: CarnotGroup | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.P0 = np.asarray(self.P0, dtype=float)
        if self.group is not None:
            dev = abs(np.linalg.norm(self.P0[: self.group.h]) - 1.0)
            if dev > 1e-12:
                raise NotUnit(
                    "shooting covector misses |P_H| = 1 by %.3e" % dev
                )

    @property
    def distance(self) -> float:
        return self.T


@dataclass
class ShootingBatch:
    """Vectorized shooting results for a batch of targets (arrays over m)."""

    T: np.ndarray
    P0: np.ndarray
    residual: np.ndarray
    multiplicity: np.ndarray
    on_axis: np.ndarray
    converged: np.ndarray
    group: CarnotGroup | None = field(default=None, repr=False, compare=False)

    def __len__(self):
        return self.T.size

    def solution(self, i: int) -> ShootingSolution:
        if not self.converged[i]:
            raise NoConvergence(
                "no shooting start converged for target %d; best residual %.3e"
                % (i, self.residual[i])
            )
        return ShootingSolution(
            P0=self.P0[i],
            T=float(self.T[i]),
            residual=float(self.residual[i]),
            multiplicity=bool(self.multiplicity[i]),
            on_axis=bool(self.on_axis[i]),
            group=self.group,
        )


def _require_step2(group, what):
    if group.step != 2:
        raise WrongStep(
            "%s needs a step-2 group, got step %d" % (what, group.step)
        )


def gauss_system_integrate(group, x0, nuH0, varpi0, r, steps=2000):
    """Integrate the orthogonality system (x, nu_H, varpi) for time r.

    The system is dx = L(x) nu_H, dnu_H = -C_H(varpi) nu_H (second-layer
    slice of varpi only; higher layers have no horizontal blocks), and
    dvarpi = the vertical rows of -C(varpi) nu_H. It is assembled here
    directly in these variables, independently of the momentum-space flow,
    precisely so that the equality of the two trajectories is a check and
    not a tautology.
    """
    x0 = group.point(np.asarray(x0, dtype=float))
    nuH0 = np.asarray(nuH0, dtype=float)
    varpi0 = np.asarray(varpi0, dtype=float)
    h, v, n = group.h, group.v, group.n
    if nuH0.shape[-1] != h:
        raise ValueError("expected %d horizontal components" % h)
    if varpi0.shape[-1] != v:
        raise ValueError("expected %d vertical components" % v)
    dev = np.max(np.abs(np.linalg.norm(nuH0, axis=-1) - 1.0))
    if dev > UNIT_TOL:
        raise NotUnit("initial direction misses unit norm by %.3e" % dev)

    h2 = group.CH.shape[0]

    def rhs(y):
        x, nu, vp = y[..., :n], y[..., n : n + h], y[..., n + h :]
        PH = np.zeros(x.shape)
        PH[..., :h] = nu
        dx = frame_apply(group, x, PH)
        dnu = -np.einsum("aij,...a,...j->...i", group.CH, vp[..., :h2], nu)
        dvp = -np.einsum("aij,...a,...j->...i", group.CV, vp, PH)[..., h:]
        return np.concatenate([dx, dnu, dvp], axis=-1)

    shape = np.broadcast_shapes(x0.shape[:-1], nuH0.shape[:-1], varpi0.shape[:-1])
    y0 = np.concatenate(
        [
            np.broadcast_to(x0, shape + (n,)),
            np.broadcast_to(nuH0, shape + (h,)),
            np.broadcast_to(varpi0, shape + (v,)),
        ],
        axis=-1,
    )
    times, ys = _rk4(rhs, y0, float(r), int(steps))
    xs = ys[..., :n]
    ps = np.concatenate([ys[..., n : n + h], ys[..., n + h :]], axis=-1)
    meta = {
        "group": group.name,
        "method": "rk4-orthogonality",
        "steps": int(steps),
        **_conservation_meta(group, times, xs, ps),
    }
    return GeodesicTrace(times, xs, ps, meta, group=group)


def _tangent_basis(w):
    """Orthonormal basis of the tangent plane at unit rows w, (m, h, h-1).

    Columns 2..h of the Householder reflection exchanging e1 and -sign(w1) w
    span the orthogonal complement of w; the sign choice keeps the reflector
    away from its own null configuration.
    """
    m, h = w.shape
    sign = np.where(w[:, 0] >= 0.0, 1.0, -1.0)
    u = w.copy()
    u[:, 0] += sign
    H = -2.0 * u[:, :, None] * u[:, None, :] / np.einsum(
        "mi,mi->m", u, u
    )[:, None, None]
    H[:, np.arange(h), np.arange(h)] += 1.0
    return H[:, :, 1:]


def _lex_update(bestP, bestset, candP, candset):
    """Track the lexicographically smallest covector among tied roots."""
    take = candset & ~bestset
    m, n = bestP.shape
    both = candset & bestset
    if both.any():
        less = np.zeros(m, dtype=bool)
        done = np.zeros(m, dtype=bool)
        for j in range(n):
            lt = candP[:, j] < bestP[:, j]
            gt = candP[:, j] > bestP[:, j]
            less |= lt & ~done
            done |= lt | gt
        take |= both & less
    bestP[take] = candP[take]
    return bestset | candset, take


def _start_grid(group, targets, starts):
    """Deterministic multi-start lattice in (direction, covector, time).

    Directions rotate the target's horizontal heading inside a fixed plane;
    covectors scale the target's vertical heading so that a unit lattice
    value corresponds to roughly half a turn of the top rotation frequency
    over the time guess. The time guess is the horizontal displacement plus
    the certified vertical contribution 2 sqrt(|y_a| / |C^a|) per coordinate.
    """
    h, v = group.h, group.v
    m = targets.shape[0]
    yH, yV = targets[:, :h], targets[:, h:]
    rH = np.linalg.norm(yH, axis=1)
    primary = np.zeros((m, h))
    on = rH > AXIS_TOL
    primary[on] = yH[on] / rH[on, None]
    primary[~on, 0] = 1.0
    perp = _tangent_basis(primary)[:, :, 0]

    nV = np.linalg.norm(yV, axis=1)
    ehat = np.zeros((m, v))
    vn = nV > 1e-12
    ehat[vn] = yV[vn] / nV[vn, None]
    ehat[~vn, 0] = 1.0
    omega = np.linalg.svd(
        c_operator(group, ehat, horizontal=True), compute_uv=False
    )[:, 0]
    omega = np.maximum(omega, 1e-12)

    scales = np.linalg.svd(group.CH, compute_uv=False)[:, 0]
    Tg = rH + 2.0 * np.sqrt(np.abs(yV[:, : scales.size]) / scales).sum(axis=1)
    if v > scales.size:
        Tg = Tg + np.sqrt(np.abs(yV[:, scales.size :])).sum(axis=1)
    Tg = np.maximum(Tg, 1e-3 * (1.0 + np.linalg.norm(targets, axis=1)))

    if starts > len(_START_PAIRS):
        raise ValueError("too many starts for the built-in lattice")
    w0 = np.empty((m, starts, h))
    eta0 = np.empty((m, starts, v))
    T0 = np.empty((m, starts))
    for k in range(starts):
        ang, turn = _START_PAIRS[k]
        w0[:, k] = np.cos(ang) * primary + np.sin(ang) * perp
        eta0[:, k] = (turn * 2.0 * np.pi / (Tg * omega))[:, None] * ehat
        T0[:, k] = Tg * (1.0 + 0.45 * abs(turn))
    return w0, eta0, T0


def _endpoints(group, w, eta, T):
    P0 = np.concatenate([w, eta], axis=-1)
    path = ClosedFormPath(group=group, x0=np.zeros(group.n), P0=P0)
    return path, path.point(T)


def _shoot(group, targets, starts, max_iter, tol):
    """Damped Gauss-Newton over all (target, start) tracks simultaneously.

    Returns per-track arrays of shape (m, starts): directions, covectors,
    times, residual norms and convergence flags.
    """
    h, v, n = group.h, group.v, group.n
    m = targets.shape[0]
    w0, eta0, T0 = _start_grid(group, targets, starts)
    K = m * starts
    w = w0.reshape(K, h)
    eta = eta0.reshape(K, v)
    T = T0.reshape(K)
    y = np.repeat(targets, starts, axis=0)
    track_tol = tol * np.repeat(
        np.maximum(1.0, np.linalg.norm(targets, axis=1)), starts
    )

    lam = np.full(K, 1e-3)
    _, pts = _endpoints(group, w, eta, T)
    F = pts - y
    fn = np.linalg.norm(F, axis=1)
    conv = fn <= track_tol
    dead = np.zeros(K, dtype=bool)
    dsig = 1e-6
    dang = 1e-6
    nu = n  # unknowns: (h-1) angles + v covector components + log-time

    for _ in range(max_iter):
        act = ~conv & ~dead
        if not act.any():
            break
        idx = np.nonzero(act)[0]
        wa, ea, Ta = w[idx], eta[idx], T[idx]
        ya, fna, lama = y[idx], fn[idx], lam[idx]
        ka = idx.size

        path = ClosedFormPath(
            group=group, x0=np.zeros(n), P0=np.concatenate([wa, ea], axis=-1)
        )
        pts2 = path.point(np.stack([Ta, Ta * np.exp(dsig)]))
        base = pts2[0]
        Fb = base - ya

        J = np.empty((ka, n, nu))
        V = _tangent_basis(wa)
        Wp = wa[None] + dang * np.moveaxis(V, 2, 0)
        Wp = Wp / np.linalg.norm(Wp, axis=-1, keepdims=True)
        ptsA = path.with_horizontal(Wp).point(Ta)
        J[:, :, : h - 1] = np.moveaxis((ptsA - base) / dang, 0, 2)

        se = 1e-6 * np.maximum(1.0, np.abs(ea))
        P0e = np.broadcast_to(
            np.concatenate([wa, ea], axis=-1), (v, ka, n)
        ).copy()
        for a in range(v):
            P0e[a, :, h + a] += se[:, a]
        ptsE = ClosedFormPath(group=group, x0=np.zeros(n), P0=P0e).point(Ta)
        J[:, :, h - 1 : h - 1 + v] = np.moveaxis(
            (ptsE - base) / se.T[:, :, None], 0, 2
        )
        J[:, :, -1] = (pts2[1] - base) / dsig

        A = np.einsum("kri,krj->kij", J, J)
        g = np.einsum("kri,kr->ki", J, Fb)
        D = np.maximum(np.einsum("kii->ki", A), 1e-12)
        Areg = A.copy()
        diag = np.arange(nu)
        Areg[:, diag, diag] += (lama + 1e-13)[:, None] * D
        delta = -np.linalg.solve(Areg, g[..., None])[..., 0]

        wc = wa + np.einsum("kij,kj->ki", V, delta[:, : h - 1])
        wc = wc / np.linalg.norm(wc, axis=-1, keepdims=True)
        ec = ea + delta[:, h - 1 : h - 1 + v]
        Tc = Ta * np.exp(np.clip(delta[:, -1], -1.5, 1.5))
        _, ptsC = _endpoints(group, wc, ec, Tc)
        Fc = ptsC - ya
        fnc = np.linalg.norm(Fc, axis=1)
        better = np.isfinite(fnc) & (fnc < fna)

        w[idx[better]] = wc[better]
        eta[idx[better]] = ec[better]
        T[idx[better]] = Tc[better]
        F[idx[better]] = Fc[better]
        fn[idx[better]] = fnc[better]
        lam[idx] = np.where(better, np.maximum(lama * 0.3, 1e-12), lama * 7.0)
        conv[idx] = fn[idx] <= track_tol[idx]
        dead[idx] = ~conv[idx] & (lam[idx] > 1e10)

    shape = (m, starts)
    return (
        w.reshape(m, starts, h),
        eta.reshape(m, starts, v),
        T.reshape(shape),
        fn.reshape(shape),
        conv.reshape(shape),
    )


def distance_batch(
    group, x0, targets, starts=16, max_iter=60, tol=ROOT_TOL
):
    """Shooting distances from one base point to a batch of targets.

    Reduces every target to the origin by left translation, runs the
    multi-start solver on the whole batch, and folds each target's converged
    roots deterministically: minimal T first, lexicographic initial covector
    among ties. Targets whose converged roots disagree in covector while
    tying in time are flagged with ``multiplicity``, as are vertical-axis
    targets (horizontal offset below 1e-9), whose minimizers come in
    families. Unconverged targets carry their best residual and
    ``converged=False``; ``solution(i)`` raises NoConvergence for them.
    """
    _require_step2(group, "distance")
    x0 = group.point(np.asarray(x0, dtype=float))
    targets = np.atleast_2d(np.asarray(targets, dtype=float))
    if targets.shape[-1] != group.n:
        raise ValueError("expected targets with %d coordinates" % group.n)
    m = targets.shape[0]
    reduced = group_product(group, -x0, targets)
    h, n = group.h, group.n

    T_out = np.zeros(m)
    P_out = np.zeros((m, n))
    P_out[:, 0] = 1.0
    res_out = np.zeros(m)
    mult_out = np.zeros(m, dtype=bool)
    conv_out = np.ones(m, dtype=bool)
    on_axis = np.linalg.norm(reduced[:, :h], axis=1) < AXIS_TOL

    trivial = np.linalg.norm(reduced, axis=1) < 1e-13
    mult_out[trivial] = True
    todo = ~trivial
    if todo.any():
        sub = reduced[todo]
        ws, etas, Ts, fns, convs = _shoot(group, sub, starts, max_iter, tol)
        ms = sub.shape[0]
        P0s = np.concatenate([ws, etas], axis=-1)

        Tmask = np.where(convs, Ts, np.inf)
        Tmin = Tmask.min(axis=1)
        found = np.isfinite(Tmin)
        ties = convs & (Tmask <= Tmin[:, None] * (1.0 + TIE_REL) + 1e-12)

        bestP = np.zeros((ms, n))
        bestset = np.zeros(ms, dtype=bool)
        bestT = np.zeros(ms)
        bestR = np.full(ms, np.inf)
        spread = np.zeros(ms)
        for s in range(starts):
            cand = ties[:, s]
            bestset, took = _lex_update(bestP, bestset, P0s[:, s], cand)
            bestT[took] = Ts[took, s]
            bestR[took] = fns[took, s]
        for s in range(starts):
            cand = ties[:, s]
            dev = np.abs(P0s[:, s] - bestP).max(axis=1)
            spread = np.where(cand, np.maximum(spread, dev), spread)

        sel = np.nonzero(todo)[0]
        T_out[sel] = np.where(found, bestT, 0.0)
        P_out[sel] = np.where(found[:, None], bestP, P_out[sel])
        res_out[sel] = np.where(found, bestR, fns.min(axis=1))
        mult_out[sel] = found & (
            (spread > DISTINCT_ROOT_TOL) | on_axis[sel]
        )
        conv_out[sel] = found

    return ShootingBatch(
        T=T_out,
        P0=P_out,
        residual=res_out,
        multiplicity=mult_out,
        on_axis=on_axis,
        converged=conv_out,
        group=group,
    )


def distance_point(group, x, y, starts=16, max_iter=60, tol=ROOT_TOL):
    """CC-distance between two points as a ShootingSolution (T = distance)."""
    batch = distance_batch(
        group, x, np.asarray(y, dtype=float)[None, :], starts, max_iter, tol
    )
    return batch.solution(0)


def distance_lower_bound(group, x0, targets):
    """Certified lower bound for d(x0, y), no solving involved.

    A unit-speed horizontal curve of length L from the origin satisfies
    |x_H| <= L and, coordinate by coordinate, |x_a| <= |C^a|_2 L^2 / 4 (the
    vertical displacement is half a signed-area integral with |x_H(s)| <= s).
    Inverting gives L >= max(|y_H|, 2 sqrt(|y_a| / |C^a|_2)). Used to prune
    brute-force sweeps: pruning by a true lower bound can never lose the
    minimizer.
    """
    _require_step2(group, "distance bounds")
    x0 = group.point(np.asarray(x0, dtype=float))
    targets = np.atleast_2d(np.asarray(targets, dtype=float))
    reduced = group_product(group, -x0, targets)
    h = group.h
    scales = np.linalg.svd(group.CH, compute_uv=False)[:, 0]
    vert = 2.0 * np.sqrt(np.abs(reduced[:, h:]) / scales).max(axis=1)
    return np.maximum(np.linalg.norm(reduced[:, :h], axis=1), vert)


def horizontal_distance_gradient(group, x0, points, step=1e-4, **solver):
    """Frame components of grad_H d(x0, .) by central differences.

    Each point is slid along its left-invariant horizontal frame directions
    (right translation by +-step e_i) and the distances are differenced; the
    whole stencil for all points goes through one batched solve. At regular
    sphere points the result has unit norm and matches the arriving momentum.
    """
    _require_step2(group, "distance gradient")
    points = np.atleast_2d(np.asarray(points, dtype=float))
    m = points.shape[0]
    h, n = group.h, group.n
    disp = np.zeros((2 * h, n))
    for i in range(h):
        disp[i, i] = step
        disp[h + i, i] = -step
    moved = group_product(group, points[None, :, :], disp[:, None, :])
    batch = distance_batch(group, x0, moved.reshape(-1, n), **solver)
    if not batch.converged.all():
        bad = int(np.argmin(batch.converged))
        raise NoConvergence(
            "distance solve failed on the gradient stencil; best residual %.3e"
            % batch.residual[bad]
        )
    d = batch.T.reshape(2 * h, m)
    return (d[:h] - d[h:]).T / (2.0 * step)


@dataclass
class SphereSample:
    """Retained CC-sphere points with their generating and arriving data.

    ``nu_H``/``varpi`` are the generating covector split (unit direction and
    vertical part, so the generating momentum is (nu_H, varpi) shot for time
    r); ``arrival_H`` is the horizontal momentum at arrival, i.e. the
    outward normal data used by reverse shooting. ``regular`` marks kept
    points whose generating covector stays strictly inside its first
    rotation period and off the vertical axis with a unique minimizing root.
    """

    x0: np.ndarray
    r: float
    points: np.ndarray
    nu_H: np.ndarray
    varpi: np.ndarray
    arrival_H: np.ndarray
    distances: np.ndarray
    regular: np.ndarray
    swept: int = 0

    def __len__(self):
        return self.points.shape[0]

    def as_table(self) -> str:
        """Whitespace point cloud: coordinates, nu_H, varpi, regular flag."""
        n = self.points.shape[1]
        h = self.nu_H.shape[1]
        v = self.varpi.shape[1]
        header = (
            [f"x{i + 1}" for i in range(n)]
            + [f"nu{i + 1}" for i in range(h)]
            + [f"varpi{i + 1}" for i in range(v)]
            + ["regular"]
        )
        rows = [" ".join(header)]
        for p, nu, vp, reg in zip(
            self.points, self.nu_H, self.varpi, self.regular
        ):
            vals = " ".join(f"{w:.12e}" for w in np.concatenate([p, nu, vp]))
            rows.append(f"{vals} {int(reg)}")
        return "\n".join(rows) + "\n"


def sphere_sample(
    group,
    x0,
    r,
    n_dirs=24,
    n_vert=9,
    starts=12,
    max_iter=60,
    tol=ROOT_TOL,
    seed=1234,
):
    """Sample the CC-sphere of radius r by sweeping the wave front.

    Sweeps unit directions against a bounded vertical-covector grid (the
    bound is 1.25 first periods of the top rotation frequency, so the sweep
    deliberately crosses into wave-front-only territory), maps everything
    through the exponential at time r, then keeps the points whose
    recomputed shooting distance agrees with r within 1e-5 r; the rest of
    the wave front is strictly closer and gets dropped.
    """
    _require_step2(group, "sphere sampling")
    if r <= 0.0:
        raise ValueError("sphere radius must be positive")
    x0 = group.point(np.asarray(x0, dtype=float))
    h, v, n = group.h, group.v, group.n

    rng = np.random.default_rng(seed)
    if h == 2:
        ang = np.linspace(0.0, 2.0 * np.pi, n_dirs, endpoint=False)
        dirs = np.stack([np.cos(ang), np.sin(ang)], axis=-1)
    else:
        dirs = rng.standard_normal((n_dirs, h))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)

    mags = np.linspace(-1.0, 1.0, n_vert)
    if v == 1:
        edirs = np.ones((n_vert, 1))
    else:
        edirs = rng.standard_normal((n_vert, v))
        edirs /= np.linalg.norm(edirs, axis=1, keepdims=True)
    omega = np.linalg.svd(
        c_operator(group, edirs, horizontal=True), compute_uv=False
    )[:, 0]
    etas = (mags * 1.25 * 2.0 * np.pi / (r * np.maximum(omega, 1e-12)))[
        :, None
    ] * edirs

    P0 = np.empty((n_dirs, n_vert, n))
    P0[..., :h] = dirs[:, None, :]
    P0[..., h:] = etas[None, :, :]
    P0 = P0.reshape(-1, n)
    pts, P_arr = exp_sr_2step(group, x0, P0, r, return_momentum=True)

    batch = distance_batch(
        group, x0, pts, starts=starts, max_iter=max_iter, tol=tol
    )
    keep = batch.converged & (np.abs(batch.T - r) < SPHERE_REL_TOL * r)
    # A covector that turns through a full period over the arc lands on the
    # cut locus to within the retention tolerance; the distance is kinked
    # there and the point must not be reported as regular.
    lam = np.linalg.svd(
        c_operator(group, P0[:, h:], horizontal=True), compute_uv=False
    )[:, 0]
    inside = lam * r < 2.0 * np.pi * (1.0 - 1e-3)
    regular = keep & ~batch.multiplicity & ~batch.on_axis & inside
    return SphereSample(
        x0=x0,
        r=float(r),
        points=pts[keep],
        nu_H=P0[keep, :h],
        varpi=P0[keep, h:],
        arrival_H=P_arr[keep, :h],
        distances=batch.T[keep],
        regular=regular[keep],
        swept=P0.shape[0],
    )


def exp_jacobian_det(group, x0, P0, ts, step=1e-5):
    """det of the finite-difference momentum Jacobian of exp at times ts."""
    _require_step2(group, "conjugate detection")
    x0 = group.point(np.asarray(x0, dtype=float))
    P0 = group.point(np.asarray(P0, dtype=float))
    n = group.n
    steps = step * np.maximum(1.0, np.abs(P0))
    pert = np.concatenate([np.diag(steps), -np.diag(steps)]) + P0
    path = ClosedFormPath(group=group, x0=x0, P0=pert)
    ts = np.asarray(ts, dtype=float)
    pts = path.point(ts.reshape(ts.shape + (1,)))
    J = (pts[..., :n, :] - pts[..., n:, :]) / (2.0 * steps[:, None])
    return np.linalg.det(np.swapaxes(J, -1, -2))


def conjugate_detect(group, x0, P0, t_max, samples=400, step=1e-5):
    """Times in (0, t_max] where the exponential's Jacobian degenerates.

    Scans the finite-difference Jacobian determinant on a uniform grid;
    sign changes are bisected, and sign-preserving near-zeros (even-order
    crossings) are caught as local minima of |det| that dip below 1e-8 of
    the neighborhood scale and refined by golden-section. The determinant
    vanishes at t = 0 (the exponential collapses the vertical directions),
    monotonically in magnitude at small t, so nothing spurious is reported
    there.
    """
    _require_step2(group, "conjugate detection")
    if t_max <= 0.0:
        raise ValueError("t_max must be positive")
    ts = np.linspace(0.0, float(t_max), int(samples) + 1)[1:]
    det = exp_jacobian_det(group, x0, P0, ts, step=step)

    def detf(t):
        return float(exp_jacobian_det(group, x0, P0, np.asarray([t]), step)[0])

    roots = []
    sign = np.sign(det)
    for i in np.nonzero(sign[:-1] * sign[1:] < 0)[0]:
        lo, hi = ts[i], ts[i + 1]
        flo = det[i]
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            fm = detf(mid)
            if flo * fm <= 0.0:
                hi = mid
            else:
                lo, flo = mid, fm
        roots.append(0.5 * (lo + hi))

    mag = np.abs(det)
    win = 25
    for i in range(1, ts.size - 1):
        if not (mag[i] < mag[i - 1] and mag[i] < mag[i + 1]):
            continue
        ref = mag[max(0, i - win) : i + win + 1].max()
        if mag[i] > 1e-4 * ref:
            continue
        lo, hi = ts[i - 1], ts[i + 1]
        gr = 0.5 * (np.sqrt(5.0) - 1.0)
        a, b = hi - gr * (hi - lo), lo + gr * (hi - lo)
        fa, fb = abs(detf(a)), abs(detf(b))
        for _ in range(60):
            if fa < fb:
                hi, b, fb = b, a, fa
                a = hi - gr * (hi - lo)
                fa = abs(detf(a))
            else:
                lo, a, fa = a, b, fb
                b = lo + gr * (hi - lo)
                fb = abs(detf(b))
        t_star = 0.5 * (lo + hi)
        if abs(detf(t_star)) < 1e-8 * ref:
            roots.append(t_star)

    roots.sort()
    out = []
    for t in roots:
        if not out or t - out[-1] > 1e-6 * t_max:
            out.append(t)
    return np.asarray(out)
