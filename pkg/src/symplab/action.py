"""Action functions, Birkhoff means, Calabi invariants and mean-action census checks.

For a map ``phi`` of a surface with boundary and a primitive ``beta`` of the
area form, the action is the primitive ``f`` of the exact form
``phi^* beta - beta`` whose ergodic average on a chosen boundary circle
``gamma`` vanishes. The Calabi invariant is the area average of ``f``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from fractions import Fraction
from typing import NamedTuple

import numpy as np
from scipy.optimize import brentq

from .errors import ConvergenceError, EmptyCensusError, NonExactFormError, PreconditionError
from .forms import pullback_difference
from .geometry import PointCoord, area_integrate, voronoi_masses

EXACT_TOL = 1e-7


def _simpson_weights(m):
    w = np.ones(m + 1)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    return w / (3.0 * m)


def segment_integrals(form, a, b, tol=1e-12, m0=8, m_max=1024):
    """``int_a^b form`` along straight native-chart segments, vectorised over rows.

    Composite Simpson with doubling and Richardson correction until successive
    estimates agree to ``tol``. Returns ``(values, error)``.
    """
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.atleast_2d(np.asarray(b, dtype=float))
    a, b = np.broadcast_arrays(a, b)
    d = b - a

    def simpson(m):
        s = np.linspace(0.0, 1.0, m + 1)
        pts = a[:, None, :] + s[None, :, None] * d[:, None, :]
        vals = form(pts.reshape(-1, 2)).reshape(len(a), m + 1, 2)
        integrand = np.einsum("nkj,nj->nk", vals, d)
        return integrand @ _simpson_weights(m)

    m = m0
    prev = simpson(m)
    while True:
        m *= 2
        cur = simpson(m)
        diff = np.abs(cur - prev)
        err = float(np.nanmax(diff / 15.0)) if diff.size else 0.0
        best = cur + (cur - prev) / 15.0
        if err < tol or m >= m_max:
            return best, err
        prev = cur


def _lift(surface, base, xy):
    """Lift ``xy`` to the periodic copy nearest to ``base`` (native chart)."""
    return base + surface.difference(surface.native_chart, xy, base)


class BoundaryMean(NamedTuple):
    value: float
    rotation_number: float
    rational: Fraction | None
    fluctuation: float
    points: np.ndarray


class BirkhoffResult(NamedTuple):
    estimate: np.ndarray | float
    fluctuation: np.ndarray | float


@dataclass
class ActionProfile:
    """Normalised action of ``phi`` relative to ``beta`` and boundary circle ``gamma``."""

    phi: object
    beta: object
    gamma: int
    basepoint: np.ndarray
    lam: object
    boundary: BoundaryMean
    exactness_defect: float
    quad_tol: float = 1e-12
    extras: dict = field(default_factory=dict)

    @property
    def surface(self):
        return self.phi.surface

    @property
    def boundary_mean(self):
        return self.boundary.value

    def f_raw(self, chart, xy):
        """Path integral of ``phi^* beta - beta`` from the basepoint."""
        surf = self.surface
        xy = np.atleast_2d(np.asarray(xy, dtype=float))
        nat = surf.native_chart
        if chart != nat:
            xy = surf.transition(chart, nat, xy)
        out = np.full(len(xy), np.nan)
        ok = ~np.any(np.isnan(xy), axis=-1)
        if ok.any():
            end = _lift(surf, self.basepoint[None, :], xy[ok])
            out[ok], _ = segment_integrals(self.lam, self.basepoint[None, :], end, tol=self.quad_tol)
        return out

    def f(self, chart, xy):
        """Normalised action ``f_raw - boundary mean``."""
        return self.f_raw(chart, xy) - self.boundary.value

    __call__ = f

    def differential_defect(self, xy, h=1e-4):
        """max |d f_raw - (phi^* beta - beta)| by central differences at native points."""
        xy = np.atleast_2d(np.asarray(xy, dtype=float))
        nat = self.surface.native_chart
        grads = []
        for k in (0, 1):
            e = np.zeros(2)
            e[k] = h
            grads.append((self.f_raw(nat, xy + e) - self.f_raw(nat, xy - e)) / (2 * h))
        g = np.stack(grads, axis=-1)
        return float(np.nanmax(np.abs(g - self.lam(xy))))

    def describe(self):
        return {
            "gamma": self.gamma,
            "basepoint": self.basepoint.tolist(),
            "boundary_mean": self.boundary.value,
            "boundary_rotation_number": self.boundary.rotation_number,
            "boundary_rational": None if self.boundary.rational is None else str(self.boundary.rational),
            "boundary_fluctuation": self.boundary.fluctuation,
            "exactness_defect": self.exactness_defect,
        }


def _closed_cycles(surface):
    """Closed native-chart cycles spanning H_1 of the built-in surfaces."""
    if surface.kind == "annulus":
        return {"core": lambda t: np.stack([np.full_like(t, 0.5 * surface.width), t], axis=-1)}
    return {}


def _cycle_integral(form, curve, n=256):
    """Periodic trapezoid rule for a closed curve ``curve(t)``, ``t in [0, 1)``."""
    t = np.arange(n) / n
    pts = curve(t)
    h = 1e-6
    vel = (curve(t + h) - curve(t - h)) / (2 * h)
    return float(np.mean(np.sum(form(pts) * vel, axis=-1)))


def exactness_defect(lam, surface, n_loops=100, seed=0, tol=EXACT_TOL):
    """Largest loop integral of ``lam`` over the homology basis and random triangles.

    Raises ``NonExactFormError`` naming the first offending loop.
    """
    worst = 0.0
    for name, curve in _closed_cycles(surface).items():
        val = _cycle_integral(lam, curve)
        if abs(val) > tol:
            raise NonExactFormError(name, val)
        worst = max(worst, abs(val))
    rng = np.random.default_rng(seed)
    verts = []
    for _ in range(3):
        samples = surface.uniform_samples(rng, n_loops)
        verts.append(np.vstack([p for _, p in samples]))
    A, B, C = verts
    B = _lift(surface, A, B)
    C = _lift(surface, A, C)
    total = np.zeros(n_loops)
    for p, q in ((A, B), (B, C), (C, A)):
        v, _ = segment_integrals(lam, p, q)
        total += v
    k = int(np.argmax(np.abs(total)))
    if abs(total[k]) > tol:
        raise NonExactFormError(f"triangle {k}", float(total[k]))
    return max(worst, float(np.max(np.abs(total))))


def _circle_map(phi, index):
    """Lifted collar-time map on boundary circle ``index`` (displacement in [-1/2, 1/2))."""
    surf = phi.surface
    chart = surf.boundary_circles[index].collar_chart

    def step(t):
        st = np.stack([np.zeros_like(t), np.mod(t, 1.0)], axis=-1)
        res = phi.apply(chart, st)
        out = surf.transition(res.chart, chart, res.xy)
        disp = (out[:, 1] - np.mod(t, 1.0) + 0.5) % 1.0 - 0.5
        return t + disp

    return step


class _TrigInterpolant:
    """Trigonometric interpolant of samples ``y_k = y(k / n)`` of a 1-periodic function."""

    def __init__(self, samples):
        n = len(samples)
        c = np.fft.rfft(samples) / n
        w = np.full(len(c), 2.0)
        w[0] = 1.0
        if n % 2 == 0:
            w[-1] = 1.0
        self.coef = c * w
        self.freq = 2j * np.pi * np.arange(len(c))

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        return np.real(np.exp(np.multiply.outer(t, self.freq)) @ self.coef)


class CircleDynamics(NamedTuple):
    """Boundary circle map and action restricted to the circle, both interpolated.

    ``error`` is the largest interpolation error observed at the midpoints
    between nodes, for the displacement and for the values.
    """

    displacement: _TrigInterpolant
    values: _TrigInterpolant | None
    error: float

    def step(self, t):
        return t + self.displacement(np.mod(t, 1.0))


def circle_dynamics(phi, index, f=None, n=256):
    """Sample the lifted boundary map (and ``f``) at ``n`` nodes and interpolate."""
    surf = phi.surface
    chart = surf.boundary_circles[index].collar_chart
    direct = _circle_map(phi, index)
    nodes = np.arange(2 * n) / (2 * n)
    disp = direct(nodes) - nodes
    # make the displacement continuous around the circle
    disp = disp[0] + np.unwrap(2 * np.pi * (disp - disp[0])) / (2 * np.pi)
    if abs(disp[-1] - disp[0]) > 0.25:
        return None
    d_int = _TrigInterpolant(disp[::2])
    err = float(np.max(np.abs(d_int(nodes[1::2]) - disp[1::2])))
    v_int = None
    if f is not None:
        st = np.stack([np.zeros_like(nodes), nodes], axis=-1)
        vals = f(surf.native_chart, surf.transition(chart, surf.native_chart, st))
        if not np.all(np.isfinite(vals)):
            return None
        v_int = _TrigInterpolant(vals[::2])
        err = max(err, float(np.max(np.abs(v_int(nodes[1::2]) - vals[1::2]))))
    return CircleDynamics(d_int, v_int, err)


def rotation_number(phi, index, n=4000, n_start=8, step=None):
    """Rotation number of ``phi`` on boundary circle ``index`` by lift iteration.

    The lift is the one with displacement in ``[-1/2, 1/2)``. Returns the
    estimate and the bound ``1 / n`` on its error. ``step`` replaces the
    direct lifted map, e.g. by an interpolated one.
    """
    step = step or _circle_map(phi, index)
    t0 = np.arange(n_start) / n_start
    t = t0.copy()
    for _ in range(n):
        t = step(t)
    return float(np.mean((t - t0) / n)), 1.0 / n


def _periodic_boundary_points(phi, index, p, q, n_samples=64, tol=1e-11):
    """Collar times ``t`` with ``F^q(t) = t + p`` for the lift ``F``."""
    step = _circle_map(phi, index)

    def g(t):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        u = t.copy()
        for _ in range(q):
            u = step(u)
        return u - t - p

    ts = np.arange(n_samples) / n_samples
    vals = g(ts)
    roots = [float(t) for t, v in zip(ts, vals) if abs(v) <= tol]
    if roots:
        return np.array(roots[:1])
    for k in range(n_samples):
        a, b = vals[k], vals[(k + 1) % n_samples]
        if a * b < 0:
            r = brentq(lambda x: g(x)[0], ts[k], ts[k] + 1.0 / n_samples, xtol=1e-15,
                       rtol=4 * np.finfo(float).eps)
            return np.array([r % 1.0])
    return np.array([])


def _circle_birkhoff(dyn, t0, n):
    """Birkhoff averages of the interpolated values along the interpolated circle map."""
    t = t0.copy()
    sums = np.zeros(len(t0))
    partial = np.empty((n, len(t0)))
    for k in range(n):
        sums += dyn.values(np.mod(t, 1.0))
        partial[k] = sums / (k + 1)
        t = dyn.step(t)
    final = partial[-1]
    fluct = np.max(np.abs(partial[(3 * n) // 4:] - final), axis=0)
    return final, fluct


def boundary_average(phi, index, f_raw, q_max=200, n_rot=4000, n_cesaro=20000, n_start=16,
                     fluct_tol=1e-7, interp_nodes=256, interp_tol=1e-12):
    """Ergodic average of ``f_raw`` on boundary circle ``index``.

    Rational rotation number ``p/q`` (``q <= q_max``): exact average over one
    period-``q`` boundary orbit. Otherwise a Birkhoff average over
    ``n_start`` starting points, reported with its fluctuation band. Long
    iterations run on trigonometric interpolants of the circle map and of
    ``f_raw`` along the circle when their midpoint error is below
    ``interp_tol``; otherwise on the map itself.
    """
    surf = phi.surface
    perm = phi.boundary_permutation()
    if perm[index] != index:
        raise PreconditionError(f"boundary circle {index} is not invariant under the map")
    chart = surf.boundary_circles[index].collar_chart
    dyn = circle_dynamics(phi, index, f_raw, n=interp_nodes) if interp_nodes else None
    if dyn is not None and dyn.error > interp_tol:
        dyn = None
    rho, err = rotation_number(phi, index, n=n_rot, step=dyn.step if dyn else None)
    frac = Fraction(rho).limit_denominator(q_max)
    if abs(float(frac) - rho) <= 2 * err:
        t = _periodic_boundary_points(phi, index, frac.numerator, frac.denominator)
        if len(t):
            st = np.array([[0.0, t[0]]])
            pts = np.vstack([surf.transition(c, surf.native_chart, p)
                             for c, p in phi.orbit(chart, st, frac.denominator)])
            vals = f_raw(surf.native_chart, pts)
            return BoundaryMean(float(np.mean(vals)), rho, frac, 0.0, pts)
    t0 = (np.arange(n_start) + 0.5) / n_start
    st = np.stack([np.zeros(n_start), t0], axis=-1)
    if dyn is not None:
        est, fl = _circle_birkhoff(dyn, t0, n_cesaro)
        fl = fl + dyn.error
    else:
        est, fl = birkhoff_mean(phi, f_raw, chart, st, n_cesaro)
    value = float(np.mean(est))
    fluct = float(max(np.max(fl), np.ptp(est)))
    if fluct > fluct_tol:
        warnings.warn(f"boundary Birkhoff average fluctuates by {fluct:.3e}", RuntimeWarning,
                      stacklevel=2)
    return BoundaryMean(value, rho, None, fluct,
                        surf.transition(chart, surf.native_chart, st))


def default_basepoint(surface, gamma=0):
    """A point on boundary circle ``gamma`` (collar time 0)."""
    return surface.boundary_points(gamma, np.array([0.0]))[0]


def build_action(phi, beta, gamma, basepoint=None, check_exact=True, n_loops=100, seed=0,
                 **boundary_kw):
    """Action profile of ``phi`` for the primitive ``beta`` and boundary circle ``gamma``."""
    surf = phi.surface
    if beta.surface is not surf:
        raise PreconditionError("primitive lives on a different surface")
    if not 0 <= gamma < len(surf.boundary_circles):
        raise PreconditionError(f"no boundary circle {gamma}")
    if basepoint is None:
        bp = default_basepoint(surf, gamma)
    elif isinstance(basepoint, PointCoord):
        bp = basepoint.to(surf, surf.native_chart).xy
    else:
        bp = np.asarray(basepoint, dtype=float)
    lam = pullback_difference(phi, beta)
    defect = exactness_defect(lam, surf, n_loops=n_loops, seed=seed) if check_exact else float("nan")
    profile = ActionProfile(phi, beta, gamma, bp, lam,
                            BoundaryMean(0.0, float("nan"), None, 0.0, np.zeros((0, 2))), defect)
    profile.boundary = boundary_average(phi, gamma, profile.f_raw, **boundary_kw)
    return profile


def birkhoff_mean(phi, f, chart, xy, n_max, cesaro=False):
    """Average of ``f`` over ``n_max`` iterates starting at each row of ``xy``.

    Returns ``(estimate, fluctuation)``; the fluctuation is the largest
    deviation of the partial averages over the last quarter from the final
    one. With ``cesaro`` the estimate is the mean of all partial averages.
    Iterates leaving the charted region truncate the average for that point.
    """
    if isinstance(chart, PointCoord):
        chart, xy = chart.chart, chart.xy
    single = np.ndim(xy) == 1
    xy = np.atleast_2d(np.asarray(xy, dtype=float))
    sums = np.zeros(len(xy))
    counts = np.zeros(len(xy))
    alive = np.ones(len(xy), dtype=bool)
    partial = np.empty((n_max, len(xy)))
    ch, z = chart, xy
    for k in range(n_max):
        v = np.asarray(f(ch, z), dtype=float)
        alive &= np.isfinite(v)
        sums[alive] += v[alive]
        counts[alive] += 1
        partial[k] = sums / np.maximum(counts, 1)
        if k + 1 < n_max:
            res = phi.apply(ch, z)
            ch, z = res.chart, res.xy
    if np.any(counts < n_max):
        warnings.warn(f"{int(np.sum(counts < n_max))} orbits left the charted region; "
                      "averages truncated", RuntimeWarning, stacklevel=2)
    final = partial[-1]
    tail = partial[(3 * n_max) // 4:]
    fluct = np.max(np.abs(tail - final), axis=0)
    est = np.mean(partial, axis=0) if cesaro else final
    if single:
        return BirkhoffResult(float(est[0]), float(fluct[0]))
    return BirkhoffResult(est, fluct)


class MeanActionRecord(NamedTuple):
    orbit: object
    mean_action: float
    birkhoff: float
    spread: float


def mean_actions(profile, orbits):
    """``S(f)/|S|`` per orbit, with the ``d``-step Birkhoff average at ``x_1`` as cross-check.

    ``spread`` is the range of the ``d``-step averages started at every orbit point.
    """
    recs = []
    for o in orbits:
        vals = o.values(profile.f)
        m = float(np.mean(vals))
        b = birkhoff_mean(profile.phi, profile.f, o.charts[0], o.points[0], o.period).estimate
        spread = 0.0
        if o.period > 1:
            starts = [birkhoff_mean(profile.phi, profile.f, o.charts[i], o.points[i], o.period).estimate
                      for i in range(o.period)]
            spread = float(np.ptp(starts))
        recs.append(MeanActionRecord(o, m, float(b), spread))
    return recs


class CalabiReport(NamedTuple):
    value: float
    quad_error: float
    mc_estimate: float
    mc_halfwidth: float
    birkhoff_estimate: float | None
    birkhoff_halfwidth: float | None

    def to_dict(self):
        return dict(self._asdict())


def calabi(profile, n_mc=2000, seed=0, birkhoff_samples=0, birkhoff_steps=200, tol=1e-10):
    """Calabi invariant by quadrature, with Monte Carlo and optional Birkhoff cross-checks.

    The Monte Carlo band is the 95% normal interval of the sample mean of
    ``f``; the Birkhoff estimator averages long time averages of ``f`` at
    random points, which integrate to the same value.
    """
    surf = profile.surface
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        q = area_integrate(surf, profile.f, tol=tol, full_output=True)
    if not np.isfinite(q.value):
        raise ConvergenceError("Calabi quadrature produced a non-finite value")
    area = surf.total_area
    value = q.value / area
    rng = np.random.default_rng(seed)
    vals = np.concatenate([profile.f(c, p) for c, p in surf.uniform_samples(rng, n_mc) if len(p)])
    mc = float(np.mean(vals))
    mc_hw = float(1.96 * np.std(vals, ddof=1) / math.sqrt(len(vals)))
    b_est = b_hw = None
    if birkhoff_samples:
        ests = []
        for c, p in surf.uniform_samples(rng, birkhoff_samples):
            if len(p):
                ests.append(np.atleast_1d(birkhoff_mean(profile.phi, profile.f, c, p,
                                                        birkhoff_steps).estimate))
        ests = np.concatenate(ests)
        b_est = float(np.mean(ests))
        b_hw = float(1.96 * np.std(ests, ddof=1) / math.sqrt(len(ests)))
    return CalabiReport(value, q.error / area, mc, mc_hw, b_est, b_hw)


class InequalityVerdict(NamedTuple):
    inf_gap: float
    sup_gap: float
    inf_holds: bool
    sup_holds: bool
    verdict: str
    note: str

    def to_dict(self):
        return dict(self._asdict())


def inequality_check(profile, records, cal=None, tol=1e-9):
    """Compare the census range of mean actions with the Calabi invariant.

    HOLDS-on-census when ``min <= Cal <= max`` (within ``tol``). A failure
    says the census is missing orbits; it is not evidence against the
    inequality for the full set of periodic orbits.
    """
    if not records:
        raise EmptyCensusError("mean-action census is empty")
    if cal is None:
        cal = calabi(profile).value
    m = np.array([r.mean_action for r in records])
    lo, hi = float(m.min()) - cal, float(m.max()) - cal
    inf_ok, sup_ok = lo <= tol, hi >= -tol
    holds = inf_ok and sup_ok
    side = [] if holds else [s for s, ok in (("inf", inf_ok), ("sup", sup_ok)) if not ok]
    note = ("census brackets Cal" if holds
            else f"{'/'.join(side)}-side fails on this census: orbits are missing from it")
    return InequalityVerdict(lo, hi, inf_ok, sup_ok,
                             "HOLDS-on-census" if holds else "FAILS-on-census", note)


class CensusFractions(NamedTuple):
    plus: float
    minus: float
    weighting: str
    cal: float

    def to_dict(self):
        return dict(self._asdict())


def p_epsilon_census(profile, records, eps, cal=None, weighting="voronoi", atol=1e-12, seed=0):
    """Weighted fractions of census orbit points in ``P_eps^+`` and ``P_eps^-``.

    For ``Cal >= 0``: ``P^+ = {f_inf >= (1-eps) Cal}``, ``P^- = {f_inf <= (1+eps) Cal}``.
    For ``Cal < 0``: ``P^+ = {f_inf <= (1-eps) Cal}``, ``P^- = {f_inf >= (1+eps) Cal}``.
    Points carry Voronoi cell masses (a heuristic weighting) or equal weights.
    """
    if not eps > 0:
        raise PreconditionError("eps must be positive")
    if not records:
        raise EmptyCensusError("mean-action census is empty")
    if cal is None:
        cal = calabi(profile).value
    charts = np.concatenate([np.asarray(r.orbit.charts, dtype=object) for r in records])
    pts = np.vstack([r.orbit.points for r in records])
    f_inf = np.concatenate([np.full(r.orbit.period, r.mean_action) for r in records])
    if weighting == "voronoi":
        w = voronoi_masses(profile.surface, charts, pts, seed=seed)
        label = "voronoi (heuristic)"
    elif weighting == "uniform":
        w = np.ones(len(pts))
        label = "uniform points (heuristic)"
    else:
        raise PreconditionError(f"unknown weighting {weighting!r}")
    if w.sum() <= 0:
        w = np.ones(len(pts))
    if cal >= 0:
        plus = f_inf >= (1 - eps) * cal - atol
        minus = f_inf <= (1 + eps) * cal + atol
    else:
        plus = f_inf <= (1 - eps) * cal + atol
        minus = f_inf >= (1 + eps) * cal - atol
    total = w.sum()
    return CensusFractions(float(w[plus].sum() / total), float(w[minus].sum() / total), label, cal)
