"""Periodic orbit search, Floquet classification and weighted orbit sets."""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np
from scipy.optimize import brentq

from .errors import EmptyCensusError, PreconditionError
from .geometry import PointCoord, _embed_for_distance, voronoi_masses

log = logging.getLogger(__name__)

EIG_TOL = 1e-7
COND_MAX = 1e12


@dataclass(frozen=True)
class PeriodicOrbit:
    """Ordered orbit points ``x_1, ..., x_d`` with Floquet data of ``D phi^d(x_1)``."""

    charts: tuple
    points: np.ndarray
    residual: float = 0.0
    monodromy: np.ndarray | None = None
    floquet: tuple = ()
    nondegenerate: bool | None = None
    simple: bool = True
    reliable: bool = True
    boundary: int | None = None
    tangential_eigenvalue: float | None = None

    @property
    def period(self):
        return len(self.charts)

    def __len__(self):
        return self.period

    def point(self, i):
        return PointCoord(self.charts[i], float(self.points[i, 0]), float(self.points[i, 1]))

    def values(self, f):
        """``f`` at every orbit point; ``f(chart, xy)`` is evaluated chart by chart."""
        out = np.empty(self.period)
        charts = np.asarray(self.charts, dtype=object)
        for ch in dict.fromkeys(self.charts):
            m = charts == ch
            out[m] = np.asarray(f(ch, self.points[m]), dtype=float)
        return out

    def functional(self, f):
        """``S(f) = sum_i f(x_i)``."""
        return float(np.sum(self.values(f)))

    def relabeled(self, k):
        """Same orbit started at ``x_{k+1}``."""
        k %= self.period
        charts = self.charts[k:] + self.charts[:k]
        pts = np.roll(self.points, -k, axis=0)
        return replace(self, charts=charts, points=pts)

    def determinant(self):
        return float(np.linalg.det(self.monodromy))

    def summary(self):
        ev = [complex(v) for v in self.floquet]
        return {
            "period": self.period,
            "charts": list(self.charts),
            "points": self.points.tolist(),
            "residual": self.residual,
            "eigenvalues": [[v.real, v.imag] for v in ev],
            "nondegenerate": self.nondegenerate,
            "simple": self.simple,
            "reliable": self.reliable,
            "boundary": self.boundary,
            "tangential_eigenvalue": self.tangential_eigenvalue,
        }


class OrbitSet:
    """Formal sum ``sum_k a_k S_k`` of distinct simple periodic orbits, ``a_k > 0``."""

    def __init__(self, terms=()):
        self.terms = []
        for a, orb in terms:
            a = float(a)
            if not a > 0:
                raise PreconditionError(f"orbit set coefficients must be positive, got {a}")
            self.terms.append((a, orb))

    def __len__(self):
        return len(self.terms)

    def __iter__(self):
        return iter(self.terms)

    @property
    def orbits(self):
        return [o for _, o in self.terms]

    @property
    def coefficients(self):
        return np.array([a for a, _ in self.terms])

    @property
    def integral(self):
        return all(float(a).is_integer() for a, _ in self.terms)

    def size(self):
        """``|O| = sum_k a_k |S_k|``."""
        return float(sum(a * o.period for a, o in self.terms))

    def functional(self, f):
        return float(sum(a * o.functional(f) for a, o in self.terms))

    def average(self, f):
        n = self.size()
        if n <= 0:
            raise EmptyCensusError("orbit set is empty")
        return self.functional(f) / n

    def scaled(self, c):
        return OrbitSet((c * a, o) for a, o in self.terms)

    def combine(self, other, w):
        """Orbit set whose averages are ``w`` times ours plus ``1 - w`` times the other's."""
        if not 0 <= w <= 1:
            raise PreconditionError("combination weight must lie in [0, 1]")
        merged = {}
        order = []
        for scale, part in ((w, self), (1.0 - w, other)):
            n = part.size()
            if scale == 0 or n == 0:
                continue
            for a, o in part.terms:
                k = id(o)
                if k not in merged:
                    order.append(k)
                    merged[k] = [0.0, o]
                merged[k][0] += scale * a / n
        return OrbitSet((merged[k][0], merged[k][1]) for k in order)

    @classmethod
    def from_orbits(cls, orbits, strategy="uniform", surface=None, seed=0):
        """Coefficients by strategy: ``uniform`` (all 1) or ``area`` (Voronoi mass per point)."""
        orbits = list(orbits)
        if strategy == "uniform" or not orbits:
            return cls((1.0, o) for o in orbits)
        if strategy == "area":
            if surface is None:
                raise PreconditionError("area weighting needs the surface")
            charts = np.concatenate([np.asarray(o.charts, dtype=object) for o in orbits])
            pts = np.vstack([o.points for o in orbits])
            mass = voronoi_masses(surface, charts, pts, seed=seed)
            out, k = [], 0
            for o in orbits:
                m = float(np.mean(mass[k:k + o.period]))
                k += o.period
                # orbits whose cells received no samples keep a tiny positive weight
                out.append((max(m, 1e-12), o))
            return cls(out)
        raise PreconditionError(f"unknown coefficient strategy {strategy!r}")


def orbit_functional(O, f):
    """``O(f) = sum_k a_k S_k(f)``."""
    return O.functional(f)


class OrbitCensus(list):
    """List of orbits with the search statistics attached as ``stats``."""

    def __init__(self, orbits=(), stats=None):
        super().__init__(orbits)
        self.stats = stats or {}


def _to_chart(surface, res, chart, jacobian):
    """Express a MapResult in ``chart``; returns (xy, J) with J including the transition."""
    if res.chart == chart:
        return res.xy, res.jac
    if jacobian:
        xy, T = surface.transition(res.chart, chart, res.xy, jacobian=True)
        return xy, T @ res.jac
    return surface.transition(res.chart, chart, res.xy), None


def _residual(phi, chart, z, d, jacobian):
    surf = phi.surface
    res = phi.iterate(chart, z, d, jacobian=jacobian)
    img, J = _to_chart(surf, res, chart, jacobian)
    F = surf.difference(chart, img, z)
    return F, J


def _newton(phi, chart, z, d, tol, max_iter, damped):
    """Vectorised damped Newton on F(z) = phi^d(z) - z; returns (z, |F|, converged)."""
    surf = phi.surface
    z = z.copy()
    F, J = _residual(phi, chart, z, d, True)
    norm = np.linalg.norm(F, axis=-1)
    norm[np.isnan(norm)] = np.inf
    active = norm > tol
    for _ in range(max_iter):
        if not active.any():
            break
        idx = np.flatnonzero(active)
        DF = J[idx] - np.eye(2)
        step = -np.einsum("nij,nj->ni", np.linalg.pinv(DF), F[idx])
        step[~np.isfinite(step)] = 0.0
        alpha = np.ones(len(idx))
        best_z = z[idx].copy()
        best_n = norm[idx].copy()
        pending = np.ones(len(idx), dtype=bool)
        for _ls in range(8 if damped else 1):
            if not pending.any():
                break
            trial = surf.wrap(chart, z[idx] + alpha[:, None] * step)
            Ft, _ = _residual(phi, chart, trial, d, False)
            nt = np.linalg.norm(Ft, axis=-1)
            nt[np.isnan(nt)] = np.inf
            better = pending & (nt < best_n)
            best_z[better] = trial[better]
            best_n[better] = nt[better]
            pending &= ~better
            alpha[pending] *= 0.5
        moved = best_n < norm[idx]
        if not moved.any():
            break
        sel = idx[moved]
        z[sel] = best_z[moved]
        Fn, Jn = _residual(phi, chart, z[sel], d, True)
        F[sel], J[sel] = Fn, Jn
        n = np.linalg.norm(Fn, axis=-1)
        n[np.isnan(n)] = np.inf
        norm[sel] = n
        # points that stopped improving are abandoned
        active[idx[~moved]] = False
        active &= norm > tol
    return z, norm, norm <= tol


def _trace(phi, chart, z, d):
    """Orbit points of ``z`` in canonical charts, and the residual of the closure."""
    surf = phi.surface
    charts, pts = [], []
    ch, p = chart, z[None, :]
    for _ in range(d):
        c, q = surf.canonical(ch, p)
        charts.append(str(c[0]))
        pts.append(q[0])
        res = phi.apply(ch, p)
        ch, p = res.chart, res.xy
    pts = np.array(pts)
    resid = 0.0
    for i in range(d):
        r = phi.apply(charts[i], pts[i][None, :])
        j = (i + 1) % d
        img = surf.transition(r.chart, charts[j], r.xy)
        resid = max(resid, float(np.linalg.norm(surf.difference(charts[j], img, pts[j][None, :]))))
    return tuple(charts), pts, resid


def _minimal_period(phi, chart, z, d, tol):
    surf = phi.surface
    for k in range(1, d):
        if d % k:
            continue
        res = phi.iterate(chart, z[None, :], k)
        img = surf.transition(res.chart, chart, res.xy)
        if np.linalg.norm(surf.difference(chart, img, z[None, :])) <= tol:
            return k
    return d


def monodromy(phi, orbit):
    """``D phi^d(x_1)`` by chaining one-step derivatives along the stored orbit points."""
    surf = phi.surface
    M = np.eye(2)
    d = orbit.period
    for i in range(d):
        r = phi.apply(orbit.charts[i], orbit.points[i][None, :], jacobian=True)
        j = (i + 1) % d
        _, T = surf.transition(r.chart, orbit.charts[j], r.xy, jacobian=True)
        M = T[0] @ r.jac[0] @ M
    return M


def classify_nondegeneracy(orbit, phi):
    """Recompute the monodromy and set Floquet data and flags."""
    M = monodromy(phi, orbit)
    ev = np.linalg.eigvals(M)
    order = np.lexsort((np.imag(ev), np.real(ev)))
    ev = ev[order]
    nondeg = bool(np.min(np.abs(ev - 1.0)) > EIG_TOL)
    cond = np.linalg.cond(M)
    tangential = None
    if orbit.boundary is not None and orbit.charts[0] == phi.surface.native_chart:
        t = phi.surface.transition(orbit.charts[0], f"collar-{orbit.boundary}",
                                   orbit.points[:1])[0, 1]
        v = phi.surface.boundary_tangents(orbit.boundary, np.array([t]))[0]
        tangential = float(v @ M @ v / (v @ v))
    return replace(orbit, monodromy=M, floquet=tuple(complex(x) for x in ev),
                   nondegenerate=nondeg, reliable=bool(cond <= COND_MAX),
                   tangential_eigenvalue=tangential)


def _canonical_start(orbit):
    keys = [(orbit.charts[i], round(float(orbit.points[i, 0]), 9), round(float(orbit.points[i, 1]), 9))
            for i in range(orbit.period)]
    k = min(range(orbit.period), key=lambda i: keys[i])
    return orbit.relabeled(k)


def _same_orbit(surface, a, b, radius):
    if a.period != b.period or sorted(a.charts) != sorted(b.charts):
        return False
    ea = _embed_for_distance(surface, a.charts, a.points)
    eb = _embed_for_distance(surface, b.charts, b.points)
    for k in range(a.period):
        if np.max(np.abs(np.roll(eb, -k, axis=0) - ea)) <= radius:
            return True
    return False


def _sort_key(o):
    return (o.period, o.charts[0], round(float(o.points[0, 0]), 9), round(float(o.points[0, 1]), 9))


def _build_orbit(phi, chart, z, d, tol, boundary=None):
    charts, pts, resid = _trace(phi, chart, z, d)
    radius = 10 * max(tol, 1e-12)
    simple = True
    if d > 1:
        emb = _embed_for_distance(phi.surface, charts, pts)
        diff = emb[:, None, :] - emb[None, :, :]
        dist = np.max(np.abs(diff), axis=-1)
        np.fill_diagonal(dist, np.inf)
        simple = bool(np.min(dist) > radius)
    if boundary is None:
        boundary = _on_boundary(phi.surface, charts, pts)
    orb = PeriodicOrbit(charts, pts, residual=resid, simple=simple, boundary=boundary)
    return _canonical_start(orb)


def _on_boundary(surface, charts, pts, tol=1e-9):
    if any(c != surface.native_chart for c in charts):
        return None
    for i, circ in enumerate(surface.boundary_circles):
        st = surface.transition(surface.native_chart, circ.collar_chart, pts)
        if np.all(np.abs(st[:, 0]) <= tol):
            return i
    return None


def _search_chart(phi, chart, seeds, d_max, tol, max_iter, damped):
    found = []
    ok_total = 0
    for d in range(1, d_max + 1):
        z, norm, ok = _newton(phi, chart, seeds, d, tol, max_iter, damped)
        ok_total += int(ok.sum())
        for zi in z[ok]:
            k = _minimal_period(phi, chart, zi, d, 10 * tol)
            if k != d:
                continue
            found.append(_build_orbit(phi, chart, zi, d, tol))
    return found, ok_total


def _discrete_search(phi, seeds_by_chart, d_max):
    surf = phi.surface
    found = []
    for chart, seeds in seeds_by_chart:
        index = {tuple(p): k for k, p in enumerate(seeds.tolist())}
        assigned = np.zeros(len(seeds), dtype=bool)
        cur_chart, cur = chart, seeds.copy()
        for d in range(1, d_max + 1):
            res = phi.apply(cur_chart, cur)
            cur_chart, cur = res.chart, res.xy
            back = surf.transition(cur_chart, chart, cur)
            hit = ~assigned & np.all(back == seeds, axis=-1)
            for i in np.flatnonzero(hit):
                if assigned[i]:
                    continue
                orb = _build_orbit(phi, chart, seeds[i], d, 0.0)
                found.append(orb)
                # every point of the cycle is done; exact lattice coordinates make lookup safe
                for p in surf.transition(orb.charts[0], chart, orb.points).tolist():
                    k = index.get(tuple(p))
                    if k is not None:
                        assigned[k] = True
            if assigned.all():
                break
    return found


def _boundary_search(phi, d_max, tol, n_samples=64):
    """Periodic orbits on invariant boundary circles by 1-D root finding in collar time."""
    surf = phi.surface
    found = []
    nat = surf.native_chart
    try:
        perm = phi.boundary_permutation()
    except PreconditionError:
        return found
    t = np.arange(n_samples) / n_samples
    for i, circ in enumerate(surf.boundary_circles):
        for d in range(1, d_max + 1):
            j = i
            for _ in range(d):
                j = perm[j]
            if j != i:
                continue

            def g(tt, d=d):
                tt = np.atleast_1d(np.asarray(tt, dtype=float))
                st = np.stack([np.zeros_like(tt), tt], axis=-1)
                res = phi.iterate(circ.collar_chart, st, d)
                out = surf.transition(res.chart, circ.collar_chart, res.xy)
                return (out[:, 1] - tt + 0.5) % 1.0 - 0.5

            vals = g(t)
            roots = [float(t[k]) for k in np.flatnonzero(np.abs(vals) <= tol)]
            for k in range(n_samples):
                a, b = vals[k], vals[(k + 1) % n_samples]
                if abs(a) <= tol or abs(b) <= tol or a * b > 0 or abs(a) > 0.25 or abs(b) > 0.25:
                    continue
                tb = t[k] + 1.0 / n_samples
                try:
                    r = brentq(lambda x: g(x)[0], t[k], tb, xtol=1e-15, rtol=4 * np.finfo(float).eps)
                except ValueError:
                    continue
                if abs(g(r)[0]) <= tol:
                    roots.append(r % 1.0)
            for r in roots:
                p = surf.transition(circ.collar_chart, nat, np.array([[0.0, r]]))[0]
                if _minimal_period(phi, nat, p, d, 10 * tol) != d:
                    continue
                found.append(_build_orbit(phi, nat, p, d, tol, boundary=i))
    return found


def find_orbits(phi, max_period, seeds=12, tol=1e-10, max_iter=40, damped=True,
                boundary=True, workers=1, classify=True):
    """Periodic orbits of ``phi`` with minimal period at most ``max_period``.

    ``seeds`` is a grid density or a list of ``(chart, xy)`` batches. Interior
    orbits come from damped Newton on ``phi^d(z) - z`` in the seed chart;
    boundary orbits from 1-D root finding along each invariant boundary
    circle. Orbits are reduced to their minimal period, deduplicated by
    cyclic matching within ``10 tol`` and sorted deterministically. Lattice
    maps (``phi.discrete``) are handled exactly with ``tol = 0``.
    """
    if max_period < 1:
        raise PreconditionError("max_period must be at least 1")
    surf = phi.surface
    batches = surf.seed_grid(seeds) if isinstance(seeds, int) else [
        (c, np.atleast_2d(np.asarray(x, dtype=float))) for c, x in seeds]
    batches = [(c, x) for c, x in batches if len(x)]
    if not batches:
        raise PreconditionError("seed grid is empty")
    n_seeds = sum(len(x) for _, x in batches)
    if getattr(phi, "discrete", False):
        found = _discrete_search(phi, batches, max_period)
        stats = {"seeds": n_seeds, "converged": None, "raw": len(found)}
        orbits = sorted(_dedup_any(surf, found, 0.0), key=_sort_key)
        if classify:
            orbits = [classify_nondegeneracy(o, phi) for o in orbits]
        stats["orbits"] = len(orbits)
        return OrbitCensus(orbits, stats)

    chunks = []
    for chart, xy in batches:
        for part in np.array_split(xy, max(1, min(workers, len(xy)))):
            if len(part):
                chunks.append((chart, part))

    def work(chunk):
        return _search_chart(phi, chunk[0], chunk[1], max_period, tol, max_iter, damped)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(work, chunks))
    else:
        results = [work(c) for c in chunks]
    found = [o for r in results for o in r[0]]
    converged = sum(r[1] for r in results)
    if boundary and surf.boundary_circles:
        found.extend(_boundary_search(phi, max_period, tol))
    # boundary orbits first so they keep their boundary label through dedup
    found.sort(key=lambda o: o.boundary is None)
    orbits = _dedup_any(surf, found, 10 * tol)
    orbits = [o for o in orbits if o.residual <= max(tol, 1e-14) * 10]
    orbits.sort(key=_sort_key)
    if classify:
        orbits = [classify_nondegeneracy(o, phi) for o in orbits]
    stats = {"seeds": n_seeds, "newton_converged": converged, "raw": len(found),
             "orbits": len(orbits)}
    log.info("orbit search: %s", stats)
    return OrbitCensus(orbits, stats)


def _dedup_any(surface, orbits, radius):
    kept = []
    by_period = {}
    for o in orbits:
        cand = by_period.setdefault(o.period, [])
        if any(_same_orbit(surface, o, c, radius) for c in cand):
            continue
        cand.append(o)
        kept.append(o)
    return kept


def orbits_to_rows(orbits):
    """Flat rows for CSV export (one row per orbit)."""
    rows = []
    for k, o in enumerate(orbits):
        ev = [complex(v) for v in o.floquet] or [complex("nan")] * 2
        rows.append({
            "orbit_id": k,
            "period": o.period,
            "chart": o.charts[0],
            "u": float(o.points[0, 0]),
            "v": float(o.points[0, 1]),
            "eig1_re": ev[0].real, "eig1_im": ev[0].imag,
            "eig2_re": ev[1].real, "eig2_im": ev[1].imag,
            "residual": o.residual,
            "nondegenerate": o.nondegenerate,
            "boundary": "" if o.boundary is None else o.boundary,
        })
    return rows
