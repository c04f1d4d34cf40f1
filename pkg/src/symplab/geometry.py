"""Concrete surfaces with boundary, their charts, capping and area quadrature.

Three kinds of surface are supported:

* ``Disk``: the unit disk in the chart ``"disk"`` with area form
  ``(A / pi) dx ^ dy`` (area ``A``).
* ``Annulus``: ``[0, W] x R/Z`` in the chart ``"annulus"`` with ``ds ^ dt``.
* ``CappedSurface``: a base surface with an equal-area disk glued onto each
  boundary circle, giving a closed surface of area ``B``.

Every boundary circle ``i`` carries a collar chart ``"collar-i"`` with
coordinates ``(s, t)`` in which the area form is ``ds ^ dt``, ``s = 0`` is the
boundary and ``s`` increases into the surface. With ``s`` pointing inward the
collar coordinate ``t`` runs against the boundary orientation induced by the
area form.

All coordinate arrays have shape ``(..., 2)``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, NamedTuple

import numpy as np
from numpy.polynomial.legendre import leggauss

from .errors import InvalidAreaError, InvalidCollarError, QuadratureError

TWO_PI = 2.0 * math.pi
_DOMAIN_TOL = 1e-12


class PointCoord(NamedTuple):
    """A single point given in a named chart."""

    chart: str
    u: float
    v: float

    @property
    def xy(self):
        return np.array([self.u, self.v])

    def to(self, surface, chart):
        xy = surface.transition(self.chart, chart, self.xy)
        if np.any(np.isnan(xy)):
            raise ValueError(f"point {self} is not in the domain of chart {chart!r}")
        return PointCoord(chart, float(xy[0]), float(xy[1]))


@dataclass(frozen=True)
class Chart:
    name: str
    # period of each coordinate, None when the coordinate is not periodic
    period: tuple = (None, None)
    # constant area-form coefficient, None when it varies over the chart
    coefficient: float | None = 1.0


@dataclass(frozen=True)
class BoundaryCircle:
    index: int
    collar_chart: str
    orientation: int = -1


@dataclass(frozen=True)
class CapChart:
    """Gluing data for one cap: psi(s, t) = (sqrt((pi r0^2 + s) / pi), 2 pi t)."""

    r0: float
    r1: float
    delta: float

    @property
    def disk_radius(self):
        return self.r1

    def psi(self, s, t):
        """Collar (s, t) to polar (r, theta) in the cap disk."""
        return np.sqrt((math.pi * self.r0**2 + s) / math.pi), TWO_PI * t

    def psi_cartesian(self, s, t):
        r, th = self.psi(s, t)
        return r * np.cos(th), r * np.sin(th)


@dataclass(frozen=True)
class QuadPatch:
    """A parametrized piece of a chart used for area quadrature.

    ``param(u, v)`` returns chart coordinates, ``density(u, v)`` the area form
    coefficient in parameter space and ``weight(u, v)`` the partition of unity
    weight of the patch.
    """

    chart: str
    u_breaks: tuple
    v_range: tuple
    param: Callable
    density: Callable
    weight: Callable


def _smootherstep(x):
    x = np.clip(x, 0.0, 1.0)
    return x * x * x * (x * (6.0 * x - 15.0) + 10.0)


def collar_bump(s, width):
    """Partition weight of a collar patch: 1 for s <= w/3, 0 for s >= 2w/3."""
    a, b = width / 3.0, 2.0 * width / 3.0
    return 1.0 - _smootherstep((s - a) / (b - a))


def _wrap_periodic(values, period):
    return np.mod(values, period)


def _centered(values, period):
    return values - period * np.round(values / period)


class Surface:
    """Base class of the concrete surfaces. Instances are immutable."""

    kind = "abstract"
    native_chart: str
    charts: dict
    boundary_circles: tuple
    total_area: float
    collar_width: float

    # chart plumbing -----------------------------------------------------

    def chart(self, name):
        try:
            return self.charts[name]
        except KeyError:
            raise KeyError(f"{self.kind} surface has no chart {name!r}") from None

    @property
    def native_coefficient(self):
        return self.charts[self.native_chart].coefficient

    def wrap(self, chart, xy):
        """Reduce periodic coordinates into their fundamental domain."""
        per = self.chart(chart).period
        xy = np.array(xy, dtype=float)
        for k in (0, 1):
            if per[k] is not None:
                xy[..., k] = _wrap_periodic(xy[..., k], per[k])
        return xy

    def difference(self, chart, a, b):
        """a - b in chart coordinates, periodic coordinates taken centred."""
        d = np.asarray(a, dtype=float) - np.asarray(b, dtype=float)
        per = self.chart(chart).period
        for k in (0, 1):
            if per[k] is not None:
                d[..., k] = _centered(d[..., k], per[k])
        return d

    def distance(self, chart, a, b):
        return np.linalg.norm(self.difference(chart, a, b), axis=-1)

    def coefficient(self, chart, xy):
        """Area form coefficient of ``chart`` at ``xy``."""
        c = self.chart(chart).coefficient
        xy = np.asarray(xy, dtype=float)
        return np.full(xy.shape[:-1], c)

    def transition(self, src, dst, xy, jacobian=False):
        """Convert coordinates from chart ``src`` to chart ``dst``.

        Points outside the domain of ``dst`` come back as NaN. With
        ``jacobian=True`` returns ``(xy_dst, J)`` with ``J = d(dst)/d(src)``.
        """
        xy = np.asarray(xy, dtype=float)
        self.chart(src), self.chart(dst)
        if src == dst:
            out = self.wrap(src, xy)
            if jacobian:
                return out, np.broadcast_to(np.eye(2), xy.shape[:-1] + (2, 2)).copy()
            return out
        w, j1 = self._to_native(src, xy)
        out, j2 = self._from_native(dst, w)
        if jacobian:
            return out, j2 @ j1
        return out

    def _to_native(self, chart, xy):
        if chart == self.native_chart:
            return self.wrap(chart, xy), _eye_like(xy)
        raise KeyError(chart)

    def _from_native(self, chart, xy):
        if chart == self.native_chart:
            return self.wrap(chart, xy), _eye_like(xy)
        raise KeyError(chart)

    def canonical(self, chart, xy):
        """Preferred chart for a batch of points: returns ``(charts, xy)``."""
        xy = np.atleast_2d(np.asarray(xy, dtype=float))
        out = self.transition(chart, self.native_chart, xy)
        return np.array([self.native_chart] * len(xy), dtype=object), out

    # boundary -----------------------------------------------------------

    def boundary_points(self, index, t):
        """Native coordinates of the boundary circle ``index`` at collar times ``t``."""
        t = np.asarray(t, dtype=float)
        st = np.stack([np.zeros_like(t), t], axis=-1)
        return self.transition(self.boundary_circles[index].collar_chart, self.native_chart, st)

    def boundary_tangents(self, index, t):
        """Native-chart velocity of ``t -> boundary point`` (the collar d/dt)."""
        t = np.asarray(t, dtype=float)
        st = np.stack([np.zeros_like(t), t], axis=-1)
        _, J = self.transition(self.boundary_circles[index].collar_chart, self.native_chart,
                               st, jacobian=True)
        return J[..., :, 1]

    def collar_coordinates(self, index, chart, xy):
        return self.transition(chart, self.boundary_circles[index].collar_chart, xy)

    # sampling -----------------------------------------------------------

    def seed_grid(self, n):
        raise NotImplementedError

    def uniform_samples(self, rng, n):
        raise NotImplementedError

    def quadrature_patches(self):
        raise NotImplementedError

    def contains(self, chart, xy, tol=1e-9):
        xy = self.transition(chart, self.native_chart, xy)
        return ~np.any(np.isnan(xy), axis=-1)

    def describe(self):
        return {"kind": self.kind, "total_area": self.total_area,
                "n_boundary": len(self.boundary_circles), "collar_width": self.collar_width}


def _eye_like(xy):
    return np.broadcast_to(np.eye(2), np.shape(xy)[:-1] + (2, 2)).copy()


class Disk(Surface):
    """Unit disk in the chart ``"disk"`` with area form ``(area / pi) dx ^ dy``.

    The collar chart is ``s = area * (1 - r^2)``, ``t = -theta / (2 pi)``.
    """

    kind = "disk"
    native_chart = "disk"

    def __init__(self, area=1.0):
        if not area > 0:
            raise InvalidAreaError(f"area must be positive, got {area}")
        self.total_area = float(area)
        self.collar_width = 0.5 * self.total_area
        self.charts = {
            "disk": Chart("disk", (None, None), self.total_area / math.pi),
            "collar-0": Chart("collar-0", (None, 1.0), 1.0),
        }
        self.boundary_circles = (BoundaryCircle(0, "collar-0"),)

    def __repr__(self):
        return f"Disk(area={self.total_area!r})"

    def _collar_to_disk(self, st):
        A = self.total_area
        s, t = st[..., 0], st[..., 1]
        r2 = 1.0 - s / A
        valid = (s >= -_DOMAIN_TOL) & (s < self.collar_width + _DOMAIN_TOL)
        r = np.sqrt(np.where(valid, np.maximum(r2, 0.0), np.nan))
        ang = -TWO_PI * t
        c, sn = np.cos(ang), np.sin(ang)
        out = np.stack([r * c, r * sn], axis=-1)
        dr_ds = -1.0 / (2.0 * A * r)
        J = np.empty(st.shape[:-1] + (2, 2))
        J[..., 0, 0] = c * dr_ds
        J[..., 1, 0] = sn * dr_ds
        J[..., 0, 1] = TWO_PI * r * sn
        J[..., 1, 1] = -TWO_PI * r * c
        return out, J

    def _disk_to_collar(self, xy):
        A = self.total_area
        x, y = xy[..., 0], xy[..., 1]
        r2 = x * x + y * y
        s = A * (1.0 - r2)
        valid = (r2 <= 1.0 + _DOMAIN_TOL) & (s < self.collar_width + _DOMAIN_TOL)
        s = np.where(valid, np.maximum(s, 0.0), np.nan)
        t = np.mod(-np.arctan2(y, x) / TWO_PI, 1.0)
        out = np.stack([s, np.where(valid, t, np.nan)], axis=-1)
        J = np.empty(xy.shape[:-1] + (2, 2))
        J[..., 0, 0] = -2.0 * A * x
        J[..., 0, 1] = -2.0 * A * y
        # the angle chart is singular at the centre; leave NaN there
        with np.errstate(divide="ignore", invalid="ignore"):
            J[..., 1, 0] = y / (TWO_PI * r2)
            J[..., 1, 1] = -x / (TWO_PI * r2)
        return out, J

    def _to_native(self, chart, xy):
        if chart == "disk":
            return self._checked_disk(xy), _eye_like(xy)
        if chart == "collar-0":
            return self._collar_to_disk(self.wrap(chart, xy))
        raise KeyError(chart)

    def _from_native(self, chart, xy):
        if chart == "disk":
            return self._checked_disk(xy), _eye_like(xy)
        if chart == "collar-0":
            return self._disk_to_collar(xy)
        raise KeyError(chart)

    def _checked_disk(self, xy):
        xy = np.array(xy, dtype=float)
        bad = np.sum(xy * xy, axis=-1) > 1.0 + 1e-9
        xy[bad] = np.nan
        return xy

    def seed_grid(self, n):
        g = (np.arange(n) + 0.5) / n * 2.0 - 1.0
        X, Y = np.meshgrid(g, g, indexing="ij")
        pts = np.stack([X.ravel(), Y.ravel()], axis=-1)
        pts = pts[np.sum(pts**2, axis=-1) < 1.0 - 1e-9]
        return [("disk", pts)]

    def uniform_samples(self, rng, n):
        r = np.sqrt(rng.random(n))
        th = TWO_PI * rng.random(n)
        return [("disk", np.stack([r * np.cos(th), r * np.sin(th)], axis=-1))]

    def quadrature_patches(self):
        A, w = self.total_area, self.collar_width
        a, b = w / 3.0, 2.0 * w / 3.0
        rho = lambda s: math.sqrt(1.0 - s / A)
        interior = QuadPatch(
            chart="disk",
            u_breaks=(0.0, rho(b), rho(a), 1.0),
            v_range=(0.0, TWO_PI),
            param=lambda u, v: np.stack([u * np.cos(v), u * np.sin(v)], axis=-1),
            density=lambda u, v: (A / math.pi) * u,
            weight=lambda u, v: 1.0 - collar_bump(A * (1.0 - u * u), w),
        )
        collar = QuadPatch(
            chart="collar-0",
            u_breaks=(0.0, a, b),
            v_range=(0.0, 1.0),
            param=lambda u, v: np.stack([u, v], axis=-1),
            density=lambda u, v: np.ones_like(u),
            weight=lambda u, v: collar_bump(u, w),
        )
        return [interior, collar]


class Annulus(Surface):
    """Flat annulus ``[0, width] x R/Z`` with area form ``ds ^ dt``.

    Collar 0 is the identity chart near ``s = 0``; collar 1 is
    ``(s', t') = (width - s, -t)`` near ``s = width``.
    """

    kind = "annulus"
    native_chart = "annulus"

    def __init__(self, width=1.0):
        if not width > 0:
            raise InvalidAreaError(f"width must be positive, got {width}")
        self.width = float(width)
        self.total_area = self.width
        self.collar_width = 0.5 * self.width
        self.charts = {
            "annulus": Chart("annulus", (None, 1.0), 1.0),
            "collar-0": Chart("collar-0", (None, 1.0), 1.0),
            "collar-1": Chart("collar-1", (None, 1.0), 1.0),
        }
        self.boundary_circles = (BoundaryCircle(0, "collar-0"), BoundaryCircle(1, "collar-1"))

    def __repr__(self):
        return f"Annulus(width={self.width!r})"

    def _in_strip(self, xy, lo, hi):
        xy = self.wrap("annulus", xy)
        bad = (xy[..., 0] < lo - _DOMAIN_TOL) | (xy[..., 0] > hi + _DOMAIN_TOL)
        xy[bad] = np.nan
        return xy

    def _to_native(self, chart, xy):
        xy = np.asarray(xy, dtype=float)
        if chart == "annulus":
            return self._in_strip(xy, 0.0, self.width), _eye_like(xy)
        if chart == "collar-0":
            return self._in_strip(xy, 0.0, self.collar_width), _eye_like(xy)
        if chart == "collar-1":
            chk = self._in_strip(xy, 0.0, self.collar_width)
            out = np.stack([self.width - chk[..., 0], -chk[..., 1]], axis=-1)
            return self.wrap("annulus", out), -_eye_like(xy)
        raise KeyError(chart)

    def _from_native(self, chart, xy):
        xy = np.asarray(xy, dtype=float)
        if chart == "annulus":
            return self._in_strip(xy, 0.0, self.width), _eye_like(xy)
        if chart == "collar-0":
            return self._in_strip(xy, 0.0, self.collar_width), _eye_like(xy)
        if chart == "collar-1":
            out = np.stack([self.width - xy[..., 0], -xy[..., 1]], axis=-1)
            return self._in_strip(out, 0.0, self.collar_width), -_eye_like(xy)
        raise KeyError(chart)

    def seed_grid(self, n):
        s = (np.arange(n) + 0.5) / n * self.width
        t = np.arange(n) / n
        S, T = np.meshgrid(s, t, indexing="ij")
        return [("annulus", np.stack([S.ravel(), T.ravel()], axis=-1))]

    def uniform_samples(self, rng, n):
        return [("annulus", np.stack([self.width * rng.random(n), rng.random(n)], axis=-1))]

    def quadrature_patches(self):
        W, w = self.width, self.collar_width
        a, b = w / 3.0, 2.0 * w / 3.0
        ident = lambda u, v: np.stack([u, v], axis=-1)
        one = lambda u, v: np.ones_like(u)
        interior = QuadPatch(
            "annulus", tuple(sorted({0.0, a, b, W - b, W - a, W})), (0.0, 1.0), ident, one,
            lambda u, v: 1.0 - collar_bump(u, w) - collar_bump(W - u, w),
        )
        c0 = QuadPatch("collar-0", (0.0, a, b), (0.0, 1.0), ident, one,
                       lambda u, v: collar_bump(u, w))
        c1 = QuadPatch("collar-1", (0.0, a, b), (0.0, 1.0), ident, one,
                       lambda u, v: collar_bump(u, w))
        return [interior, c0, c1]


class CappedSurface(Surface):
    """Closed surface obtained by gluing one cap disk onto each boundary circle.

    Cap ``i`` is the chart ``"cap-i"``: Cartesian coordinates ``(X, Y)`` on the
    open disk of radius ``r1`` with area form ``dX ^ dY``. Its annular part
    ``r0 <= R < r1`` is identified with collar ``i`` of the base through
    ``psi``. The circles ``R = r0`` form the Lagrangian ``L`` (the old boundary).
    """

    kind = "capped"

    def __init__(self, base, target_area, delta, caps=None):
        self.base = base
        self.total_area = float(target_area)
        self.delta = float(delta)
        n = len(base.boundary_circles)
        A, B = base.total_area, self.total_area
        if caps is None:
            r0 = math.sqrt((B - A) / (n * math.pi))
            r1 = math.sqrt((B - A + n * self.delta) / (n * math.pi))
            caps = tuple(CapChart(r0, r1, self.delta) for _ in range(n))
        self.caps = tuple(caps)
        self.native_chart = base.native_chart
        self.collar_width = base.collar_width
        self.boundary_circles = base.boundary_circles
        self.charts = dict(base.charts)
        for i in range(n):
            self.charts[f"cap-{i}"] = Chart(f"cap-{i}", (None, None), 1.0)

    def __repr__(self):
        return f"CappedSurface({self.base!r}, target_area={self.total_area!r}, delta={self.delta!r})"

    @property
    def n_caps(self):
        return len(self.caps)

    def area_ratio(self, max_denominator=10_000, tol=1e-12):
        """B / A as a Fraction when it is rational within ``tol``, else None."""
        x = self.total_area / self.base.total_area
        fr = Fraction(x).limit_denominator(max_denominator)
        return fr if abs(float(fr) - x) <= tol else None

    def cap_index(self, chart):
        return int(chart.split("-")[1]) if chart.startswith("cap-") else None

    def _cap_to_collar(self, i, xy):
        cap = self.caps[i]
        X, Y = xy[..., 0], xy[..., 1]
        R2 = X * X + Y * Y
        s = math.pi * R2 - math.pi * cap.r0**2
        valid = (s >= -1e-10) & (s < cap.delta + _DOMAIN_TOL)
        s = np.where(valid, np.maximum(s, 0.0), np.nan)
        t = np.where(valid, np.mod(np.arctan2(Y, X) / TWO_PI, 1.0), np.nan)
        J = np.empty(xy.shape[:-1] + (2, 2))
        J[..., 0, 0] = TWO_PI * X
        J[..., 0, 1] = TWO_PI * Y
        J[..., 1, 0] = -Y / (TWO_PI * R2)
        J[..., 1, 1] = X / (TWO_PI * R2)
        return np.stack([s, t], axis=-1), J

    def _collar_to_cap(self, i, st):
        cap = self.caps[i]
        s, t = st[..., 0], st[..., 1]
        valid = (s >= -_DOMAIN_TOL) & (s < cap.delta + _DOMAIN_TOL)
        s = np.where(valid, s, np.nan)
        R, th = cap.psi(s, t)
        c, sn = np.cos(th), np.sin(th)
        J = np.empty(st.shape[:-1] + (2, 2))
        dR = 1.0 / (TWO_PI * R)
        J[..., 0, 0] = c * dR
        J[..., 1, 0] = sn * dR
        J[..., 0, 1] = -TWO_PI * R * sn
        J[..., 1, 1] = TWO_PI * R * c
        return np.stack([R * c, R * sn], axis=-1), J

    def _cap_domain(self, i, xy):
        xy = np.array(xy, dtype=float)
        bad = np.sum(xy * xy, axis=-1) >= self.caps[i].r1 ** 2 + _DOMAIN_TOL
        xy[bad] = np.nan
        return xy

    def _to_native(self, chart, xy):
        i = self.cap_index(chart)
        if i is None:
            return self.base._to_native(chart, xy)
        st, j1 = self._cap_to_collar(i, self._cap_domain(i, xy))
        out, j2 = self.base._to_native(f"collar-{i}", st)
        return out, j2 @ j1

    def _from_native(self, chart, xy):
        i = self.cap_index(chart)
        if i is None:
            return self.base._from_native(chart, xy)
        st, j1 = self.base._from_native(f"collar-{i}", xy)
        out, j2 = self._collar_to_cap(i, st)
        return out, j2 @ j1

    def transition(self, src, dst, xy, jacobian=False):
        i, j = self.cap_index(src), self.cap_index(dst)
        if i is not None and j is not None and i != j:
            xy = np.asarray(xy, dtype=float)
            out = np.full(xy.shape, np.nan)
            if jacobian:
                return out, np.full(xy.shape[:-1] + (2, 2), np.nan)
            return out
        if i is not None and i == j:
            out = self._cap_domain(i, xy)
            return (out, _eye_like(out)) if jacobian else out
        return super().transition(src, dst, xy, jacobian=jacobian)

    def in_base(self, chart, xy, tol=1e-9):
        """True where the point lies in the original surface Z (L included)."""
        xy = np.atleast_2d(np.asarray(xy, dtype=float))
        i = self.cap_index(chart)
        if i is None:
            return ~np.any(np.isnan(xy), axis=-1)
        R = np.sqrt(np.sum(xy * xy, axis=-1))
        return R >= self.caps[i].r0 - tol

    def canonical(self, chart, xy):
        xy = np.atleast_2d(np.asarray(xy, dtype=float))
        i = self.cap_index(chart)
        if i is None:
            return super().canonical(chart, xy)
        charts = np.array([chart] * len(xy), dtype=object)
        out = self._cap_domain(i, xy)
        inz = self.in_base(chart, xy, tol=1e-12)
        if np.any(inz):
            out[inz] = self.transition(chart, self.native_chart, xy[inz])
            charts[inz] = self.native_chart
        return charts, out

    def contains(self, chart, xy, tol=1e-9):
        if self.cap_index(chart) is not None:
            xy = np.asarray(xy, dtype=float)
            return np.sum(xy * xy, axis=-1) < self.caps[self.cap_index(chart)].r1 ** 2
        return self.base.contains(chart, xy, tol)

    def seed_grid(self, n):
        seeds = list(self.base.seed_grid(n))
        for i, cap in enumerate(self.caps):
            g = (np.arange(n) + 0.5) / n * 2.0 - 1.0
            X, Y = np.meshgrid(g * cap.r0, g * cap.r0, indexing="ij")
            pts = np.stack([X.ravel(), Y.ravel()], axis=-1)
            pts = pts[np.sum(pts**2, axis=-1) < (cap.r0 * (1.0 - 1e-6)) ** 2]
            seeds.append((f"cap-{i}", np.vstack([[0.0, 0.0], pts])))
        return seeds

    def uniform_samples(self, rng, n):
        areas = np.array([self.base.total_area] + [math.pi * c.r0**2 for c in self.caps])
        counts = rng.multinomial(n, areas / areas.sum())
        out = list(self.base.uniform_samples(rng, counts[0]))
        for i, (cap, m) in enumerate(zip(self.caps, counts[1:])):
            R = cap.r0 * np.sqrt(rng.random(m))
            th = TWO_PI * rng.random(m)
            out.append((f"cap-{i}", np.stack([R * np.cos(th), R * np.sin(th)], axis=-1)))
        return out

    def quadrature_patches(self):
        patches = list(self.base.quadrature_patches())
        for i, cap in enumerate(self.caps):
            patches.append(QuadPatch(
                f"cap-{i}", (0.0, cap.r0), (0.0, TWO_PI),
                lambda u, v: np.stack([u * np.cos(v), u * np.sin(v)], axis=-1),
                lambda u, v: u,
                lambda u, v: np.ones_like(u),
            ))
        return patches

    def describe(self):
        d = super().describe()
        d.update(base=self.base.describe(), delta=self.delta,
                 r0=[c.r0 for c in self.caps], r1=[c.r1 for c in self.caps])
        return d


def cap_surface(base, target_area, delta):
    """Glue an equal-area disk onto every boundary circle of ``base``.

    Each cap has area ``(B - A) / n``; its annular part of width ``delta`` (in
    collar area units) overlaps the base collar.
    """
    if isinstance(base, CappedSurface):
        raise InvalidAreaError("surface is already capped")
    n = len(base.boundary_circles)
    if n < 1:
        raise InvalidAreaError("base surface has no boundary")
    if not target_area > base.total_area:
        raise InvalidAreaError(
            f"target area {target_area} must exceed base area {base.total_area}")
    if not 0 < delta < base.collar_width:
        raise InvalidCollarError(
            f"delta={delta} must lie in (0, collar width {base.collar_width})")
    return CappedSurface(base, target_area, delta)


def _complex_step_jacobian(fn, s, t, h=1e-30):
    xs, ys = fn(s + 1j * h, t + 0j)
    xt, yt = fn(s + 0j, t + 1j * h)
    J = np.empty(np.shape(s) + (2, 2))
    J[..., 0, 0] = np.imag(xs) / h
    J[..., 1, 0] = np.imag(ys) / h
    J[..., 0, 1] = np.imag(xt) / h
    J[..., 1, 1] = np.imag(yt) / h
    return J


def verify_area_form(surface, grid_density=100):
    """Largest defect of the area-form pullback identities on a grid.

    Every collar parametrization (into the native chart, and into the cap disk
    for capped surfaces) is differentiated by complex step and the pulled back
    coefficient compared with ``ds ^ dt``. For capped surfaces the gluing
    radii ``psi(0, t) = r0``, ``psi(delta, t) = r1`` and the area bookkeeping
    ``A + n pi r0^2 = B`` are checked as well.
    """
    if grid_density < 2:
        raise ValueError("grid_density must be at least 2")
    base = surface.base if isinstance(surface, CappedSurface) else surface
    defect = 0.0
    t = np.arange(grid_density) / grid_density
    for circle in base.boundary_circles:
        s = np.linspace(0.0, base.collar_width, grid_density, endpoint=False)
        S, T = np.meshgrid(s, t, indexing="ij")
        J = _complex_step_jacobian(_collar_parametrization(base, circle.index), S, T)
        xy = base.transition(circle.collar_chart, base.native_chart, np.stack([S, T], axis=-1))
        coef = base.coefficient(base.native_chart, xy)
        defect = max(defect, float(np.nanmax(np.abs(coef * np.linalg.det(J) - 1.0))))
    if isinstance(surface, CappedSurface):
        n = surface.n_caps
        bookkeeping = base.total_area + sum(math.pi * c.r0**2 for c in surface.caps)
        defect = max(defect, abs(bookkeeping - surface.total_area))
        for cap in surface.caps:
            s = np.linspace(0.0, cap.delta, grid_density)
            S, T = np.meshgrid(s, t, indexing="ij")
            J = _complex_step_jacobian(cap.psi_cartesian, S, T)
            defect = max(defect, float(np.max(np.abs(np.linalg.det(J) - 1.0))))
            r_in, _ = cap.psi(np.zeros_like(t), t)
            r_out, _ = cap.psi(np.full_like(t, cap.delta), t)
            defect = max(defect, float(np.max(np.abs(r_in - cap.r0))),
                         float(np.max(np.abs(r_out - cap.r1))))
            expected_r1 = math.sqrt((surface.total_area - base.total_area + n * cap.delta)
                                    / (n * math.pi))
            defect = max(defect, abs(cap.r1 - expected_r1))
    return defect


def _collar_parametrization(base, index):
    """Complex-step friendly collar (s, t) -> native chart map."""
    if isinstance(base, Disk):
        A = base.total_area

        def fn(s, t):
            r = np.sqrt(1.0 - s / A)
            return r * np.cos(-TWO_PI * t), r * np.sin(-TWO_PI * t)
        return fn
    if isinstance(base, Annulus):
        if index == 0:
            return lambda s, t: (s, t)
        return lambda s, t: (base.width - s, -t)
    raise TypeError(f"no collar parametrization for {base!r}")


class ScalarField:
    """A function on a surface given on one or more charts.

    Calling ``field(chart, xy)`` evaluates in ``chart``; when the field has no
    expression there the points are converted to the first chart that has one
    and contains them.
    """

    def __init__(self, surface, pieces):
        self.surface = surface
        self.pieces = dict(pieces)

    @classmethod
    def native(cls, surface, fn):
        return cls(surface, {surface.native_chart: fn})

    @classmethod
    def constant(cls, surface, value=1.0):
        fn = lambda xy: np.full(np.shape(xy)[:-1], float(value))
        return cls(surface, {name: fn for name in surface.charts})

    def __call__(self, chart, xy):
        xy = np.asarray(xy, dtype=float)
        if chart in self.pieces:
            return np.asarray(self.pieces[chart](xy), dtype=float)
        out = np.full(xy.shape[:-1], np.nan)
        todo = np.ones(xy.shape[:-1], dtype=bool)
        for name, fn in self.pieces.items():
            if not todo.any():
                break
            w = self.surface.transition(chart, name, xy[todo])
            ok = ~np.any(np.isnan(w), axis=-1)
            if ok.any():
                vals = np.asarray(fn(w[ok]), dtype=float)
                idx = np.flatnonzero(todo)[ok]
                out.flat[idx] = vals
                todo.flat[idx] = False
        return out


def as_field(surface, f):
    """Accept a ScalarField, a ``(chart, xy)`` callable or a native ``xy`` callable."""
    if isinstance(f, ScalarField):
        return f
    if callable(f):
        try:
            nargs = f.__code__.co_argcount
        except AttributeError:
            nargs = 2
        if nargs == 1:
            return ScalarField.native(surface, f)
        return f
    return ScalarField.constant(surface, f)


class QuadratureResult(NamedTuple):
    value: float
    error: float
    nodes: int


def _patch_integral(patch, f, n):
    x, w = leggauss(n)
    us, uw = [], []
    for a, b in zip(patch.u_breaks[:-1], patch.u_breaks[1:]):
        if b <= a:
            continue
        us.append(0.5 * (b - a) * x + 0.5 * (a + b))
        uw.append(0.5 * (b - a) * w)
    u = np.concatenate(us)
    wu = np.concatenate(uw)
    c, d = patch.v_range
    v = 0.5 * (d - c) * x + 0.5 * (c + d)
    wv = 0.5 * (d - c) * w
    U, V = np.meshgrid(u, v, indexing="ij")
    W = np.outer(wu, wv)
    weight = patch.weight(U, V)
    mask = weight != 0.0
    xy = patch.param(U[mask], V[mask])
    vals = np.asarray(f(patch.chart, xy), dtype=float)
    return float(np.sum(W[mask] * patch.density(U[mask], V[mask]) * weight[mask] * vals))


def area_integrate(surface, f, tol=1e-10, n0=8, max_nodes=256, full_output=False):
    """Integral of ``f`` against the area form of ``surface``.

    Tensor-product Gauss-Legendre on every quadrature patch, weighted by the
    collar partition of unity; the node count is doubled until successive
    estimates differ by less than ``tol``. Non-convergence issues a warning
    carrying the achieved difference (``QuadratureError`` is raised only when
    the integrand produced NaN).
    """
    field = as_field(surface, f)
    patches = surface.quadrature_patches()
    n = n0
    prev = sum(_patch_integral(p, field, n) for p in patches)
    while True:
        n *= 2
        cur = sum(_patch_integral(p, field, n) for p in patches)
        err = abs(cur - prev)
        if not np.isfinite(cur):
            raise QuadratureError("integrand is not finite on the surface", achieved=err)
        if err < tol or n >= max_nodes:
            break
        prev = cur
    if err >= tol:
        warnings.warn(f"area quadrature reached {n} nodes with difference {err:.3e}",
                      RuntimeWarning, stacklevel=2)
    if full_output:
        return QuadratureResult(cur, err, n)
    return cur


def area_average(surface, f, **kwargs):
    return area_integrate(surface, f, **kwargs) / surface.total_area


def voronoi_masses(surface, charts, xy, n_samples=20000, seed=0):
    """Heuristic area of the nearest-neighbour cell of each point.

    Uniform area samples are assigned to the nearest census point after
    mapping everything into the canonical chart; periodic coordinates are
    embedded on a circle so distances respect the wrap-around.
    """
    from scipy.spatial import cKDTree

    rng = np.random.default_rng(seed)
    pts = _embed_for_distance(surface, charts, xy)
    tree = cKDTree(pts)
    counts = np.zeros(len(pts))
    for chart, sxy in surface.uniform_samples(rng, n_samples):
        if len(sxy) == 0:
            continue
        c, cxy = surface.canonical(chart, sxy)
        _, idx = tree.query(_embed_for_distance(surface, c, cxy))
        np.add.at(counts, idx, 1.0)
    return counts / n_samples * surface.total_area


def _embed_for_distance(surface, charts, xy):
    xy = np.atleast_2d(np.asarray(xy, dtype=float))
    charts = np.asarray(charts, dtype=object)
    names = sorted(surface.charts)
    out = np.zeros((len(xy), 4))
    for k, name in enumerate(names):
        m = charts == name
        if not m.any():
            continue
        per = surface.chart(name).period
        cols = []
        for d in (0, 1):
            if per[d] is None:
                cols.append(xy[m, d])
                cols.append(np.zeros(m.sum()))
            else:
                ang = TWO_PI * xy[m, d] / per[d]
                rad = per[d] / TWO_PI
                cols.append(rad * np.cos(ang))
                cols.append(rad * np.sin(ang))
        emb = np.stack(cols, axis=-1)
        # separate charts that do not share coordinates
        emb[:, 3] += 1e3 * k
        out[m] = emb
    return out


class LatticeTorus(Surface):
    """The discrete torus ``(Z/n)^2`` in the chart ``"lattice"``, for permutation toys."""

    kind = "lattice"
    native_chart = "lattice"

    def __init__(self, n=64):
        self.n = int(n)
        self.total_area = float(self.n * self.n)
        self.collar_width = 1.0
        self.charts = {"lattice": Chart("lattice", (float(self.n), float(self.n)), 1.0)}
        self.boundary_circles = ()

    def __repr__(self):
        return f"LatticeTorus(n={self.n})"

    def _to_native(self, chart, xy):
        if chart != "lattice":
            raise KeyError(chart)
        return self.wrap(chart, xy), _eye_like(xy)

    _from_native = _to_native

    def seed_grid(self, n=None):
        i, j = np.meshgrid(np.arange(self.n), np.arange(self.n), indexing="ij")
        return [("lattice", np.stack([i.ravel(), j.ravel()], axis=-1).astype(float))]

    def uniform_samples(self, rng, n):
        return [("lattice", rng.integers(0, self.n, size=(n, 2)).astype(float))]
