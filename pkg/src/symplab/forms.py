"""One-forms and area forms written in the native chart of a surface."""

from __future__ import annotations

import math

import numpy as np
import sympy as sp

from .expressions import derivatives, parse_expression, surface_symbols


def _fd_jacobian(fn, xy, h=1e-5):
    """Richardson-extrapolated central differences of a vector-valued ``fn``."""
    xy = np.asarray(xy, dtype=float)
    cols = []
    for k in (0, 1):
        e = np.zeros(2)
        e[k] = 1.0
        d1 = (fn(xy + h * e) - fn(xy - h * e)) / (2 * h)
        d2 = (fn(xy + 0.5 * h * e) - fn(xy - 0.5 * h * e)) / h
        cols.append((4 * d2 - d1) / 3)
    return np.stack(cols, axis=-1)


class OneForm:
    """``p du + q dv`` in the native chart ``(u, v)`` of ``surface``.

    ``coeffs(xy)`` returns an ``(N, 2)`` array ``[p, q]``. When ``jac`` is
    given it returns ``d[p, q]/d[u, v]`` of shape ``(N, 2, 2)``; otherwise the
    exterior derivative falls back to finite differences.
    """

    def __init__(self, surface, coeffs, jac=None, label=""):
        self.surface = surface
        self._coeffs = coeffs
        self._jac = jac
        self.label = label

    def __call__(self, xy):
        xy = np.atleast_2d(np.asarray(xy, dtype=float))
        return np.asarray(self._coeffs(xy), dtype=float)

    def jacobian(self, xy):
        xy = np.atleast_2d(np.asarray(xy, dtype=float))
        if self._jac is not None:
            return self._jac(xy)
        return _fd_jacobian(self._coeffs, xy)

    def exterior(self, xy):
        """Coefficient of ``d(self)`` against ``du ^ dv``."""
        J = self.jacobian(xy)
        return J[..., 1, 0] - J[..., 0, 1]

    def __add__(self, other):
        if other.surface is not self.surface:
            raise ValueError("forms live on different surfaces")
        jac = None
        if self._jac is not None and other._jac is not None:
            jac = lambda xy: self._jac(xy) + other._jac(xy)
        return OneForm(self.surface, lambda xy: self._coeffs(xy) + other._coeffs(xy), jac,
                       label=f"({self.label})+({other.label})")

    def scaled(self, c):
        jac = None if self._jac is None else (lambda xy: c * self._jac(xy))
        return OneForm(self.surface, lambda xy: c * self._coeffs(xy), jac, label=f"{c}*({self.label})")

    def along(self, index, t):
        """Pullback to boundary circle ``index`` as a function of the collar time."""
        pts = self.surface.boundary_points(index, t)
        vel = self.surface.boundary_tangents(index, t)
        return np.sum(self(pts) * vel, axis=-1)

    def primitive_defect(self, xy):
        """max |d(self) - omega| at the given native points."""
        c = self.surface.coefficient(self.surface.native_chart, xy)
        return float(np.max(np.abs(self.exterior(xy) - c)))

    def closed_defect(self, xy):
        return float(np.max(np.abs(self.exterior(xy))))

    @classmethod
    def from_expressions(cls, surface, p, q, label=None):
        kind = surface.kind
        exprs = [parse_expression(e, kind) if isinstance(e, str) else sp.sympify(e) for e in (p, q)]
        parts = [derivatives(e, kind) for e in exprs]

        def coeffs(xy):
            return np.stack([parts[0][0](0.0, xy), parts[1][0](0.0, xy)], axis=-1)

        def jac(xy):
            return np.stack([parts[0][1](0.0, xy), parts[1][1](0.0, xy)], axis=-2)

        form = cls(surface, coeffs, jac, label=label or f"{exprs[0]} du + {exprs[1]} dv")
        form.expressions = tuple(exprs)
        return form

    @classmethod
    def exact(cls, surface, g, label=None):
        """The differential ``dg`` of a function given as an expression."""
        expr = parse_expression(g, surface.kind) if isinstance(g, str) else sp.sympify(g)
        (u, v), _ = surface_symbols(surface.kind)
        return cls.from_expressions(surface, sp.diff(expr, u), sp.diff(expr, v),
                                    label=label or f"d({expr})")

    @classmethod
    def zero(cls, surface):
        return cls(surface, lambda xy: np.zeros(np.shape(xy)),
                   lambda xy: np.zeros(np.shape(xy)[:-1] + (2, 2)), label="0")


def standard_primitive(surface):
    """Rotation-invariant primitive of the area form.

    Disk: ``(c / 2)(x dy - y dx)`` with ``c = area / pi``. Annulus: ``s dt``.
    """
    if surface.kind == "disk":
        c = surface.total_area / math.pi
        return OneForm.from_expressions(surface, f"-{c!r}*y/2", f"{c!r}*x/2",
                                        label="standard disk primitive")
    if surface.kind == "annulus":
        return OneForm.from_expressions(surface, "0", "s", label="s dt")
    raise ValueError(f"no standard primitive on a {surface.kind} surface")


def pullback_difference(phi, beta):
    """``phi^* beta - beta`` as a OneForm in the native chart."""
    surface = beta.surface
    chart = surface.native_chart

    def coeffs(xy):
        res = phi.apply(chart, xy, jacobian=True)
        img = surface.transition(res.chart, chart, res.xy)
        _, Jt = surface.transition(res.chart, chart, res.xy, jacobian=True)
        D = Jt @ res.jac
        return np.einsum("nji,nj->ni", D, beta(img)) - beta(xy)

    return OneForm(surface, coeffs, label=f"pullback difference of {beta.label}")


class AreaForm:
    """``c(u, v) du ^ dv`` in the native chart, with optional gradient of ``c``."""

    def __init__(self, surface, coefficient, gradient=None, label=""):
        self.surface = surface
        self._c = coefficient
        self._g = gradient
        self.label = label

    def __call__(self, xy):
        xy = np.atleast_2d(np.asarray(xy, dtype=float))
        return np.asarray(self._c(xy), dtype=float)

    def gradient(self, xy):
        xy = np.atleast_2d(np.asarray(xy, dtype=float))
        if self._g is not None:
            return self._g(xy)
        return _fd_jacobian(lambda z: self._c(z)[..., None], xy)[..., 0, :]

    def total(self):
        from .geometry import area_integrate

        base = self.surface.coefficient(self.surface.native_chart, np.zeros((1, 2)))[0]
        chart = self.surface.native_chart

        def ratio(ch, xy):
            w = self.surface.transition(ch, chart, xy)
            return self(w) / base

        return area_integrate(self.surface, ratio)

    @classmethod
    def standard(cls, surface):
        c = surface.coefficient(surface.native_chart, np.zeros((1, 2)))[0]
        return cls(surface, lambda xy: np.full(np.shape(xy)[:-1], c),
                   lambda xy: np.zeros(np.shape(xy)), label="standard")

    @classmethod
    def from_expression(cls, surface, expr, label=None):
        e = parse_expression(expr, surface.kind) if isinstance(expr, str) else sp.sympify(expr)
        value, grad, _ = derivatives(e, surface.kind)
        form = cls(surface, lambda xy: value(0.0, xy), lambda xy: grad(0.0, xy),
                   label=label or str(e))
        form.expression = e
        return form
