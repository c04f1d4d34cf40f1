"""Fluxes of isotopies over cycles and rationality verdicts.

The flux of an isotopy with generating field ``X_u`` over a cycle ``c`` is
``int_0^1 int_c i_{X_u} Omega du``, the signed area swept by ``c``. Relative
arcs (from one boundary circle to another) are admitted: for fields tangent
to the boundary their flux is still the swept area.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
from numpy.polynomial.legendre import leggauss

from .errors import PreconditionError

CLOSE_TOL = 1e-10


@dataclass(frozen=True)
class CycleSpec:
    """Parametrised curve ``t in [0, 1] -> native chart``.

    ``closed`` cycles must close up modulo periodic coordinates; open ones are
    relative arcs with endpoints on the boundary.
    """

    id: str
    surface: object
    curve: object
    velocity: object
    closed: bool = True
    label: str = ""
    breaks: tuple = (0.0, 1.0)

    def endpoint_defect(self):
        a = self.curve(np.array([0.0]))
        b = self.curve(np.array([1.0]))
        return float(np.max(np.abs(self.surface.difference(self.surface.native_chart, b, a))))

    def validate(self):
        if self.closed and self.endpoint_defect() >= CLOSE_TOL:
            raise PreconditionError(f"cycle {self.id!r} does not close up "
                                    f"(defect {self.endpoint_defect():.3e})")
        return self


def core_cycle(surface):
    if surface.kind != "annulus":
        raise PreconditionError("the core circle exists only on the annulus")
    s0 = 0.5 * surface.width
    return CycleSpec("core", surface,
                     lambda t: np.stack([np.full_like(t, s0), t], axis=-1),
                     lambda t: np.stack([np.zeros_like(t), np.ones_like(t)], axis=-1),
                     closed=True, label="H1 generator")


def radial_arc(surface, t0=0.0):
    """Relative arc ``s = W -> 0`` at collar time ``t0``: generator of H_1(Z, dZ)."""
    if surface.kind != "annulus":
        raise PreconditionError("the radial arc exists only on the annulus")
    W = surface.width
    return CycleSpec("radial", surface,
                     lambda t: np.stack([W * (1.0 - t), np.full_like(t, t0)], axis=-1),
                     lambda t: np.stack([np.full_like(t, -W), np.zeros_like(t)], axis=-1),
                     closed=False, label="relative generator")


def boundary_cycle(surface, index):
    circ = surface.boundary_circles[index]
    nat = surface.native_chart

    def curve(t):
        st = np.stack([np.zeros_like(t), t], axis=-1)
        return surface.transition(circ.collar_chart, nat, st)

    def velocity(t):
        return surface.boundary_tangents(index, t)

    if surface.kind == "annulus":
        # keep the lift continuous so the endpoints differ by a full period
        sgn = 1.0 if index == 0 else -1.0
        s0 = 0.0 if index == 0 else surface.width
        curve = lambda t, s0=s0, sgn=sgn: np.stack([np.full_like(t, s0), sgn * t], axis=-1)
        velocity = lambda t, sgn=sgn: np.stack([np.zeros_like(t), np.full_like(t, sgn)], axis=-1)
    return CycleSpec(f"boundary-{index}", surface, curve, velocity, closed=True,
                     label="boundary circle")


def polyline_cycle(surface, points, id="polyline", closed=None):
    """Piecewise-linear cycle through native-chart ``points`` (lifted coordinates)."""
    pts = np.asarray(points, dtype=float)
    if len(pts) < 2:
        raise PreconditionError("a polyline needs at least two points")
    n = len(pts) - 1
    knots = np.linspace(0.0, 1.0, n + 1)

    def seg(t):
        k = np.clip((np.asarray(t) * n).astype(int), 0, n - 1)
        return k, np.asarray(t) * n - k

    def curve(t):
        k, r = seg(t)
        return pts[k] + r[..., None] * (pts[k + 1] - pts[k])

    def velocity(t):
        k, _ = seg(t)
        return n * (pts[k + 1] - pts[k])

    if closed is None:
        gap = surface.difference(surface.native_chart, pts[-1:], pts[:1])
        closed = float(np.max(np.abs(gap))) < CLOSE_TOL
    spec = CycleSpec(id, surface, curve, velocity, closed=bool(closed), label="polyline",
                     breaks=tuple(knots))
    return spec.validate()


def named_cycle(surface, name):
    if name == "core":
        return core_cycle(surface)
    if name == "radial":
        return radial_arc(surface)
    if name.startswith("boundary-"):
        return boundary_cycle(surface, int(name.split("-", 1)[1]))
    raise PreconditionError(f"unknown cycle {name!r}")


def homology_basis(surface):
    """Closed cycles spanning H_1 of a built-in surface (empty for the disk)."""
    if surface.kind == "annulus":
        return [core_cycle(surface)]
    return []


class Isotopy:
    """Time-dependent native-chart vector field ``X(u, xy)`` on ``u in [0, 1]``.

    ``jac(u, xy)`` returns ``DX``; when omitted it is taken by central differences.
    """

    def __init__(self, surface, field, jac=None, label="", breaks=(0.0, 1.0)):
        self.surface = surface
        self.field = field
        self._jac = jac
        self.label = label
        self.breaks = tuple(breaks)

    def __call__(self, u, xy):
        return self.field(u, np.atleast_2d(xy))

    def jacobian(self, u, xy, h=1e-6):
        if self._jac is not None:
            return self._jac(u, xy)
        cols = []
        for k in (0, 1):
            e = np.zeros(2)
            e[k] = h
            cols.append((self.field(u, xy + e) - self.field(u, xy - e)) / (2 * h))
        return np.stack(cols, axis=-1)

    @classmethod
    def hamiltonian(cls, H):
        return cls(H.surface, lambda u, xy: H.vector_field(u, xy, jacobian=False)[0],
                   lambda u, xy: H.vector_field(u, xy)[1], label=f"hamiltonian {H.label}")

    @classmethod
    def shear(cls, surface, c):
        """Annulus shear ``phi^u(s, t) = (s, t + u c)``."""
        if surface.kind != "annulus":
            raise PreconditionError("shear isotopies live on the annulus")
        return cls(surface, lambda u, xy: np.stack([np.zeros(len(xy)), np.full(len(xy), c)], axis=-1),
                   lambda u, xy: np.zeros((len(xy), 2, 2)), label=f"shear {c}")

    @classmethod
    def identity(cls, surface):
        return cls(surface, lambda u, xy: np.zeros(np.shape(xy)),
                   lambda u, xy: np.zeros(np.shape(xy)[:-1] + (2, 2)), label="identity")

    def reversed(self):
        jac = None if self._jac is None else (lambda u, xy: -self._jac(1.0 - u, xy))
        return Isotopy(self.surface, lambda u, xy: -self.field(1.0 - u, xy), jac,
                       label=f"reverse({self.label})",
                       breaks=tuple(sorted(1.0 - b for b in self.breaks)))

    def concat(self, other):
        """Run ``self`` then ``other``, each at double speed."""
        if other.surface is not self.surface:
            raise PreconditionError("isotopies live on different surfaces")

        def pick(u, xy, fa, fb):
            u = float(u)
            return 2.0 * (fa(2.0 * u, xy) if u < 0.5 else fb(2.0 * u - 1.0, xy))

        jac = lambda u, xy: pick(u, xy, self.jacobian, other.jacobian)
        breaks = sorted({0.5 * b for b in self.breaks} | {0.5 + 0.5 * b for b in other.breaks})
        return Isotopy(self.surface, lambda u, xy: pick(u, xy, self.field, other.field), jac,
                       label=f"({self.label}).({other.label})", breaks=tuple(breaks))


def isotopy_for_map(phi):
    """Generating isotopy of a built-in map where one is known."""
    from .maps import AnnulusTwist, HamiltonianMap, Identity

    if isinstance(phi, Identity):
        return Isotopy.identity(phi.surface)
    if isinstance(phi, AnnulusTwist) and len(phi.coeffs) == 1:
        return Isotopy.shear(phi.surface, float(phi.coeffs[0]))
    if isinstance(phi, HamiltonianMap) and phi.duration == 1.0 and phi.start == 0.0:
        return Isotopy.hamiltonian(phi.hamiltonian)
    raise PreconditionError(f"no generating isotopy known for {phi!r}")


def _gauss_nodes(breaks, n):
    x, w = leggauss(n)
    nodes, weights = [], []
    for a, b in zip(breaks[:-1], breaks[1:]):
        if b > a:
            nodes.append(0.5 * (b - a) * x + 0.5 * (a + b))
            weights.append(0.5 * (b - a) * w)
    return np.concatenate(nodes), np.concatenate(weights)


def _nested_flux(isotopy, cycle, n):
    surf = isotopy.surface
    c = float(surf.coefficient(surf.native_chart, np.zeros((1, 2)))[0])
    t, wt = _gauss_nodes(cycle.breaks, n)
    u, wu = _gauss_nodes(isotopy.breaks, n)
    pts = cycle.curve(t)
    vel = cycle.velocity(t)
    total = 0.0
    for uk, wk in zip(u, wu):
        X = isotopy(uk, pts)
        integrand = c * (X[:, 0] * vel[:, 1] - X[:, 1] * vel[:, 0])
        total += wk * float(integrand @ wt)
    return total


def isotopy_flux(isotopy, cycle, tol=1e-12, n0=8, n_max=256, full_output=False):
    """``int_0^1 int_cycle i_{X_u} Omega du`` by nested Gauss-Legendre with node doubling."""
    if cycle.surface is not isotopy.surface:
        raise PreconditionError("cycle and isotopy live on different surfaces")
    cycle.validate()
    n = n0
    prev = _nested_flux(isotopy, cycle, n)
    while True:
        n *= 2
        cur = _nested_flux(isotopy, cycle, n)
        err = abs(cur - prev)
        if err < tol or n >= n_max:
            break
        prev = cur
    return (cur, err) if full_output else cur


def sweep_area_flux(isotopy, cycle, n_t=64, n_u=200):
    """Area swept by the moving cycle, ``int int Omega(d_u Phi, d_t Phi)``.

    The cycle points and their tangents are transported by RK4 along the
    isotopy; used as an independent cross-check of ``isotopy_flux``.
    """
    if n_u % 2:
        raise PreconditionError("n_u must be even")
    surf = isotopy.surface
    c = float(surf.coefficient(surf.native_chart, np.zeros((1, 2)))[0])
    t, wt = _gauss_nodes(cycle.breaks, n_t)
    z = cycle.curve(t).astype(float)
    v = cycle.velocity(t).astype(float)
    h = 1.0 / n_u

    def rhs(u, z, v):
        return isotopy(u, z), np.einsum("nij,nj->ni", isotopy.jacobian(u, z), v)

    def density(u, z, v):
        X = isotopy(u, z)
        return c * (X[:, 0] * v[:, 1] - X[:, 1] * v[:, 0]) @ wt

    eps = 1e-13
    vals = [density(eps, z, v)]
    for k in range(n_u):
        u = k * h
        k1 = rhs(u, z, v)
        k2 = rhs(u + h / 2, z + h / 2 * k1[0], v + h / 2 * k1[1])
        k3 = rhs(u + h / 2, z + h / 2 * k2[0], v + h / 2 * k2[1])
        k4 = rhs(u + h, z + h * k3[0], v + h * k3[1])
        z = z + h / 6 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
        v = v + h / 6 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
        # average of one-sided limits: exact for fields that jump at a Simpson node
        un = u + h
        left = density(un - eps, z, v)
        vals.append(left if k == n_u - 1 else 0.5 * (left + density(un + eps, z, v)))
    w = np.full(n_u + 1, 2.0)
    w[1:-1:2] = 4.0
    w[0] = w[-1] = 1.0
    return float(np.dot(w, vals) * h / 3.0)


def continued_fraction(x, n_terms=12, eps=1e-12):
    """Leading partial quotients of ``x``."""
    out = []
    for _ in range(n_terms):
        a = math.floor(x)
        out.append(int(a))
        frac = x - a
        if frac < eps:
            break
        x = 1.0 / frac
    return out


@dataclass
class FluxReport:
    cycles: list
    fluxes: list
    errors: list
    area: float
    q_max: int
    tol: float
    ratios: list = field(default_factory=list)
    cycle_verdicts: list = field(default_factory=list)
    fractions: list = field(default_factory=list)
    partial_quotients: list = field(default_factory=list)
    verdict: str = "undecided"
    capped_area: float | None = None
    compatible: bool | None = None

    def to_dict(self):
        return {
            "cycles": list(self.cycles),
            "fluxes": [float(f) for f in self.fluxes],
            "errors": [float(e) for e in self.errors],
            "area": self.area,
            "q_max": self.q_max,
            "tol": self.tol,
            "ratios": [float(r) for r in self.ratios],
            "cycle_verdicts": list(self.cycle_verdicts),
            "fractions": [None if f is None else str(f) for f in self.fractions],
            "partial_quotients": self.partial_quotients,
            "verdict": self.verdict,
            "capped_area": self.capped_area,
            "compatible": self.compatible,
        }


def _classify(x, err, q_max, tol):
    fr = Fraction(x).limit_denominator(q_max)
    if err >= tol:
        return "undecided", None
    if abs(float(fr) - x) < tol:
        return f"rational {fr.numerator}/{fr.denominator}", fr
    return "irrational-within-tolerance", None


def rationality_verdict(fluxes, area, q_max=10_000, tol=1e-9, errors=None, cycles=None,
                        capped_area=None):
    """Classify every ``flux / area`` against rationals of denominator ``<= q_max``.

    A ratio is rational ``p/q`` when within ``tol`` of ``p/q``; undecided when
    the flux error estimate is not below ``tol``. The map is rational when
    every ratio is. With ``capped_area`` the same fluxes are also judged
    relative to the capped area and ``compatible`` records whether both
    verdicts agree (they must when the area ratio is rational).
    """
    if q_max < 1 or not tol > 0:
        raise PreconditionError("q_max must be >= 1 and tol > 0")
    fluxes = [float(f) for f in fluxes]
    errors = [0.0] * len(fluxes) if errors is None else [float(e) for e in errors]
    cycles = list(cycles) if cycles is not None else [f"c{k}" for k in range(len(fluxes))]
    rep = FluxReport(cycles, fluxes, errors, float(area), int(q_max), float(tol))
    for f, e in zip(fluxes, errors):
        x = f / area
        v, fr = _classify(x, e / area, q_max, tol)
        rep.ratios.append(x)
        rep.cycle_verdicts.append(v)
        rep.fractions.append(fr)
        rep.partial_quotients.append(continued_fraction(x - math.floor(x)) if math.isfinite(x) else [])
    rep.verdict = _overall(rep.cycle_verdicts)
    if capped_area is not None:
        rep.capped_area = float(capped_area)
        other = [_classify(f / capped_area, e / capped_area, q_max, tol)[0]
                 for f, e in zip(fluxes, errors)]
        both = [_overall(rep.cycle_verdicts), _overall(other)]
        ratio_v, _ = _classify(capped_area / area, 0.0, q_max, tol)
        if ratio_v.startswith("rational"):
            rep.compatible = (both[0] == "rational") == (both[1] == "rational")
        else:
            rep.compatible = None
    return rep


def _overall(verdicts):
    if any(v == "undecided" for v in verdicts):
        return "undecided"
    if all(v.startswith("rational") for v in verdicts):
        return "rational"
    return "irrational-within-tolerance"


def flux_report(isotopy, cycles, area=None, q_max=10_000, tol=1e-9, capped_area=None):
    """Fluxes over ``cycles`` followed by the rationality verdict."""
    vals, errs = [], []
    for cyc in cycles:
        v, e = isotopy_flux(isotopy, cyc, full_output=True)
        vals.append(v)
        errs.append(e)
    area = isotopy.surface.total_area if area is None else area
    return rationality_verdict(vals, area, q_max, tol, errors=errs,
                               cycles=[c.id for c in cycles], capped_area=capped_area)


def hamiltonian_certificate(isotopy, cycles=None, tol=1e-8):
    """True iff the flux over every basis cycle vanishes within ``tol``; also the defects."""
    if cycles is None:
        cycles = homology_basis(isotopy.surface)
    defects = np.array([abs(isotopy_flux(isotopy, c)) for c in cycles])
    return bool(np.all(defects < tol)), defects
