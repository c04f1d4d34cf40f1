"""Area-preserving maps: closed forms, Hamiltonian and Moser flows, compositions, cap extensions.

Every map exposes ``apply(chart, xy, jacobian=False)`` acting on a batch of
points given in one chart and returning a ``MapResult`` whose ``chart`` is the
chart the images are expressed in. The Jacobian is taken from the input chart
to the output chart.

Hamiltonian vector fields follow ``i_X omega = dH``; with
``omega = c du ^ dv`` this reads ``X = (H_v, -H_u) / c``. Flipping that
convention negates actions and Calabi invariants.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import (
    IntegratorError,
    PreconditionError,
    SurfaceMismatchError,
    UnsupportedExtensionError,
)
from .expressions import depends_on_time, derivatives, parse_expression
from .geometry import CappedSurface, PointCoord

TWO_PI = 2.0 * math.pi
# twist profile (s - 1/2) / golden ratio: boundary rotation numbers -+0.309, no short boundary orbits
DEFAULT_TWIST = (-0.5 / 1.618033988749895, 1.0 / 1.618033988749895)


class MapResult(NamedTuple):
    chart: str
    xy: np.ndarray
    jac: np.ndarray | None


@dataclass(frozen=True)
class IntegratorConfig:
    """Step count per unit time, composition order and certificate tolerance."""

    steps: int = 64
    order: int = 4
    tol: float = 1e-10
    max_steps: int = 8192
    newton_tol: float = 1e-12

    def __post_init__(self):
        if self.steps < 8:
            raise PreconditionError(f"integrator needs at least 8 steps, got {self.steps}")
        if self.order not in (2, 4, 6):
            raise PreconditionError(f"order must be 2, 4 or 6, got {self.order}")
        if not (self.tol > 0 and self.newton_tol > 0):
            raise PreconditionError("integrator tolerances must be positive")


def _eye(n):
    return np.broadcast_to(np.eye(2), (n, 2, 2)).copy()


class SurfaceMap:
    """Base class. Subclasses implement ``_native`` on native-chart points."""

    representation = "closed-form"

    def __init__(self, surface):
        self.surface = surface

    def _native(self, xy, jacobian):
        raise NotImplementedError

    def apply(self, chart, xy, jacobian=False):
        xy = np.atleast_2d(np.asarray(xy, dtype=float))
        nat = self.surface.native_chart
        J0 = None
        if chart == nat:
            # points off the surface become NaN
            xy = self.surface._to_native(nat, xy)[0]
        else:
            if jacobian:
                xy, J0 = self.surface.transition(chart, nat, xy, jacobian=True)
            else:
                xy = self.surface.transition(chart, nat, xy)
        out, J = self._native(xy, jacobian)
        out = self.surface.wrap(nat, out)
        if jacobian and J0 is not None:
            J = J @ J0
        return MapResult(nat, out, J)

    def __call__(self, chart, xy):
        return self.apply(chart, xy).xy

    def evaluate(self, point):
        res = self.apply(point.chart, point.xy[None, :])
        return PointCoord(res.chart, float(res.xy[0, 0]), float(res.xy[0, 1]))

    def derivative(self, point):
        return self.apply(point.chart, point.xy[None, :], jacobian=True).jac[0]

    def iterate(self, chart, xy, n, jacobian=False):
        """``phi^n`` on a batch; the Jacobian is the chained product."""
        xy = np.atleast_2d(np.asarray(xy, dtype=float))
        J = _eye(len(xy)) if jacobian else None
        for _ in range(n):
            res = self.apply(chart, xy, jacobian=jacobian)
            chart, xy = res.chart, res.xy
            if jacobian:
                J = res.jac @ J
        return MapResult(chart, xy, J)

    def orbit(self, chart, xy, n):
        """List of ``(chart, xy)`` for ``phi^0, ..., phi^(n-1)``."""
        xy = np.atleast_2d(np.asarray(xy, dtype=float))
        out = [(chart, xy)]
        for _ in range(n - 1):
            res = self.apply(chart, xy)
            chart, xy = res.chart, res.xy
            out.append((chart, xy))
        return out

    def inverse(self):
        raise NotImplementedError(f"{type(self).__name__} has no inverse")

    def area_defect(self, chart=None, xy=None, n=1000, seed=0):
        """max |c(phi z) det D phi(z) / c(z) - 1| over sample points."""
        if xy is None:
            rng = np.random.default_rng(seed)
            samples = self.surface.uniform_samples(rng, n)
        else:
            samples = [(chart, np.atleast_2d(xy))]
        worst = 0.0
        for ch, pts in samples:
            if len(pts) == 0:
                continue
            res = self.apply(ch, pts, jacobian=True)
            ratio = (self.surface.coefficient(res.chart, res.xy)
                     * np.linalg.det(res.jac) / self.surface.coefficient(ch, pts))
            worst = max(worst, float(np.max(np.abs(ratio - 1.0))))
        return worst

    def boundary_permutation(self, n=32, tol=1e-8):
        """The permutation of boundary circles induced by the map."""
        surf = self.surface
        t = (np.arange(n) + 0.5) / n
        perm = []
        for i, circ in enumerate(surf.boundary_circles):
            pts = surf.boundary_points(i, t)
            img = self.apply(surf.native_chart, pts).xy
            for j, other in enumerate(surf.boundary_circles):
                st = surf.transition(surf.native_chart, other.collar_chart, img)
                if np.all(np.abs(st[:, 0]) < tol):
                    perm.append(j)
                    break
            else:
                raise PreconditionError(f"boundary circle {i} is not mapped onto a boundary circle")
        return tuple(perm)


class Identity(SurfaceMap):
    def apply(self, chart, xy, jacobian=False):
        xy = np.atleast_2d(np.array(xy, dtype=float))
        return MapResult(chart, self.surface.wrap(chart, xy), _eye(len(xy)) if jacobian else None)

    def _native(self, xy, jacobian):
        return xy.copy(), _eye(len(xy)) if jacobian else None

    def inverse(self):
        return self

    def __repr__(self):
        return f"Identity({self.surface!r})"


def _require(surface, kind, who):
    if surface.kind != kind:
        raise SurfaceMismatchError(f"{who} needs a {kind} surface, got {surface.kind}")


class RigidRotation(SurfaceMap):
    """Disk rotation by ``angle`` radians (counterclockwise in the disk chart)."""

    def __init__(self, surface, angle):
        _require(surface, "disk", "RigidRotation")
        super().__init__(surface)
        self.angle = float(angle)
        c, s = math.cos(self.angle), math.sin(self.angle)
        self._R = np.array([[c, -s], [s, c]])

    def _native(self, xy, jacobian):
        return xy @ self._R.T, (np.broadcast_to(self._R, (len(xy), 2, 2)).copy() if jacobian else None)

    def inverse(self):
        return RigidRotation(self.surface, -self.angle)

    def __repr__(self):
        return f"RigidRotation(angle={self.angle!r})"


class RadialTwist(SurfaceMap):
    """Disk twist ``theta -> theta + Theta(r^2)``, ``Theta = sum_k coeffs[k] r^(2k)``."""

    def __init__(self, surface, coeffs):
        _require(surface, "disk", "RadialTwist")
        super().__init__(surface)
        self.coeffs = np.asarray(coeffs, dtype=float)
        self._poly = np.polynomial.Polynomial(self.coeffs)
        self._dpoly = self._poly.deriv()

    def angle(self, r2):
        return self._poly(r2)

    def _native(self, xy, jacobian, sign=1.0):
        r2 = np.sum(xy * xy, axis=-1)
        xy = np.where((r2 > 1.0 + 1e-9)[:, None], np.nan, xy)
        th = sign * self._poly(r2)
        c, s = np.cos(th), np.sin(th)
        x, y = xy[:, 0], xy[:, 1]
        out = np.stack([c * x - s * y, s * x + c * y], axis=-1)
        if not jacobian:
            return out, None
        J = np.empty((len(xy), 2, 2))
        J[:, 0, 0], J[:, 0, 1], J[:, 1, 0], J[:, 1, 1] = c, -s, s, c
        g = sign * 2.0 * self._dpoly(r2)[:, None] * xy
        J += np.einsum("ni,nj->nij", np.stack([-out[:, 1], out[:, 0]], axis=-1), g)
        return out, J

    def inverse(self):
        return RadialTwist(self.surface, -self.coeffs)

    def __repr__(self):
        return f"RadialTwist(coeffs={self.coeffs.tolist()!r})"


class AnnulusTwist(SurfaceMap):
    """``(s, t) -> (s, t + g(s))`` with ``g = sum_k coeffs[k] s^k``; a shear when ``g`` is constant."""

    def __init__(self, surface, coeffs):
        _require(surface, "annulus", "AnnulusTwist")
        super().__init__(surface)
        self.coeffs = np.atleast_1d(np.asarray(coeffs, dtype=float))
        self._poly = np.polynomial.Polynomial(self.coeffs)
        self._dpoly = self._poly.deriv()

    def _native(self, xy, jacobian):
        out = np.stack([xy[:, 0], xy[:, 1] + self._poly(xy[:, 0])], axis=-1)
        if not jacobian:
            return out, None
        J = _eye(len(xy))
        J[:, 1, 0] = self._dpoly(xy[:, 0])
        return out, J

    def inverse(self):
        return AnnulusTwist(self.surface, -self.coeffs)

    def __repr__(self):
        return f"AnnulusTwist(coeffs={self.coeffs.tolist()!r})"


def annulus_shear(surface, c):
    return AnnulusTwist(surface, [c])


class AnnulusSwap(SurfaceMap):
    """``(s, t) -> (W - s, rho - t)``: exchanges the two boundary circles."""

    def __init__(self, surface, rho=0.0):
        _require(surface, "annulus", "AnnulusSwap")
        super().__init__(surface)
        self.rho = float(rho)

    def _native(self, xy, jacobian):
        out = np.stack([self.surface.width - xy[:, 0], self.rho - xy[:, 1]], axis=-1)
        return out, (-_eye(len(xy)) if jacobian else None)

    def inverse(self):
        return self

    def __repr__(self):
        return f"AnnulusSwap(rho={self.rho!r})"


class Hamiltonian:
    """Time-dependent function ``H(time, native xy)`` given by an expression."""

    def __init__(self, surface, expr, label=None):
        self.surface = surface
        self.expr = parse_expression(expr, surface.kind) if isinstance(expr, str) else expr
        self.label = label or str(self.expr)
        self.value, self.gradient, self.hessian = derivatives(self.expr, surface.kind)
        self.autonomous = not depends_on_time(self.expr)
        self.coefficient = float(surface.coefficient(surface.native_chart, np.zeros((1, 2)))[0])

    def __repr__(self):
        return f"Hamiltonian({self.label!r})"

    def vector_field(self, time, xy, jacobian=True):
        g = self.gradient(time, xy)
        X = np.stack([g[:, 1], -g[:, 0]], axis=-1) / self.coefficient
        if not jacobian:
            return X, None
        h = self.hessian(time, xy)
        A = np.stack([h[:, 1, :], -h[:, 0, :]], axis=-2) / self.coefficient
        return X, A

    def boundary_values(self, n=64, times=None):
        """H sampled on each boundary circle, shape ``(n_times, n)`` per circle."""
        if times is None:
            times = [0.0] if self.autonomous else [0.0, 0.125, 0.25, 0.5, 0.75, 0.9]
        t = np.arange(n) / n
        out = []
        for i in range(len(self.surface.boundary_circles)):
            pts = self.surface.boundary_points(i, t)
            out.append(np.array([self.value(tau, pts) for tau in times]))
        return out

    def boundary_defect(self, n=64):
        vals = self.boundary_values(n)
        return max(float(np.max(np.ptp(v, axis=1))) for v in vals)


def _yoshida_weights(order):
    w = [1.0]
    for p in range(2, order, 2):
        a = 2.0 ** (1.0 / (p + 1))
        w1, w0 = 1.0 / (2.0 - a), -a / (2.0 - a)
        w = [x * f for f in (w1, w0, w1) for x in w]
    return w


def _midpoint_step(field, time, z, h, newton_tol, jacobian):
    """One implicit midpoint step; returns the new point and step derivative."""
    tm = time + 0.5 * h
    X, _ = field(tm, z, False)
    z1 = z + h * X
    I = np.eye(2)
    for it in range(60):
        m = 0.5 * (z + z1)
        X, A = field(tm, m, True)
        G = z1 - z - h * X
        DG = I - 0.5 * h * A
        dz = np.linalg.solve(DG, G[..., None])[..., 0]
        z1 = z1 - dz
        err = float(np.nanmax(np.abs(dz))) if dz.size else 0.0
        if err < newton_tol:
            break
    else:
        if not err < 100 * newton_tol:
            raise IntegratorError(f"implicit midpoint Newton stalled at {err:.3e}", achieved=err)
    if not jacobian:
        return z1, None
    _, A = field(tm, 0.5 * (z + z1), True)
    M = np.linalg.solve(I - 0.5 * h * A, I + 0.5 * h * A)
    return z1, M


class HamiltonianMap(SurfaceMap):
    """Time-``duration`` map of the flow of ``H`` starting at ``start``.

    Implicit midpoint composed to the configured order (exactly symplectic).
    When ``certify`` is true the step count is doubled from ``cfg.steps``
    until halving it moves the images of a probe grid by less than
    ``cfg.tol``; the accepted count and the observed change are stored in
    ``steps`` and ``certificate``.
    """

    representation = "hamiltonian-time-one"

    def __init__(self, surface, hamiltonian, cfg=None, duration=1.0, start=0.0, certify=True,
                 steps=None):
        super().__init__(surface)
        self.hamiltonian = hamiltonian
        self.cfg = cfg or IntegratorConfig()
        self.duration = float(duration)
        self.start = float(start)
        self._weights = _yoshida_weights(self.cfg.order)
        self.certificate = None
        if steps is not None:
            self.steps = int(steps)
        elif certify:
            self.steps, self.certificate = self._certify()
        else:
            self.steps = max(1, int(math.ceil(self.cfg.steps * abs(self.duration))))

    def __repr__(self):
        return f"HamiltonianMap({self.hamiltonian!r}, duration={self.duration!r}, steps={self.steps})"

    def _field(self, time, xy, jac):
        return self.hamiltonian.vector_field(time, xy, jacobian=jac)

    def _flow(self, xy, steps, jacobian):
        h = self.duration / steps
        z = xy.copy()
        J = _eye(len(z)) if jacobian else None
        tau = self.start
        for _ in range(steps):
            for w in self._weights:
                z, M = _midpoint_step(self._field, tau, z, w * h, self.cfg.newton_tol, jacobian)
                tau += w * h
                if jacobian:
                    J = M @ J
        return z, J

    def _native(self, xy, jacobian):
        ok = ~np.any(np.isnan(xy), axis=-1)
        out = np.full_like(xy, np.nan)
        J = np.full((len(xy), 2, 2), np.nan) if jacobian else None
        if ok.any():
            z, Jz = self._flow(xy[ok], self.steps, jacobian)
            out[ok] = z
            if jacobian:
                J[ok] = Jz
        return out, J

    def _probe(self):
        pts = [p for _, p in self.surface.seed_grid(8)]
        t = np.arange(16) / 16
        for i in range(len(self.surface.boundary_circles)):
            pts.append(self.surface.boundary_points(i, t))
        return np.vstack(pts)

    def _certify(self):
        probe = self._probe()
        n = max(self.cfg.steps, int(math.ceil(self.cfg.steps * abs(self.duration))))
        n = max(n, 8)
        coarse, _ = self._flow(probe, n // 2, False)
        while True:
            fine, _ = self._flow(probe, n, False)
            d = self.surface.difference(self.surface.native_chart, fine, coarse)
            err = float(np.max(np.abs(d)))
            if err < self.cfg.tol:
                return n, err
            if 2 * n > self.cfg.max_steps:
                raise IntegratorError(
                    f"step halving still changes endpoints by {err:.3e} at {n} steps", achieved=err)
            coarse, n = fine, 2 * n

    def inverse(self):
        return HamiltonianMap(self.surface, self.hamiltonian, self.cfg,
                              duration=-self.duration, start=self.start + self.duration,
                              steps=self.steps)


def hamiltonian_time_one(surface, H, cfg=None, boundary_tol=1e-10):
    """Certified time-one map of ``H``; rejects ``H`` not locally constant on the boundary."""
    if isinstance(H, str):
        H = Hamiltonian(surface, H)
    defect = H.boundary_defect()
    if defect > boundary_tol:
        raise PreconditionError(f"Hamiltonian is not constant on a boundary circle (spread {defect:.3e})")
    return HamiltonianMap(surface, H, cfg or IntegratorConfig())


def rotation_hamiltonian(surface, angle):
    """Autonomous ``H = -(angle * c / 2) r^2`` whose time-one map rotates the disk by ``angle``."""
    _require(surface, "disk", "rotation_hamiltonian")
    c = surface.total_area / math.pi
    return Hamiltonian(surface, f"-({angle!r})*({c!r})/2*r2", label=f"rotation {angle}")


def flat_bump(kind="annulus", width=1.0):
    """Expression of a bump vanishing to second order at both boundary circles, peak 1."""
    if kind == "annulus":
        return f"64*((s/{width!r})*(1-s/{width!r}))^3"
    return "64*(r2*(1-r2))^3"


class Composition(SurfaceMap):
    """``f o g``."""

    def __init__(self, f, g):
        if f.surface is not g.surface:
            raise SurfaceMismatchError("cannot compose maps on different surfaces")
        super().__init__(f.surface)
        self.f, self.g = f, g
        self.representation = "composition"

    def apply(self, chart, xy, jacobian=False):
        r1 = self.g.apply(chart, xy, jacobian)
        r2 = self.f.apply(r1.chart, r1.xy, jacobian)
        return MapResult(r2.chart, r2.xy, r2.jac @ r1.jac if jacobian else None)

    def inverse(self):
        return Composition(self.g.inverse(), self.f.inverse())

    def __repr__(self):
        return f"Composition({self.f!r}, {self.g!r})"


def compose(f, g):
    return Composition(f, g)


def perturbed_twist(surface, twist_coeffs, kick, kick_steps=8):
    """Annulus twist after a boundary-flat kick.

    The kick is the discrete time-one map (implicit midpoint, ``kick_steps``
    steps, order 2) of ``H = (kick / 2 pi) b(s) cos(2 pi t)``, where ``b``
    vanishes to second order at both boundary circles. The discrete map is
    itself exactly area preserving.
    """
    _require(surface, "annulus", "perturbed_twist")
    H = Hamiltonian(surface, f"({kick!r})/(2*pi)*{flat_bump('annulus', surface.width)}*cos(2*pi*t)",
                    label=f"kick {kick}")
    cfg = IntegratorConfig(steps=max(8, kick_steps), order=2)
    kicker = HamiltonianMap(surface, H, cfg, certify=False, steps=kick_steps)
    out = Composition(AnnulusTwist(surface, twist_coeffs), kicker)
    out.representation = "perturbed-twist"
    return out


class MoserMap(SurfaceMap):
    """Time-one map ``tau_1`` of ``Omega_u(V_u, -) = -sigma`` with ``Omega_u = (1-u) Omega0 + u Omega1``.

    Then ``tau_1^* Omega1 = Omega0``. Integrated with classical RK4 together
    with the variational equation, so ``jacobian`` is the exact derivative of
    the discrete map.
    """

    representation = "moser-flow"

    def __init__(self, surface, omega0, omega1, sigma, cfg=None, steps=None):
        super().__init__(surface)
        self.omega0, self.omega1, self.sigma = omega0, omega1, sigma
        self.cfg = cfg or IntegratorConfig(steps=32)
        self.certificate = None
        if steps is None:
            self.steps, self.certificate = self._certify()
        else:
            self.steps = int(steps)

    def _rhs(self, u, z, J):
        c = (1.0 - u) * self.omega0(z) + u * self.omega1(z)
        pq = self.sigma(z)
        V = np.stack([-pq[:, 1], pq[:, 0]], axis=-1) / c[:, None]
        if J is None:
            return V, None
        dc = (1.0 - u) * self.omega0.gradient(z) + u * self.omega1.gradient(z)
        dpq = self.sigma.jacobian(z)
        DV = np.stack([-dpq[:, 1, :], dpq[:, 0, :]], axis=-2) / c[:, None, None]
        DV -= np.einsum("ni,nj->nij", V, dc) / c[:, None, None]
        return V, DV @ J

    def _flow(self, xy, steps, jacobian):
        h = 1.0 / steps
        z = xy.copy()
        J = _eye(len(z)) if jacobian else None
        for k in range(steps):
            u = k * h
            k1, l1 = self._rhs(u, z, J)
            k2, l2 = self._rhs(u + h / 2, z + h / 2 * k1, None if J is None else J + h / 2 * l1)
            k3, l3 = self._rhs(u + h / 2, z + h / 2 * k2, None if J is None else J + h / 2 * l2)
            k4, l4 = self._rhs(u + h, z + h * k3, None if J is None else J + h * l3)
            z = z + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
            if jacobian:
                J = J + h / 6 * (l1 + 2 * l2 + 2 * l3 + l4)
        return z, J

    def _native(self, xy, jacobian):
        return self._flow(xy, self.steps, jacobian)

    def _certify(self):
        probe = np.vstack([p for _, p in self.surface.seed_grid(10)])
        n = self.cfg.steps
        coarse, _ = self._flow(probe, n // 2, False)
        while True:
            fine, _ = self._flow(probe, n, False)
            err = float(np.max(np.abs(self.surface.difference(self.surface.native_chart, fine, coarse))))
            if err < self.cfg.tol:
                return n, err
            if 2 * n > self.cfg.max_steps:
                raise IntegratorError(f"Moser flow step halving defect {err:.3e} at {n} steps",
                                      achieved=err)
            coarse, n = fine, 2 * n

    def pullback_defect(self, grid=64):
        """max |Omega1(tau z) det D tau(z) - Omega0(z)| on a ``grid x grid`` seed grid."""
        pts = np.vstack([p for _, p in self.surface.seed_grid(grid)])
        res = self.apply(self.surface.native_chart, pts, jacobian=True)
        lhs = self.omega1(res.xy) * np.linalg.det(res.jac)
        return float(np.max(np.abs(lhs - self.omega0(pts))))

    def area_defect(self, chart=None, xy=None, n=1000, seed=0):
        """max |Omega1(tau z) det D tau(z) / Omega0(z) - 1|: the forms this map relates."""
        rng = np.random.default_rng(seed)
        pts = np.vstack([p for _, p in self.surface.uniform_samples(rng, n)]) if xy is None else xy
        res = self.apply(self.surface.native_chart, pts, jacobian=True)
        ratio = self.omega1(res.xy) * np.linalg.det(res.jac) / self.omega0(pts)
        return float(np.max(np.abs(ratio - 1.0)))

    def __repr__(self):
        return f"MoserMap({self.omega0.label!r} -> {self.omega1.label!r}, steps={self.steps})"


def moser_interpolate(surface, omega0, omega1, sigma, cfg=None, tol=1e-8, n_check=400, seed=0):
    """Moser map pulling ``omega1`` back to ``omega0`` after checking the preconditions.

    Requires equal totals, ``d sigma = omega1 - omega0`` at random points and
    ``sigma`` vanishing along every boundary circle.
    """
    a0, a1 = omega0.total(), omega1.total()
    if abs(a0 - a1) > tol * max(1.0, abs(a0)):
        raise PreconditionError(f"area forms have different totals {a0:.12g} and {a1:.12g}")
    rng = np.random.default_rng(seed)
    pts = np.vstack([p for _, p in surface.uniform_samples(rng, n_check)])
    defect = float(np.max(np.abs(sigma.exterior(pts) - (omega1(pts) - omega0(pts)))))
    if defect > tol:
        raise PreconditionError(f"sigma is not a primitive of omega1 - omega0 (defect {defect:.3e})")
    t = np.arange(64) / 64
    for i in range(len(surface.boundary_circles)):
        b = float(np.max(np.abs(sigma.along(i, t))))
        if b > 1e-10:
            raise PreconditionError(f"sigma does not vanish on boundary circle {i} (max {b:.3e})")
    return MoserMap(surface, omega0, omega1, sigma, cfg)


def collar_rotation_data(phi0, delta, n=32, tol=1e-9):
    """Detect ``phi0 = (s, t) -> (s, t + rho_i)`` from collar ``i`` to collar ``sigma(i)``.

    Samples ``n`` points at depths ``delta/4`` and ``3 delta/4``. Returns
    ``(rho, sigma, defect)``; ``sigma`` entries are None where no target
    collar matched.
    """
    surf = phi0.surface
    nat = surf.native_chart
    t = (np.arange(n) + 0.5) / n
    rho, perm, worst = [], [], 0.0
    for i, circ in enumerate(surf.boundary_circles):
        st = np.concatenate([np.stack([np.full(n, d * delta), t], axis=-1) for d in (0.25, 0.75)])
        res = phi0.apply(circ.collar_chart, st)
        img = surf.transition(res.chart, nat, res.xy)
        best = None
        for j, other in enumerate(surf.boundary_circles):
            out = surf.transition(nat, other.collar_chart, img)
            if np.any(np.isnan(out)):
                continue
            ds = np.abs(out[:, 0] - st[:, 0])
            dt = out[:, 1] - st[:, 1]
            r = float(np.angle(np.mean(np.exp(2j * np.pi * dt))) / TWO_PI)
            spread = np.abs((dt - r + 0.5) % 1.0 - 0.5)
            defect = float(max(ds.max(), spread.max()))
            if best is None or defect < best[2]:
                best = (j, r, defect)
        if best is None:
            perm.append(None)
            rho.append(float("nan"))
            worst = float("inf")
        else:
            perm.append(best[0])
            rho.append(best[1])
            worst = max(worst, best[2])
    return tuple(rho), tuple(perm), worst


class CappedExtension(SurfaceMap):
    """Extension of a collar rotation ``phi0`` to the capped surface.

    Native-chart points move by ``phi0``; points of cap ``i`` are rotated by
    ``2 pi rho_i`` into cap ``sigma(i)``, where ``phi0`` shifts collar time by
    ``rho_i`` from collar ``i`` to collar ``sigma(i)``.
    """

    representation = "capped-extension"

    def __init__(self, phi0, capped, rho, sigma):
        super().__init__(capped)
        self.base_map = phi0
        self.rho = tuple(float(r) for r in rho)
        self.sigma = tuple(int(j) for j in sigma)
        self._rot = []
        for r in self.rho:
            c, s = math.cos(TWO_PI * r), math.sin(TWO_PI * r)
            self._rot.append(np.array([[c, -s], [s, c]]))
        self.smoothness_defect = None

    def apply(self, chart, xy, jacobian=False):
        i = self.surface.cap_index(chart)
        if i is None:
            res = self.base_map.apply(chart, xy, jacobian)
            return res
        xy = np.atleast_2d(np.asarray(xy, dtype=float))
        R = self._rot[i]
        out = xy @ R.T
        out[np.sum(xy * xy, axis=-1) >= self.surface.caps[i].r1 ** 2] = np.nan
        J = np.broadcast_to(R, (len(xy), 2, 2)).copy() if jacobian else None
        return MapResult(f"cap-{self.sigma[i]}", out, J)

    def inverse(self):
        inv = [0] * len(self.sigma)
        for i, j in enumerate(self.sigma):
            inv[j] = i
        return CappedExtension(self.base_map.inverse(), self.surface,
                               [-self.rho[inv[j]] for j in range(len(inv))], inv)

    def gluing_defect(self, n=32):
        """Compare derivatives through the cap and through the base on the overlap annuli."""
        surf = self.surface
        nat = surf.native_chart
        t = (np.arange(n) + 0.5) / n
        worst = 0.0
        for i, cap in enumerate(surf.caps):
            st = np.concatenate([np.stack([np.full(n, d * cap.delta), t], axis=-1)
                                 for d in (0.25, 0.5, 0.75)])
            xy = surf.transition(f"collar-{i}", f"cap-{i}", st)
            a = self.apply(f"cap-{i}", xy, jacobian=True)
            a_xy, Ja = surf.transition(a.chart, nat, a.xy, jacobian=True)
            Ja = Ja @ a.jac
            nat_xy, J0 = surf.transition(f"cap-{i}", nat, xy, jacobian=True)
            b = self.base_map.apply(nat, nat_xy, jacobian=True)
            b_xy, Jb = surf.transition(b.chart, nat, b.xy, jacobian=True)
            Jb = Jb @ b.jac @ J0
            worst = max(worst, float(np.max(np.abs(surf.difference(nat, a_xy, b_xy)))),
                        float(np.max(np.abs(Ja - Jb))))
        return worst

    def __repr__(self):
        return f"CappedExtension({self.base_map!r}, rho={self.rho!r}, sigma={self.sigma!r})"


def extend_boundary_rotation(phi0, capped, tol=1e-9, smooth_tol=1e-8):
    """Extend a collar-rotation map of the base surface to the capped surface."""
    if not isinstance(capped, CappedSurface):
        raise SurfaceMismatchError("target surface is not capped")
    if phi0.surface is not capped.base:
        raise SurfaceMismatchError("map does not live on the base of the capped surface")
    rho, sigma, defect = collar_rotation_data(phi0, capped.delta, tol=tol)
    if None in sigma or defect > tol or sorted(sigma) != list(range(len(sigma))):
        raise UnsupportedExtensionError(
            "map is not a rigid rotation on every boundary collar", defect=defect)
    areas = [c.r0 for c in capped.caps]
    if any(abs(areas[i] - areas[j]) > 1e-14 for i, j in enumerate(sigma)):
        raise UnsupportedExtensionError("boundary permutation exchanges caps of different area")
    ext = CappedExtension(phi0, capped, rho, sigma)
    ext.smoothness_defect = ext.gluing_defect()
    if ext.smoothness_defect > smooth_tol:
        raise UnsupportedExtensionError("extension is not smooth across the gluing circles",
                                        defect=ext.smoothness_defect)
    return ext


class GridPermutation(SurfaceMap):
    """Discretized standard map on a lattice torus, a bijection of the grid points.

    ``j' = j + round(k sin(2 pi i / n))``, ``i' = i + j'`` (mod n).
    """

    representation = "lattice-permutation"
    discrete = True

    def __init__(self, surface, k=8.0):
        if surface.kind != "lattice":
            raise SurfaceMismatchError("GridPermutation needs a lattice torus")
        super().__init__(surface)
        self.k = float(k)
        n = surface.n
        self._kick = np.round(self.k * np.sin(TWO_PI * np.arange(n) / n))

    def _native(self, xy, jacobian):
        n = self.surface.n
        i = xy[:, 0].astype(np.int64) % n
        j = xy[:, 1].astype(np.int64) % n
        j2 = (j + self._kick[i].astype(np.int64)) % n
        i2 = (i + j2) % n
        out = np.stack([i2, j2], axis=-1).astype(float)
        # no derivative on a lattice; the identity keeps monodromy bookkeeping well defined
        return out, (_eye(len(xy)) if jacobian else None)

    def cycles(self):
        """Brute-force cycle decomposition as lists of flat indices ``i * n + j``."""
        n = self.surface.n
        pts = self.surface.seed_grid()[0][1]
        img = self._native(pts, False)[0].astype(np.int64)
        nxt = img[:, 0] * n + img[:, 1]
        seen = np.zeros(n * n, dtype=bool)
        out = []
        for start in range(n * n):
            if seen[start]:
                continue
            cyc = []
            k = start
            while not seen[k]:
                seen[k] = True
                cyc.append(k)
                k = int(nxt[k])
            out.append(cyc)
        return out

    def __repr__(self):
        return f"GridPermutation(k={self.k!r})"


_MAP_PARAMS = {
    "identity": (),
    "rotation": ("angle", "turns", "rho"),
    "radial-twist": ("coeffs",),
    "annulus-twist": ("coeffs",),
    "shear": ("c",),
    "perturbed-twist": ("coeffs", "kick", "kick_steps"),
    "swap": ("rho",),
    "hamiltonian": ("expression",),
    "grid-permutation": ("k",),
}


def build_map(surface, name, params=None, cfg=None):
    """Instantiate a built-in map family by name; unknown parameter keys are rejected."""
    p = dict(params or {})
    if name not in _MAP_PARAMS:
        raise PreconditionError(f"unknown map family {name!r}")
    extra = sorted(set(p) - set(_MAP_PARAMS[name]))
    if name == "rotation" and surface.kind == "annulus":
        extra += sorted(k for k in p if k in ("angle", "turns"))
    elif name == "rotation":
        extra += ["rho"] if "rho" in p else []
    if extra:
        raise PreconditionError(f"unexpected parameters for {name!r} on a {surface.kind}: {extra}")
    if name == "identity":
        return Identity(surface)
    if name == "rotation":
        if surface.kind == "annulus":
            return AnnulusTwist(surface, [p.get("rho", 0.0)])
        return RigidRotation(surface, p.get("angle", TWO_PI * p.get("turns", 0.0)))
    if name == "radial-twist":
        return RadialTwist(surface, p.get("coeffs", [math.pi, -math.pi]))
    if name == "annulus-twist":
        return AnnulusTwist(surface, p.get("coeffs", [0.0, 1.0]))
    if name == "shear":
        return annulus_shear(surface, p.get("c", 0.3))
    if name == "perturbed-twist":
        return perturbed_twist(surface, p.get("coeffs", DEFAULT_TWIST), p.get("kick", 0.1),
                               int(p.get("kick_steps", 8)))
    if name == "swap":
        return AnnulusSwap(surface, p.get("rho", 0.0))
    if name == "hamiltonian":
        if "expression" not in p:
            raise PreconditionError("hamiltonian map needs an 'expression'")
        return hamiltonian_time_one(surface, Hamiltonian(surface, p["expression"]), cfg)
    if name == "grid-permutation":
        return GridPermutation(surface, p.get("k", 8.0))
    raise PreconditionError(f"unknown map family {name!r}")
