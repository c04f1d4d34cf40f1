"""Equidistribution defects of orbit sets against boundary-flat test dictionaries."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import InvarianceViolationError, PreconditionError
from .geometry import CappedSurface, _smootherstep, area_integrate
from .orbits import OrbitSet, find_orbits

log = logging.getLogger(__name__)

# fraction of the collar over which dictionary functions are flattened to constants
FLAT = 0.25


@dataclass
class TestFunction:
    __test__ = False

    name: str
    native: object
    constant: float | None = None


class TestDictionary:
    """Functions ``f_1 = 1, f_2, ...`` locally constant near every boundary circle.

    On a capped surface each function takes, on cap ``i``, its constant value
    along the old boundary circle. Area averages are precomputed.
    """

    __test__ = False

    def __init__(self, surface, functions, check=True):
        self.surface = surface
        self.functions = list(functions)
        if not self.functions or self.functions[0].constant != 1.0:
            raise PreconditionError("the first dictionary function must be the constant 1")
        self._base = surface.base if isinstance(surface, CappedSurface) else surface
        self.locality_defect = self._locality_defect()
        if check and self.locality_defect >= 1e-10:
            raise PreconditionError(
                f"dictionary is not constant on boundary circles (defect {self.locality_defect:.3e})")
        self.averages = np.array([self._average(k) for k in range(len(self.functions))])

    def __len__(self):
        return len(self.functions)

    @property
    def names(self):
        return [f.name for f in self.functions]

    def _boundary_value(self, k, i):
        fn = self.functions[k]
        if fn.constant is not None:
            return fn.constant
        p = self._base.boundary_points(i, np.array([0.0]))
        return float(fn.native(p)[0])

    def evaluator(self, k):
        """``(chart, xy) -> values`` for function ``k`` on the dictionary's surface."""
        fn = self.functions[k]
        surf = self.surface
        nat = surf.native_chart

        def call(chart, xy):
            xy = np.atleast_2d(np.asarray(xy, dtype=float))
            if fn.constant is not None:
                return np.full(len(xy), fn.constant)
            i = surf.cap_index(chart) if isinstance(surf, CappedSurface) else None
            if i is not None:
                return np.full(len(xy), self._boundary_value(k, i))
            if chart != nat:
                xy = surf.transition(chart, nat, xy)
            return fn.native(xy)

        return call

    def _average(self, k):
        fn = self.functions[k]
        if fn.constant is not None:
            return fn.constant
        return area_integrate(self.surface, self.evaluator(k)) / self.surface.total_area

    def _locality_defect(self, n=64):
        t = np.arange(n) / n
        worst = 0.0
        # on a capped surface the function must already be constant across the glued collar
        depths = [0.0, 1e-3 * self._base.collar_width]
        if isinstance(self.surface, CappedSurface):
            depths.append(self.surface.delta)
        for k, fn in enumerate(self.functions):
            if fn.constant is not None:
                continue
            for i, circ in enumerate(self._base.boundary_circles):
                for depth in depths:
                    st = np.stack([np.full(n, depth), t], axis=-1)
                    vals = fn.native(self._base.transition(circ.collar_chart,
                                                           self._base.native_chart, st))
                    worst = max(worst, float(np.ptp(vals)),
                                float(np.max(np.abs(vals - self._boundary_value(k, i)))))
        return worst


def _flat_coordinate(x):
    """0 for x <= FLAT, 1 for x >= 1 - FLAT, smooth in between."""
    return _smootherstep((x - FLAT) / (1.0 - 2.0 * FLAT))


def default_dictionary(surface, size=5):
    """Boundary-flat dictionary of the given size (5, 10 or 20 are the usual choices).

    Order: the constant, then alternately radial profiles ``cos(pi k xi)`` and
    angular products ``bump * cos / sin``, where ``xi`` is a coordinate across
    the surface flattened near the boundary and ``bump = 4 xi (1 - xi)``.
    """
    base = surface.base if isinstance(surface, CappedSurface) else surface
    if size < 1:
        raise PreconditionError("dictionary size must be positive")
    fns = [TestFunction("one", None, constant=1.0)]
    if base.kind == "annulus":
        W = base.width

        def xi(xy):
            return _flat_coordinate(xy[:, 0] / W)

        def angular(m, kind):
            trig = np.cos if kind == "cos" else np.sin
            return lambda xy: 4 * xi(xy) * (1 - xi(xy)) * trig(2 * np.pi * m * xy[:, 1])
    elif base.kind == "disk":
        # xi runs from 0 on the boundary to 1 at the centre
        def xi(xy):
            return _flat_coordinate(1.0 - np.sum(xy * xy, axis=-1))

        def angular(m, kind):
            def f(xy):
                z = (xy[:, 0] + 1j * xy[:, 1]) ** m
                part = z.real if kind == "cos" else z.imag
                return 4 * xi(xy) * (1 - xi(xy)) * part
            return f
    else:
        raise PreconditionError(f"no default dictionary on a {base.kind} surface")
    k = m = 1
    while len(fns) < size:
        fns.append(TestFunction(f"radial-{k}", (lambda xy, k=k: np.cos(np.pi * k * xi(xy)))))
        k += 1
        for kind in ("cos", "sin"):
            if len(fns) < size:
                fns.append(TestFunction(f"angular-{kind}-{m}", angular(m, kind)))
        m += 1
    return TestDictionary(surface, fns[:size])


@dataclass
class DefectReport:
    names: list
    defects: np.ndarray
    orbit_set_id: str = ""
    size: float = 0.0
    level: int | None = None
    note: str = ""

    @property
    def max_defect(self):
        return float(np.max(self.defects)) if len(self.defects) else 0.0

    def to_dict(self):
        return {"orbit_set_id": self.orbit_set_id, "level": self.level, "size": self.size,
                "names": list(self.names), "defects": [float(d) for d in self.defects],
                "max_defect": self.max_defect, "note": self.note}


def equidistribution_defect(O, dictionary, surface=None, orbit_set_id=""):
    """``|O(f_i)/|O| - average of f_i|`` for every dictionary function."""
    if surface is not None and surface is not dictionary.surface:
        raise PreconditionError("dictionary was built on a different surface")
    d = np.array([abs(O.average(dictionary.evaluator(k)) - dictionary.averages[k])
                  for k in range(len(dictionary))])
    return DefectReport(dictionary.names, d, orbit_set_id, O.size())


def orbit_membership(orbit, capped, tol=1e-9):
    """Boolean per point: inside the base surface Z (points within ``tol`` of L count as inside)."""
    out = np.empty(orbit.period, dtype=bool)
    for k in range(orbit.period):
        out[k] = bool(capped.in_base(orbit.charts[k], orbit.points[k:k + 1], tol)[0])
    return out


def restrict_orbit_set(O, capped, tol=1e-9):
    """Sub-sum of the orbits lying in Z; a straddling orbit means L is not invariant."""
    if not isinstance(capped, CappedSurface):
        raise PreconditionError("restriction needs the capped surface")
    kept = []
    for a, orb in O:
        inside = orbit_membership(orb, capped, tol)
        if inside.all():
            kept.append((a, orb))
        elif inside.any():
            raise InvarianceViolationError(
                f"orbit of period {orb.period} straddles the Lagrangian circles")
    return OrbitSet(kept)


def defect_sequence_experiment(phi, dictionary, schedule, weighting="uniform", seeds=10,
                               tol=1e-10, orbits=None, workers=1):
    """Defect reports for the orbit sets of all found orbits of period ``<= d_j``.

    No monotonicity is asserted; levels without orbits are reported with a note.
    """
    schedule = sorted(int(d) for d in schedule)
    if not schedule:
        raise PreconditionError("period schedule is empty")
    if orbits is None:
        orbits = find_orbits(phi, schedule[-1], seeds=seeds, tol=tol, workers=workers)
    reports = []
    for d in schedule:
        sel = [o for o in orbits if o.period <= d]
        if not sel:
            log.info("level %d skipped: no orbits", d)
            reports.append(DefectReport(dictionary.names, np.zeros(0), f"period<={d}", 0.0, d,
                                        note="skipped: no orbits"))
            continue
        O = OrbitSet.from_orbits(sel, weighting, surface=phi.surface)
        rep = equidistribution_defect(O, dictionary, orbit_set_id=f"period<={d}")
        rep.level = d
        reports.append(rep)
        log.info("level %d: %d orbits, max defect %.3e", d, len(sel), rep.max_defect)
    return reports
