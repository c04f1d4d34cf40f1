"""Numerical laboratory for area-preserving surface maps.

Surfaces with collars and caps, built-in map families, periodic orbit search,
action functions and Calabi invariants, flux of isotopies and equidistribution
defects of orbit sets.
"""

__version__ = "0.1.0"

from .errors import (ConvergenceError, EmptyCensusError, IntegratorError, InvalidAreaError,
                     InvalidCollarError, InvarianceViolationError, NonExactFormError,
                     PreconditionError, QuadratureError, SurfaceMismatchError, SymplabError,
                     UnsupportedExtensionError)
from .geometry import (Annulus, CappedSurface, Disk, LatticeTorus, PointCoord, area_integrate,
                       cap_surface, verify_area_form)
from .forms import AreaForm, OneForm, pullback_difference, standard_primitive
from .maps import (AnnulusSwap, AnnulusTwist, GridPermutation, Hamiltonian, HamiltonianMap,
                   IntegratorConfig, RadialTwist, RigidRotation, build_map,
                   extend_boundary_rotation, hamiltonian_time_one, moser_interpolate)
from .orbits import OrbitSet, PeriodicOrbit, find_orbits
from .action import build_action, calabi, inequality_check, mean_actions, p_epsilon_census
from .homology import Isotopy, flux_report, hamiltonian_certificate, isotopy_flux, rationality_verdict
from .equidist import (TestDictionary, default_dictionary, defect_sequence_experiment,
                       equidistribution_defect, restrict_orbit_set)
