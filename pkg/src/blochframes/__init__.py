"""Constructive Bloch frames: orthonormal bases, maximal orthonormal
sub-frames and Parseval frames of exponentially localized Wannier functions
for periodic and magnetically perturbed lattice Hamiltonians.

Layout:

* kspace     grids, lattice boxes, Bloch-Floquet transforms, Fejer smoothing
* families   projection / unitary / frame containers and matrix kernels
* transport  parallel transport, obstruction unitaries, Chern and winding
* framesyn   two-step logarithms, interpolants, the frame constructions
* models     finite-hopping lattice models and their Bloch fibers
* hofstadter magnetic phases, rational-flux supercell reduction, bands
* magframes  magnetic projections and generalized Wannier frames
* wannier    position-space products: Wannier sets, effective Hamiltonians
* io         binary containers, CSV, JSON certificates
* service    HTTP API around the constructions
* cli        command-line client
"""

from .config import DEFAULT_TOL, Tolerances
from .kspace import KGrid, LatticeBox
from .families import BlochFrame, ProjectionFamily, UnitaryFamily

__version__ = "0.1.0"

__all__ = [
    "DEFAULT_TOL",
    "Tolerances",
    "KGrid",
    "LatticeBox",
    "BlochFrame",
    "ProjectionFamily",
    "UnitaryFamily",
    "__version__",
]
