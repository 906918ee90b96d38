"""Centralized numerical tolerances.

Every threshold the library enforces or certifies against lives in this one
record, so the test suite and the emitted certificates always agree on what
"passes" means.  Operations take an optional ``tol`` argument defaulting to
``DEFAULT_TOL``; construct a custom ``Tolerances`` to tighten or relax a knob.
"""

from dataclasses import dataclass, asdict

import numpy as np


@dataclass(frozen=True)
class Tolerances:
    # projection families
    hermitian: float = 1e-12          # max ||P - P^*||
    idempotent: float = 1e-10         # max ||P^2 - P||
    trace_drift: float = 1e-8         # |tr P - round(tr P)|

    # unitary families and frames
    unitary: float = 1e-10            # max ||U^* U - 1||
    obstruction_unitary: float = 1e-9
    frame_range: float = 1e-10        # ||P xi - xi|| for declared frames
    frame_gram: float = 1e-10         # ||Gram - 1|| for declared orthonormal frames
    frame_residual: float = 1e-8      # construction certificates (orthonormality, range, matching)
    parseval: float = 1e-8            # ||sum |xi><xi| - P||

    # matrix kernels
    eig_recon: float = 1e-10
    eigvec_unitary: float = 1e-12
    cayley_gap: float = 1e-6          # min spectral distance of alpha(k) to -1
    cayley_recon: float = 1e-9
    inv_sqrt: float = 1e-10
    inv_sqrt_agree: float = 1e-9
    psd_floor: float = 1e-10          # smallest admissible eigenvalue in eig mode

    # transport and invariants
    transport_unitary: float = 1e-10
    intertwine: float = 1e-8
    pseudo_periodic: float = 1e-8
    winding_jump: float = np.pi       # neighbor phase jump guard

    # logarithm / interpolation pipeline
    two_step_recon: float = 1e-8
    beta_match: float = 1e-8
    gap_target: float = 1e-3          # default eigenphase separation for the perturbed family
    identity_shortcut: float = 1e-13  # treat alpha as exactly 1 below this

    # k-space transforms
    plancherel: float = 1e-12
    roundtrip: float = 1e-12
    gram_identity: float = 1e-12      # reorthonormalize output

    # lattice operators and magnetic pipeline
    lattice_hermitian: float = 1e-12
    supercell_consistency: float = 1e-10
    blockdiag: float = 1e-10
    riesz_agree: float = 1e-9
    interior_defect: float = 1e-8
    covariance: float = 1e-8
    kato_unitary: float = 1e-9
    kato_intertwine: float = 1e-8
    pipeline_recon: float = 1e-7

    # effective Hamiltonians
    heff_spectrum: float = 1e-8
    interp_consistency: float = 1e-12
    zero_mode_rel: float = 1e-6       # relative threshold for the redundant zero eigenvalue

    def as_dict(self):
        return asdict(self)


DEFAULT_TOL = Tolerances()
