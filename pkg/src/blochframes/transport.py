"""Parallel transport along grid axes, obstruction unitaries, and the
integer invariants (Chern numbers, winding degrees) gating the constructions.

The discrete transport step between neighboring points is the unitary polar
factor of A = P' P + (1 - P')(1 - P).  Because A P = P' A and A^H A commutes
with P, the polar factor intertwines the projections exactly, not just to
discretization accuracy; unitarity and intertwining hold at rounding level
on any grid, while convergence to the continuum transport is O(1/N).
"""

from dataclasses import dataclass, field

import numpy as np

from .config import DEFAULT_TOL
from .families import (BlochFrame, ProjectionFamily, UnitaryFamily, _dagger,
                       eig_hermitian, specnorm_max, worst_index)
from .kspace import KGrid


def polar_unitary(A, tol=DEFAULT_TOL, context="polar factor"):
    """Unitary factor of the polar decomposition of stacked matrices."""
    A = np.asarray(A, dtype=complex)
    u, s, vh = np.linalg.svd(A)
    smin = float(s.min())
    if smin < 1e-8:
        at = worst_index(-s.min(axis=-1)) if s.ndim > 1 else (0,)
        raise ValueError(
            f"{context}: matrix nearly singular (min singular value "
            f"{smin:.3e} at index {at}); neighboring projections are too far "
            f"apart, refine the grid")
    return u @ vh


@dataclass(frozen=True)
class TransportLine:
    """Cumulative transport unitaries T(k_i, 0) along one grid axis.

    samples[i_axis, ...] is the ordered product of the discrete steps from
    the k_i = 0 face to the current point; samples at index 0 is the
    identity exactly.  ``loop`` holds the full-period product T(1, 0), which
    maps Ran P(0, k) onto itself.
    """

    family: ProjectionFamily
    axis: int
    samples: np.ndarray
    loop: np.ndarray = field(repr=False)

    @property
    def grid(self):
        return self.family.grid


def parallel_transport(family, axis=0, tol=DEFAULT_TOL):
    """Transport the family along one axis from its zero face."""
    grid = family.grid
    if not 0 <= axis < grid.dim:
        raise ValueError(f"axis {axis} out of range for a {grid.dim}d grid")
    P = np.moveaxis(family.samples, axis, 0)
    n = P.shape[-1]
    N = P.shape[0]
    eye = np.eye(n)
    T = [np.broadcast_to(eye, P.shape[1:]).copy()]
    for j in range(N):
        Pj = P[j]
        Pn = P[(j + 1) % N]
        A = Pn @ Pj + (eye - Pn) @ (eye - Pj)
        U = polar_unitary(A, tol=tol,
                          context=f"transport step {j} -> {j + 1} on axis {axis}")
        T.append(U @ T[-1])
    loop = T.pop()
    samples = np.moveaxis(np.stack(T, axis=0), 0, axis)
    return TransportLine(family=family, axis=axis, samples=samples, loop=loop)


def transport_defects(line):
    """Worst unitarity and intertwining residuals of a transport line."""
    P = np.moveaxis(line.family.samples, line.axis, 0)
    T = np.moveaxis(line.samples, line.axis, 0)
    n = P.shape[-1]
    uni = specnorm_max(_dagger(T) @ T - np.eye(n))
    inter = specnorm_max(T @ P[:1] @ _dagger(T) - P)
    loop_inter = specnorm_max(line.loop @ P[0] @ _dagger(line.loop) - P[0])
    return {"unitary_defect": float(uni), "intertwine_defect": float(inter),
            "loop_intertwine_defect": float(loop_inter)}


def transported_frame(line, face_frame):
    """psi(k_i, k) = T(k_i, 0) xi(0, k) for a frame given on the zero face.

    face_frame: BlochFrame on the transverse grid (plain (n, M) array in
    d = 1).  The output array is orthonormal pointwise; along the transport
    axis it is pseudo-periodic with the obstruction unitary, not periodic.
    """
    xi = face_frame.samples if isinstance(face_frame, BlochFrame) else np.asarray(face_frame)
    T = np.moveaxis(line.samples, line.axis, 0)
    psi = T @ xi[None]
    return np.moveaxis(psi, 0, line.axis)


def obstruction_matrix(line, face_frame, tol=DEFAULT_TOL):
    """alpha(k)_{ab} = <xi_a(0,k), T(1,0) xi_b(0,k)>: the unitary measuring
    how far the transported face basis is from closing up over the period.

    face_frame must be an orthonormal basis of Ran P on the zero face (full
    rank, or the loop holonomy would leave its span).  Returns a plain (m, m)
    matrix in d = 1 and a UnitaryFamily on the transverse grid otherwise.
    """
    fam = line.family
    grid = fam.grid
    m = fam.rank
    if isinstance(face_frame, BlochFrame):
        xi = face_frame.samples
    else:
        xi = np.asarray(face_frame, dtype=complex)
    if xi.shape[-1] != m:
        raise ValueError(f"face frame has {xi.shape[-1]} vectors but the "
                         f"family has rank {m}; the loop holonomy only "
                         f"closes on a full basis")
    gram = _dagger(xi) @ xi
    gdev = specnorm_max(gram - np.eye(m))
    if gdev > tol.frame_gram:
        raise ValueError(f"face frame is not orthonormal (defect {gdev:.3e})")
    P0 = np.take(fam.samples, 0, axis=line.axis)
    rdev = specnorm_max(xi - P0 @ xi)
    if rdev > tol.frame_range:
        raise ValueError(f"face frame leaves Ran P on the face "
                         f"(defect {rdev:.3e})")
    alpha = _dagger(xi) @ line.loop @ xi
    dev = specnorm_max(_dagger(alpha) @ alpha - np.eye(m))
    if dev > tol.obstruction_unitary:
        raise ValueError(f"obstruction matrix failed unitarity ({dev:.3e}); "
                         f"transport line inconsistent with the face frame")
    if grid.dim == 1:
        return alpha
    face_sizes = tuple(s for j, s in enumerate(grid.sizes) if j != line.axis)
    return UnitaryFamily(grid=KGrid(face_sizes), samples=alpha, tol=tol)


# ---------------------------------------------------------------------------
# invariants

# Orientation of the plaquette sum relative to the curvature integral
# (1/2 pi i) int Tr(P [d_i P, d_j P]); fixed once against chern_riemann on
# the planar two-band model and never touched again.
_PLAQUETTE_SIGN = 1


def _band_basis(P, m):
    """Per-k orthonormal basis of Ran P from the top-m eigenvectors."""
    w, V = eig_hermitian(P)
    assert float(w[..., -m].min()) > 0.5, "projection eigenvalues not separated"
    return V[..., -m:]


def chern_number(family, axes=(0, 1), tol=DEFAULT_TOL):
    """First Chern number over the plane of two grid axes, as an exact integer.

    Plaquette method: phases of normalized overlap determinants of Ran P
    bases around every elementary plaquette, summed and divided by 2 pi.
    Gauge choices cancel link by link, so the sum is an integer up to
    rounding; the residual is asserted tiny.  The orientation is fixed so
    that the result matches the commutator-trace curvature integral
    (see chern_riemann), and swapping the two axes flips the sign.

    In d = 3 the number is computed at every value of the remaining
    coordinate and must be constant.
    """
    i, j = axes
    grid = family.grid
    if grid.dim < 2:
        raise ValueError("Chern numbers need at least two axes")
    if i == j or not (0 <= i < grid.dim and 0 <= j < grid.dim):
        raise ValueError(f"invalid axis pair {axes}")
    V = _band_basis(family.samples, family.rank)
    Oi = np.linalg.det(_dagger(V) @ np.roll(V, -1, axis=i))
    Oj = np.linalg.det(_dagger(V) @ np.roll(V, -1, axis=j))
    small = min(float(np.abs(Oi).min()), float(np.abs(Oj).min()))
    if small < 1e-12:
        raise ValueError("vanishing link overlap; grid cannot resolve the "
                         "family on this plane")
    plaq = Oi * np.roll(Oj, -1, axis=i) * np.conjugate(np.roll(Oi, -1, axis=j)) \
        * np.conjugate(Oj)
    theta = np.angle(plaq)
    total = theta.sum(axis=(i, j)) / (2.0 * np.pi)
    vals = np.round(np.atleast_1d(total)).astype(int)
    resid = float(np.abs(np.atleast_1d(total) - vals).max())
    assert resid < 1e-6, f"plaquette sum off integer by {resid:.3e}"
    if vals.min() != vals.max():
        raise ValueError(f"Chern number varies with the transverse "
                         f"coordinate: {sorted(set(vals.ravel()))}")
    return _PLAQUETTE_SIGN * int(vals.flat[0])


def chern_riemann(family, axes=(0, 1)):
    """Riemann-sum value of the curvature integral
    (1 / 2 pi i) int dk_i dk_j Tr(P [d_i P, d_j P]),
    with spectral (DFT) derivatives.  Not an integer at finite N; kept as the
    continuum cross-check for the plaquette count.
    """
    i, j = axes
    P = family.samples
    grid = family.grid

    def ddk(F, ax):
        n = grid.sizes[ax]
        freq = 2j * np.pi * np.fft.fftfreq(n, d=1.0 / n)
        shape = [1] * F.ndim
        shape[ax] = n
        return np.fft.ifft(np.fft.fft(F, axis=ax) * freq.reshape(shape), axis=ax)

    dPi = ddk(P, i)
    dPj = ddk(P, j)
    integrand = np.einsum("...ab,...bc,...ca->...", P, dPi, dPj) \
        - np.einsum("...ab,...bc,...ca->...", P, dPj, dPi)
    val = integrand.mean(axis=(i, j)) / (2j * np.pi)
    return float(np.mean(val).real)


def winding_degree(family, axis=0, tol=DEFAULT_TOL):
    """Integer winding of det(alpha) along one axis of a unitary family.

    Principal-branch phase increments between neighbors are summed around the
    loop; any increment with modulus >= pi (up to a hair of slack) means the
    grid cannot certify the count and is rejected.  With a transverse
    coordinate present the winding must not depend on it.
    """
    if isinstance(family, UnitaryFamily):
        samples = family.samples
        ndim_k = family.grid.dim
    else:
        samples = np.asarray(family)
        ndim_k = samples.ndim - 2
    if not 0 <= axis < ndim_k:
        raise ValueError(f"axis {axis} out of range")
    D = np.linalg.det(samples)
    step = np.angle(np.roll(D, -1, axis=axis) / D)
    jump = float(np.abs(step).max())
    if jump >= np.pi - 1e-6:
        raise ValueError(
            f"determinant phase jumps by {jump:.3f} between neighbors; grid "
            f"too coarse to certify a winding degree")
    total = step.sum(axis=axis) / (2.0 * np.pi)
    vals = np.round(np.atleast_1d(total)).astype(int)
    resid = float(np.abs(np.atleast_1d(total) - vals).max())
    assert resid < 1e-6, f"winding sum off integer by {resid:.3e}"
    if vals.min() != vals.max():
        raise ValueError(f"winding degree varies across the transverse "
                         f"coordinate: {sorted(set(vals.ravel()))}")
    return int(vals.flat[0])


def invariant_report(family, tol=DEFAULT_TOL):
    """All pairwise Chern numbers plus their Riemann cross-checks."""
    grid = family.grid
    out = {"chern": {}, "riemann": {}}
    for i in range(grid.dim):
        for j in range(i + 1, grid.dim):
            key = f"{i}{j}"
            out["chern"][key] = chern_number(family, (i, j), tol=tol)
            out["riemann"][key] = chern_riemann(family, (i, j))
    return out
