"""Magnetic lattice operators at rational flux and their supercell fibers.

A uniform field enters through the antisymmetric Peierls phase
phi(a, b) = (b_1 a_2 - b_2 a_1) / 2 attached to every hopping.  At flux
b0 = 2 pi p/q the operator is gauge-equivalent to one that is periodic over
the supercell (qZ) x Z, so a Bloch-Floquet transform in the coarse variable
block-diagonalizes it into qN x qN fibers.  A deviation eps away from the
rational point survives the same gauge transformation as the long-range
prefactor e^{i eps q phi(gamma, gamma')} on an otherwise periodic kernel.
The gauge phases, the reduced kernel, and the fiber map are kept together in
one object so the reduction can be checked entry by entry against the direct
magnetic build.

Conventions: supercell sites are indexed by (x, y) with x in {0, .., q-1}
the column inside the supercell and y the original site, flat index
x * n_sites + y; the physical position of fiber slot (x, y) is
(x, 0) + site_y.  Reduced coordinates gamma map to original lattice points
(q gamma_1, gamma_2).
"""

from dataclasses import dataclass, field
from math import gcd

import numpy as np

from .config import DEFAULT_TOL
from .kspace import KGrid, LatticeBox
from .models import HoppingModel


def peierls_phase(a, b):
    """phi(a, b) = (b_1 a_2 - b_2 a_1) / 2, bilinear and antisymmetric.

    Broadcasts over leading axes; the last axis holds the two components.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return 0.5 * (b[..., 0] * a[..., 1] - b[..., 1] * a[..., 0])


@dataclass(frozen=True)
class LatticeOperator:
    """Dense truncation of a magnetic lattice operator on a box.

    The matrix realizes elements e^{i theta phi(gamma, gamma')} times a
    difference kernel block, plus optional per-fiber position offsets inside
    the phase.  ``covariant`` records whether the pure difference-kernel
    phase rule holds (offsets all zero), which is what the magnetic
    translations commute with.
    """

    box: LatticeBox
    theta: float
    kernel: dict
    matrix: np.ndarray
    covariant: bool = True

    @property
    def support_radius(self):
        if not self.kernel:
            return 0
        return max(max(abs(c) for c in g) for g in self.kernel)


def realize_covariant(kernel, theta, box, offsets=None, tol=DEFAULT_TOL):
    """Dense matrix with elements e^{i theta phi(.,.)} K(gamma - gamma').

    kernel maps displacement tuples to (Q, Q) blocks with Q = box.fiber_dim.
    offsets, when given, is a (Q, 2) array of per-fiber positions entering
    the phase as phi(gamma + u_a, gamma' + u_b); omitted means all zero and
    the phase depends on the sites alone.
    """
    if box.dim != 2:
        raise ValueError("magnetic phases are defined on two dimensional boxes")
    q_fib = box.fiber_dim
    if offsets is None:
        u = np.zeros((q_fib, 2))
    else:
        u = np.asarray(offsets, dtype=float)
        assert u.shape == (q_fib, 2), "one 2d offset per fiber slot is required"
    coords = box.site_coords()
    mat = np.zeros((box.total_dim, box.total_dim), dtype=complex)
    for disp, block in kernel.items():
        block = np.asarray(block, dtype=complex)
        if block.shape != (q_fib, q_fib):
            raise ValueError(f"kernel block at {disp} must be "
                             f"{q_fib}x{q_fib}, got {block.shape}")
        d = np.asarray(disp, dtype=int)
        tgt = coords + d
        ok = np.max(np.abs(tgt), axis=1) <= box.radius
        if not np.any(ok):
            continue
        src = coords[ok]
        rows = box.site_index(src + d)
        cols = box.site_index(src)
        for a in range(q_fib):
            for b in range(q_fib):
                v = block[a, b]
                if v == 0:
                    continue
                ph = peierls_phase(src + d + u[a], src + u[b])
                mat[rows * q_fib + a, cols * q_fib + b] += \
                    np.exp(1j * theta * ph) * v
    defect = np.abs(mat - mat.conj().T).max() if mat.size else 0.0
    assert defect <= tol.lattice_hermitian, \
        f"realized operator is not Hermitian: defect {defect:.3e}"
    return mat


def build_hofstadter(model, b, box, tol=DEFAULT_TOL):
    """Truncate the flux-b operator e^{i b phi(pos, pos')} T(gamma-gamma').

    Positions are gamma plus the site offset inside the unit cell, so models
    with off-origin sites stay Hermitian; for the presets (all sites at the
    origin) the phase reduces to e^{i b phi(gamma, gamma')} and the operator
    is covariant under the magnetic translations with the same coefficient.
    """
    if model.dim != 2:
        raise ValueError("uniform flux needs a two dimensional model")
    if box.dim != 2 or box.fiber_dim != model.n_sites:
        raise ValueError(f"box must be 2d with fiber dimension "
                         f"{model.n_sites}, got dim {box.dim} fiber "
                         f"{box.fiber_dim}")
    zero_sites = bool(np.all(model.sites == 0.0))
    offsets = None if zero_sites else model.sites
    mat = realize_covariant(model.hoppings, b, box, offsets=offsets, tol=tol)
    return LatticeOperator(box=box, theta=float(b),
                           kernel=dict(model.hoppings), matrix=mat,
                           covariant=zero_sites)


# ---------------------------------------------------------------------------
# Magnetic translations

def translation_matrix(theta, eta, box, offsets=None):
    """Dense matrix of (tau f)(gamma, x) = e^{i theta phi(gamma + u_x, eta)}
    f(gamma - eta, x) on the box; rows whose source falls outside are zero,
    so the truncation is a partial isometry.
    """
    if box.dim != 2:
        raise ValueError("magnetic translations act on two dimensional boxes")
    eta = np.asarray(eta, dtype=int)
    assert eta.shape == (2,), "eta must be a lattice vector with 2 components"
    q_fib = box.fiber_dim
    if offsets is None:
        u = np.zeros((q_fib, 2))
    else:
        u = np.asarray(offsets, dtype=float)
    coords = box.site_coords()
    src = coords - eta
    ok = np.max(np.abs(src), axis=1) <= box.radius
    rows = box.site_index(coords[ok])
    cols = box.site_index(src[ok])
    mat = np.zeros((box.total_dim, box.total_dim), dtype=complex)
    for a in range(q_fib):
        ph = peierls_phase(coords[ok] + u[a], eta)
        mat[rows * q_fib + a, cols * q_fib + a] = np.exp(1j * theta * ph)
    return mat


def magnetic_translation(theta, eta, f, box, offsets=None):
    """Apply the magnetic translation by eta to a box function.

    f is (total_dim,) or (n_sites, fiber_dim); the result keeps the shape.
    """
    f = np.asarray(f, dtype=complex)
    flat = f.reshape(box.total_dim)
    out = translation_matrix(theta, eta, box, offsets=offsets) @ flat
    return out.reshape(f.shape)


def commutation_residual(op, eta, offsets=None):
    """Max norm of (H tau - tau H) restricted to safely interior columns.

    Columns are basis vectors supported at distance > support_radius +
    ||eta||_inf from the cut; there the finite box reproduces the infinite
    lattice and the commutator vanishes identically, so anything above
    rounding is a phase-convention bug.
    """
    tau = translation_matrix(op.theta, np.asarray(eta, dtype=int), op.box,
                             offsets=offsets)
    comm = op.matrix @ tau - tau @ op.matrix
    margin = op.support_radius + int(np.max(np.abs(eta)))
    cols = op.box.interior_dof_mask(margin)
    if not np.any(cols):
        raise ValueError("box too small: no interior columns at margin "
                         f"{margin}")
    return float(np.abs(comm[:, cols]).max())


# ---------------------------------------------------------------------------
# Supercell reduction at rational flux

@dataclass(frozen=True)
class SupercellReduction:
    """Gauge-reduced form of the flux 2 pi p/q + eps operator.

    kernel holds the periodic part as displacement -> (qN, qN) blocks over
    the supercell fiber; the full reduced operator multiplies it by
    e^{i eps q phi(gamma, gamma')}.  positions are the physical locations of
    the fiber slots, used by the gauge phase u_phase and by overlap
    geometry downstream.
    """

    model: HoppingModel
    p: int
    q: int
    epsilon: float
    kernel: dict = field(repr=False)
    positions: np.ndarray = field(repr=False)
    tol: object = field(default=DEFAULT_TOL, repr=False, compare=False)

    @property
    def b0(self):
        return 2.0 * np.pi * self.p / self.q

    @property
    def b(self):
        return self.b0 + self.epsilon

    @property
    def theta(self):
        # phase coefficient of the reduced long-range prefactor
        return self.epsilon * self.q

    @property
    def n_fiber(self):
        return self.q * self.model.n_sites

    def fiber(self, k):
        """h_k, the qN x qN Bloch matrix of the periodic kernel part."""
        k = np.asarray(k, dtype=float)
        h = np.zeros((self.n_fiber, self.n_fiber), dtype=complex)
        for disp, block in self.kernel.items():
            h += np.exp(-2j * np.pi * (k[0] * disp[0] + k[1] * disp[1])) * block
        return h

    def fiber_field(self, grid):
        if grid.dim != 2:
            raise ValueError("fiber field needs a two dimensional k grid")
        h = np.zeros(grid.sizes + (self.n_fiber, self.n_fiber), dtype=complex)
        meshes = grid.meshes()
        for disp, block in self.kernel.items():
            acc = meshes[0] * disp[0] + meshes[1] * disp[1]
            h += np.exp(-2j * np.pi * acc)[..., None, None] * block
        defect = np.abs(h - np.swapaxes(h, -1, -2).conj()).max()
        assert defect <= self.tol.lattice_hermitian, \
            f"fiber field is not Hermitian: defect {defect:.3e}"
        return h

    def realize(self, radius):
        """Dense reduced operator on a box of the given radius."""
        box = LatticeBox(radius=radius, fiber_dim=self.n_fiber, dim=2)
        mat = realize_covariant(self.kernel, self.theta, box, tol=self.tol)
        return LatticeOperator(box=box, theta=self.theta,
                               kernel=dict(self.kernel), matrix=mat,
                               covariant=True)

    def u_phase(self, gammas):
        """Diagonal gauge phases u(gamma, slot) mapping the direct operator
        to the reduced one: (-1)^{p g1 g2} e^{i b phi((q g1, g2), pos)}.

        gammas is (..., 2) integer; returns (..., n_fiber) unimodular.
        """
        g = np.asarray(gammas, dtype=int)
        stretched = np.stack([self.q * g[..., 0], g[..., 1]], axis=-1)
        sign = 1.0 - 2.0 * ((self.p * g[..., 0] * g[..., 1]) % 2)
        ph = peierls_phase(stretched[..., None, :], self.positions)
        return sign[..., None] * np.exp(1j * self.b * ph)


def supercell_reduce(model, p, q, epsilon=0.0, tol=DEFAULT_TOL):
    """Reduce flux b = 2 pi p/q + epsilon to a periodic kernel plus phase.

    Builds the supercell kernel block by block: an original hopping by
    (d1, d2) connects supercell columns x' -> x whenever d1 - x + x' is a
    multiple of q, landing at reduced displacement ((d1 - x + x')/q, d2)
    with the gauge phase that makes the conjugated operator periodic.
    """
    if model.dim != 2:
        raise ValueError("supercell reduction needs a two dimensional model")
    p = int(p)
    q = int(q)
    if q <= 0:
        raise ValueError("flux denominator q must be a positive integer")
    if gcd(p, q) != 1:
        raise ValueError(f"flux p/q = {p}/{q} must be in lowest terms")
    n = model.n_sites
    nf = q * n
    positions = np.zeros((nf, 2))
    for x in range(q):
        positions[x * n:(x + 1) * n, 0] = x + model.sites[:, 0]
        positions[x * n:(x + 1) * n, 1] = model.sites[:, 1]
    bfull = 2.0 * np.pi * p / q + epsilon
    kernel = {}
    for (d1, d2), block in model.hoppings.items():
        for x in range(q):
            for xp in range(q):
                t = d1 - x + xp
                if t % q:
                    continue
                g1 = t // q
                dest = kernel.setdefault(
                    (g1, d2), np.zeros((nf, nf), dtype=complex))
                sign = 1 - 2 * ((p * g1 * d2) % 2)
                pa = positions[x * n:(x + 1) * n]
                pb = positions[xp * n:(xp + 1) * n]
                # symmetric-sum phase from commuting the gauge past the hop
                sym = d2 * (pa[:, None, 0] + pb[None, :, 0]) \
                    - q * g1 * (pa[:, None, 1] + pb[None, :, 1])
                ph = sign * np.exp(1j * bfull * 0.5 * sym) \
                    * np.exp(1j * bfull * peierls_phase(pa[:, None, :], pb[None, :, :]))
                dest[x * n:(x + 1) * n, xp * n:(xp + 1) * n] += ph * block
    for disp, block in kernel.items():
        neg = (-disp[0], -disp[1])
        partner = kernel.get(neg)
        defect = np.abs(partner - block.conj().T).max() if partner is not None \
            else np.abs(block).max()
        assert defect <= tol.lattice_hermitian, \
            f"reduced kernel lost self-adjointness at {disp}: {defect:.3e}"
    return SupercellReduction(model=model, p=p, q=q, epsilon=float(epsilon),
                              kernel=kernel, positions=positions, tol=tol)


def supercell_consistency(model, p, q, epsilon, radius, tol=DEFAULT_TOL):
    """Entrywise residual of (gauge) H_direct (gauge)^* against the reduced
    operator, over every pair of sites in a reduced box of the given radius.

    The direct operator is built on an enclosing box, so no compared entry
    is affected by truncation; the identity is exact phase algebra and the
    residual should sit at rounding level.
    """
    red = supercell_reduce(model, p, q, epsilon=epsilon, tol=tol)
    rbox = LatticeBox(radius=radius, fiber_dim=red.n_fiber, dim=2)
    h_red = realize_covariant(red.kernel, red.theta, rbox, tol=tol)
    obox = LatticeBox(radius=q * radius + q, fiber_dim=model.n_sites, dim=2)
    h_dir = build_hofstadter(model, red.b, obox, tol=tol).matrix
    coords = rbox.site_coords()
    u = red.u_phase(coords).reshape(-1)
    n = model.n_sites
    omap = np.empty(rbox.total_dim, dtype=int)
    for x in range(q):
        orig = np.stack([q * coords[:, 0] + x, coords[:, 1]], axis=-1)
        osite = obox.site_index(orig)
        for y in range(n):
            omap[(np.arange(rbox.n_sites) * red.n_fiber) + x * n + y] = \
                osite * n + y
    mapped = h_dir[np.ix_(omap, omap)]
    conjugated = u[:, None] * mapped * u.conj()[None, :]
    return float(np.abs(h_red - conjugated).max())


def torus_block_residual(red, n, tol=DEFAULT_TOL):
    """Check that the discrete Bloch-Floquet transform block-diagonalizes
    the periodic reduced operator on the n x n torus.

    Requires epsilon = 0 (the long-range phase is not torus-periodic) and
    kernel support below n/2 so each displacement class wraps uniquely.
    Returns the max off-diagonal block magnitude and the max mismatch of
    the diagonal blocks against the fiber matrices at k = (i/n, j/n).
    """
    if red.epsilon != 0.0:
        raise ValueError("torus realization needs the periodic kernel; "
                         "set epsilon to zero")
    sup = max(max(abs(c) for c in disp) for disp in red.kernel)
    if 2 * sup >= n:
        raise ValueError(f"torus size {n} too small for kernel support {sup}")
    nf = red.n_fiber
    nsite = n * n
    mat = np.zeros((nsite * nf, nsite * nf), dtype=complex)
    g0, g1 = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    src = (g0.ravel() * n + g1.ravel())
    for (d1, d2), block in red.kernel.items():
        tgt = (((g0.ravel() + d1) % n) * n + (g1.ravel() + d2) % n)
        for a in range(nf):
            for b in range(nf):
                v = block[a, b]
                if v == 0:
                    continue
                mat[tgt * nf + a, src * nf + b] += v
    frac = np.arange(n) / n
    km = np.exp(-2j * np.pi * np.outer(frac, np.arange(n)))
    dft = np.kron(km, km) / n           # (k1 k2) x (g1 g2), row-major both
    big = np.kron(dft, np.eye(nf))
    blocked = (big @ mat @ big.conj().T).reshape(nsite, nf, nsite, nf)
    off = blocked.copy()
    idx = np.arange(nsite)
    off[idx, :, idx, :] = 0.0
    offdiag = float(np.abs(off).max())
    worst = 0.0
    for i in range(n):
        for j in range(n):
            hk = red.fiber((frac[i], frac[j]))
            worst = max(worst, float(np.abs(
                blocked[i * n + j, :, i * n + j, :] - hk).max()))
    return {"offdiag": offdiag, "fiber_match": worst}


# ---------------------------------------------------------------------------
# Bands, islands, butterfly

def fiber_bands(field, tol=DEFAULT_TOL):
    """Eigenvalues (ascending) and eigenvectors of a Hermitian fiber field."""
    field = np.asarray(field)
    defect = np.abs(field - np.swapaxes(field, -1, -2).conj()).max()
    assert defect <= 1e-10, f"fiber field is not Hermitian: defect {defect:.3e}"
    sym = 0.5 * (field + np.swapaxes(field, -1, -2).conj())
    return np.linalg.eigh(sym)


def spectral_islands(values, gap_min):
    """Group sampled energies into intervals separated by gaps > gap_min.

    Returns a list of (lo, hi) pairs in ascending order; the islands are the
    sampled approximation of the spectrum's connected components.
    """
    flat = np.sort(np.asarray(values, dtype=float).ravel())
    if flat.size == 0:
        return []
    islands = []
    lo = flat[0]
    prev = flat[0]
    for v in flat[1:]:
        if v - prev > gap_min:
            islands.append((float(lo), float(prev)))
            lo = v
        prev = v
    islands.append((float(lo), float(prev)))
    return islands


def spectral_hausdorff(points, intervals, step=1e-3):
    """Hausdorff distance between a finite energy set and a union of
    closed intervals.

    The point-to-set direction is exact; the interval-to-point direction
    discretizes each interval at the given step, so the result is accurate
    to that resolution.  Either side empty raises.
    """
    pts = np.sort(np.asarray(points, dtype=float).ravel())
    assert pts.size > 0, "no energies to compare"
    assert len(intervals) > 0, "no intervals to compare"
    d_ab = np.full(pts.shape, np.inf)
    for lo, hi in intervals:
        d_ab = np.minimum(d_ab, np.maximum.reduce([lo - pts, pts - hi,
                                                   np.zeros_like(pts)]))
    d_ba = 0.0
    for lo, hi in intervals:
        samp = np.linspace(lo, hi, max(2, int(np.ceil((hi - lo) / step)) + 1))
        pos = np.searchsorted(pts, samp)
        left = pts[np.clip(pos - 1, 0, pts.size - 1)]
        right = pts[np.clip(pos, 0, pts.size - 1)]
        near = np.minimum(np.abs(samp - left), np.abs(samp - right))
        d_ba = max(d_ba, float(near.max()))
    return {"hausdorff": float(max(d_ab.max(), d_ba)),
            "points_to_intervals": float(d_ab.max()),
            "intervals_to_points": float(d_ba)}


def interior_spectrum(op, margin, mass_min=0.9):
    """Eigenvalues of the truncated operator whose eigenvectors are not
    concentrated on the cut.

    The threshold is relative: a state is kept when its weight at distance
    > margin from the boundary is at least mass_min times the interior's
    share of all degrees of freedom.  An extended bulk state spreads close
    to uniformly, so its interior mass sits near that share; an absolute
    cutoff would discard half the bulk spectrum while this one only drops
    the edge modes spawned by the hard truncation.  Returns (kept
    eigenvalues, all eigenvalues, interior mass per eigenvector).
    """
    evals, evecs = np.linalg.eigh(0.5 * (op.matrix + op.matrix.conj().T))
    inside = op.box.interior_dof_mask(margin)
    share = inside.sum() / inside.size
    mass = np.sum(np.abs(evecs[inside, :]) ** 2, axis=0)
    return evals[mass >= mass_min * share], evals, mass


def butterfly_data(model, q_max, nk=8, tol=DEFAULT_TOL):
    """Fiber spectra for every reduced flux p/q with q <= q_max.

    Returns rows {p, q, flux, energies}; energies is the raveled eigenvalue
    sample over an nk x nk k grid, suitable for a flux-vs-energy point
    cloud.  Runtime grows like q^3 per fiber, so keep q_max moderate.
    """
    if q_max < 1:
        raise ValueError("q_max must be at least 1")
    grid = KGrid(sizes=(nk, nk))
    rows = []
    for q in range(1, q_max + 1):
        for p in range(q) if q > 1 else [0]:
            if gcd(p, q) != 1:
                continue
            red = supercell_reduce(model, p, q, epsilon=0.0, tol=tol)
            energies, _ = fiber_bands(red.fiber_field(grid), tol=tol)
            rows.append({"p": p, "q": q, "flux": p / q,
                         "energies": energies.ravel()})
    return rows
