"""Discretized Brillouin torus, lattice <-> momentum transforms, smoothing.

Conventions used across the library:

* the torus is parameterized as [0, 1)^d, sampled uniformly with k_j = i_j/N_j;
* all phases are written with exp(i 2 pi k . gamma), so no half-cell shifts
  appear anywhere;
* sampled fields are numpy arrays with the k axes outermost, e.g. a vector
  field is (N_1, ..., N_d, n) and a matrix family is (N_1, ..., N_d, n, n);
* frames store their vectors as columns: (N_1, ..., N_d, n, M).

Quadrature for the inverse Bloch-Floquet integral is the trapezoid rule on the
uniform grid, i.e. a plain DFT; it is spectrally accurate for the analytic
fields this library produces.
"""

from dataclasses import dataclass

import numpy as np

from .config import DEFAULT_TOL


@dataclass(frozen=True)
class KGrid:
    """Uniform periodic sampling of the torus [0, 1)^d, d in {1, 2, 3}.

    sizes holds the per-axis sample counts; point (i_1, ..., i_d) sits at
    k = (i_1/N_1, ..., i_d/N_d).  Index arithmetic is modular.
    """

    sizes: tuple

    def __post_init__(self):
        sizes = tuple(int(n) for n in self.sizes)
        object.__setattr__(self, "sizes", sizes)
        if not 1 <= len(sizes) <= 3:
            raise ValueError(f"grid dimension must be 1, 2 or 3, got {len(sizes)}")
        if any(n < 4 for n in sizes):
            raise ValueError(f"need at least 4 samples per axis, got {sizes}")

    @property
    def dim(self):
        return len(self.sizes)

    @property
    def npoints(self):
        return int(np.prod(self.sizes))

    def axis_points(self, j):
        """The 1d sample coordinates i/N_j along axis j."""
        return np.arange(self.sizes[j]) / self.sizes[j]

    def meshes(self):
        """Broadcastable coordinate arrays, one per axis."""
        return np.meshgrid(*[self.axis_points(j) for j in range(self.dim)],
                           indexing="ij", sparse=True)

    def spacing(self, j):
        return 1.0 / self.sizes[j]

    def face(self):
        """Grid of the remaining axes after freezing axis 0 (dim must be >= 2)."""
        if self.dim < 2:
            raise ValueError("a 1d grid has no transverse face grid")
        return KGrid(self.sizes[1:])


@dataclass(frozen=True)
class LatticeBox:
    """Finite truncation of the lattice Z^dim: sites with ||gamma||_inf <= radius.

    fiber_dim counts the internal components per site.  Sites are enumerated
    row-major over (gamma_1 + L, ..., gamma_dim + L); the flat index of a
    degree of freedom is site_index * fiber_dim + x.
    """

    radius: int
    fiber_dim: int = 1
    dim: int = 2

    def __post_init__(self):
        if self.radius < 0:
            raise ValueError("box radius must be nonnegative")
        if self.fiber_dim < 1:
            raise ValueError("fiber dimension must be positive")
        if not 1 <= self.dim <= 3:
            raise ValueError("box dimension must be 1, 2 or 3")

    @property
    def side(self):
        return 2 * self.radius + 1

    @property
    def n_sites(self):
        return self.side ** self.dim

    @property
    def total_dim(self):
        return self.n_sites * self.fiber_dim

    def site_coords(self):
        """(n_sites, dim) integer coordinates in enumeration order."""
        rng = np.arange(-self.radius, self.radius + 1)
        grids = np.meshgrid(*([rng] * self.dim), indexing="ij")
        return np.stack([g.ravel() for g in grids], axis=-1)

    def site_index(self, gamma):
        gamma = np.asarray(gamma, dtype=int)
        idx = 0
        for j in range(self.dim):
            c = gamma[..., j] + self.radius
            if np.any((c < 0) | (c >= self.side)):
                raise ValueError(f"site {gamma} outside the box")
            idx = idx * self.side + c
        return idx

    def interior_site_mask(self, margin):
        """Boolean mask over sites with ||gamma||_inf <= radius - margin."""
        coords = self.site_coords()
        return np.max(np.abs(coords), axis=1) <= self.radius - margin

    def interior_dof_mask(self, margin):
        return np.repeat(self.interior_site_mask(margin), self.fiber_dim)


# ---------------------------------------------------------------------------
# Bloch-Floquet transforms


def to_lattice_torus(field, k_ndim):
    """Full-torus inverse transform: w(gamma) = mean_k e^{i 2 pi k.gamma} field(k).

    gamma runs over the periodic box Z_{N_1} x ... (index j holds gamma = j
    mod N); trailing axes of ``field`` are carried along untouched.
    """
    field = np.asarray(field)
    return np.fft.ifftn(field, axes=tuple(range(k_ndim)))


def from_lattice_torus(w, k_ndim):
    """Inverse of :func:`to_lattice_torus` (an exact DFT round trip)."""
    w = np.asarray(w)
    return np.fft.fftn(w, axes=tuple(range(k_ndim)))


def inverse_bloch_floquet(field, box, grid=None):
    """Discrete inverse Bloch-Floquet transform restricted to a lattice box.

    w(gamma, x) = (1 / prod N_j) sum_k e^{i 2 pi k . gamma} field(k, x)

    ``field`` has shape (*grid.sizes, ...); the result is indexed
    [gamma_1 + L, ..., gamma_d + L, ...].  Rejects boxes whose radius exceeds
    the aliasing bound min_j N_j / 2: beyond it distinct box sites would read
    the same torus value.
    """
    field = np.asarray(field)
    d = box.dim
    sizes = field.shape[:d] if grid is None else tuple(grid.sizes)
    if grid is not None and field.shape[:d] != sizes:
        raise ValueError(f"field shape {field.shape} does not match grid {sizes}")
    nmin = min(sizes)
    if box.radius > (nmin - 1) // 2:
        raise ValueError(
            f"box radius {box.radius} exceeds the aliasing bound "
            f"{(nmin - 1) // 2} for grid sizes {sizes}: the box must hold "
            f"each residue class at most once, or opposite faces would read "
            f"the same torus coefficient")
    w = to_lattice_torus(field, d)
    gam = [np.arange(-box.radius, box.radius + 1) % sizes[j] for j in range(d)]
    return w[np.ix_(*gam)]


def bloch_floquet(w, grid, box=None):
    """Forward transform of a box-supported lattice function.

    field(k, x) = sum_{gamma in box} e^{-i 2 pi k . gamma} w(gamma, x)

    ``w`` is indexed [gamma_1 + L, ...] as produced by
    :func:`inverse_bloch_floquet`.  Implemented by separable phase-matrix
    contractions, so any grid size (not just powers of two) is handled exactly.
    """
    w = np.asarray(w)
    d = grid.dim
    out = w.astype(np.complex128, copy=True)
    for j in range(d):
        side = out.shape[0]
        radius = (side - 1) // 2
        if 2 * radius + 1 != side:
            raise ValueError("lattice function must cover a symmetric box")
        gam = np.arange(-radius, radius + 1)
        phase = np.exp(-2j * np.pi * np.outer(grid.axis_points(j), gam))
        # contract the current leading axis; the new k axis lands at the back
        out = np.tensordot(phase, out, axes=(1, 0))
        out = np.moveaxis(out, 0, d - 1)
    return out


# ---------------------------------------------------------------------------
# Fejer smoothing


def fejer_multipliers(n, width):
    """Fejer multiplier per signed frequency, in numpy fft ordering."""
    freqs = np.fft.fftfreq(n, d=1.0 / n)
    return np.clip(1.0 - np.abs(freqs) / width, 0.0, None)


def fejer_kernel(n, width):
    """Values of the order-``width`` Fejer kernel on the n-point grid.

    Nonnegative, and (1/n) sum = 1 exactly; circular convolution against it
    (with the 1/n weight) equals multiplying lattice coefficients by
    :func:`fejer_multipliers`.
    """
    vals = n * np.fft.ifft(fejer_multipliers(n, width))
    return np.real_if_close(vals, tol=1000).real


def fejer_smooth(field, width, k_ndim=None):
    """Circular convolution with the normalized d-dimensional Fejer kernel.

    ``field`` is either a sampled array with ``k_ndim`` leading k axes or any
    object with ``samples``/``grid`` attributes (the smoothed samples array is
    returned in both cases; re-validate or re-orthonormalize downstream as
    appropriate).  Requires width < min_j N_j / 2 so the kernel support fits
    the grid without wrap-around ambiguity.
    """
    if hasattr(field, "samples") and hasattr(field, "grid"):
        k_ndim = field.grid.dim
        field = field.samples
    if k_ndim is None:
        raise ValueError("k_ndim is required for plain array input")
    field = np.asarray(field)
    sizes = field.shape[:k_ndim]
    if width < 1:
        raise ValueError("width must be a positive integer")
    if width >= min(sizes) / 2:
        raise ValueError(
            f"width {width} must stay below min(N)/2 = {min(sizes) / 2}")
    coeff = to_lattice_torus(field, k_ndim)
    for j in range(k_ndim):
        mult = fejer_multipliers(sizes[j], width)
        shape = [1] * coeff.ndim
        shape[j] = sizes[j]
        coeff = coeff * mult.reshape(shape)
    return from_lattice_torus(coeff, k_ndim)


# ---------------------------------------------------------------------------
# Gram re-orthonormalization


def reorthonormalize(vectors, family, tol=DEFAULT_TOL):
    """Project near-orthonormal vector fields into Ran P and restore exact
    orthonormality through the inverse square root of their Gram matrix.

    vectors: (*sizes, n, M) with vectors as columns.  At every k the Gram
    matrix S(k) of the projected vectors must satisfy ||S - 1|| < 1; the
    output columns are phi . S^{-1/2}, exactly orthonormal and inside Ran P.

    Returns a BlochFrame with kind "orthonormal-basis" when M equals the rank
    of the family and "orthonormal-subframe" otherwise.
    """
    from .families import BlochFrame, inv_sqrt_psd, _dagger

    vectors = np.asarray(vectors, dtype=np.complex128)
    P = family.samples
    phi = P @ vectors
    gram = _dagger(phi) @ phi
    m = gram.shape[-1]
    dev = np.linalg.svd(gram - np.eye(m), compute_uv=False).max(axis=-1)
    worst = float(dev.max())
    if worst >= 1.0:
        idx = np.unravel_index(int(dev.argmax()), dev.shape)
        raise ValueError(
            f"Gram matrix too far from identity (||S-1|| = {worst:.3e} at "
            f"grid index {idx}); vectors do not span a stable frame there")
    out = phi @ inv_sqrt_psd(gram, tol=tol)
    kind = "orthonormal-basis" if m == family.rank else "orthonormal-subframe"
    return BlochFrame(grid=family.grid, samples=out, kind=kind)
