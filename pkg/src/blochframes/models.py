"""Finite-hopping lattice models and their Bloch fibers.

A model is a finite set of sites in the unit cell plus finitely many hopping
blocks T(gamma) indexed by integer displacements; its Bloch fiber is the
trigonometric polynomial h(k) = sum_gamma e^{-i 2 pi k . gamma} T(gamma).
Finite support makes h entire in k, so every Fourier sum here is exact.
"""

from dataclasses import dataclass, field

import numpy as np

from .config import DEFAULT_TOL
from .families import ProjectionFamily, _dagger, eig_hermitian, worst_index
from .kspace import KGrid

SX = np.array([[0.0, 1.0], [1.0, 0.0]], dtype=complex)
SY = np.array([[0.0, -1j], [1j, 0.0]], dtype=complex)
SZ = np.array([[1.0, 0.0], [0.0, -1.0]], dtype=complex)


@dataclass(frozen=True)
class HoppingModel:
    """Sites in [0,1]^dim plus hopping blocks over integer displacements.

    hoppings maps a displacement tuple gamma to the n_sites x n_sites block
    T(gamma; y, y'); self-adjointness requires T(-gamma) = T(gamma)^H, which
    is validated on construction.  Site positions only matter once magnetic
    phases enter; the periodic fiber ignores them.
    """

    dim: int
    sites: np.ndarray
    hoppings: dict
    name: str = ""
    tol: object = field(default=DEFAULT_TOL, repr=False, compare=False)

    def __post_init__(self):
        if not 1 <= self.dim <= 3:
            raise ValueError("model dimension must be 1, 2 or 3")
        sites = np.atleast_2d(np.asarray(self.sites, dtype=float))
        if sites.shape[1] != self.dim:
            raise ValueError(f"site coordinates must have {self.dim} components")
        object.__setattr__(self, "sites", sites)
        n = sites.shape[0]
        hop = {}
        for g, block in self.hoppings.items():
            g = tuple(int(c) for c in g)
            if len(g) != self.dim:
                raise ValueError(f"displacement {g} has wrong dimension")
            b = np.asarray(block, dtype=complex)
            if b.shape != (n, n):
                raise ValueError(f"hopping block at {g} must be {n}x{n}, "
                                 f"got {b.shape}")
            hop[g] = b
        for g, b in hop.items():
            gneg = tuple(-c for c in g)
            partner = hop.get(gneg)
            if partner is None or np.abs(partner - b.conj().T).max() > self.tol.lattice_hermitian:
                raise ValueError(
                    f"hoppings are not self-adjoint: block at {gneg} must "
                    f"equal the adjoint of the block at {g}")
        object.__setattr__(self, "hoppings", hop)

    @property
    def n_sites(self):
        return self.sites.shape[0]

    @property
    def support_radius(self):
        if not self.hoppings:
            return 0
        return max(max(abs(c) for c in g) for g in self.hoppings)

    def displacements(self):
        return sorted(self.hoppings)

    def fiber_samples(self, grid):
        """h(k) on the grid: (*sizes, n, n), Hermitian at every k."""
        if grid.dim != self.dim:
            raise ValueError(f"grid dimension {grid.dim} does not match "
                             f"model dimension {self.dim}")
        n = self.n_sites
        h = np.zeros(grid.sizes + (n, n), dtype=complex)
        meshes = grid.meshes()
        for g, block in self.hoppings.items():
            phase = np.zeros((), dtype=complex)
            acc = sum(meshes[j] * g[j] for j in range(self.dim))
            phase = np.exp(-2j * np.pi * acc)
            h += phase[..., None, None] * block
        return h

    def to_dict(self):
        return {
            "dim": self.dim,
            "name": self.name,
            "sites": self.sites.tolist(),
            "hoppings": [
                {
                    "displacement": list(g),
                    "re": b.real.tolist(),
                    "im": b.imag.tolist(),
                }
                for g, b in sorted(self.hoppings.items())
            ],
        }

    @classmethod
    def from_dict(cls, data):
        hop = {}
        for item in data["hoppings"]:
            g = tuple(int(c) for c in item["displacement"])
            hop[g] = np.asarray(item["re"], dtype=float) + \
                1j * np.asarray(item["im"], dtype=float)
        return cls(dim=int(data["dim"]), sites=np.asarray(data["sites"]),
                   hoppings=hop, name=data.get("name", ""))


def _accumulate(hop, g, block):
    g = tuple(g)
    if g in hop:
        hop[g] = hop[g] + block
    else:
        hop[g] = np.asarray(block, dtype=complex).copy()


def _two_band_blocks(dim, axes_xy, mass_axis_terms, mu):
    """Common assembly for the sigma-matrix models.

    axes_xy: pairs (axis, pauli) contributing sin(2 pi k_axis) * pauli.
    mass_axis_terms: pairs (axis, coeff) contributing coeff*cos(2 pi k_axis)
    to the sigma_z mass; the constant part of the mass is mu.
    """
    hop = {}
    zero = (0,) * dim
    _accumulate(hop, zero, mu * SZ)
    for axis, pauli in axes_xy:
        e = [0] * dim
        e[axis] = 1
        # sin(2 pi k) = (i/2) e^{-i2pik} - (i/2) e^{+i2pik}
        _accumulate(hop, tuple(e), 0.5j * pauli)
        _accumulate(hop, tuple(-c for c in e), -0.5j * pauli)
    for axis, coeff in mass_axis_terms:
        e = [0] * dim
        e[axis] = 1
        _accumulate(hop, tuple(e), 0.5 * coeff * SZ)
        _accumulate(hop, tuple(-c for c in e), 0.5 * coeff * SZ)
    return hop


def harper_model():
    """Square-lattice nearest-neighbor model: h(k) = 2cos 2pik1 + 2cos 2pik2."""
    one = np.array([[1.0]], dtype=complex)
    hop = {(1, 0): one, (-1, 0): one, (0, 1): one, (0, -1): one}
    return HoppingModel(dim=2, sites=[[0.0, 0.0]], hoppings=hop, name="harper")


def two_band_model(mu=1.0):
    """h(k) = sin2pik1 sx + sin2pik2 sy + (mu - cos2pik1 - cos2pik2) sz.

    Lower band carries |Chern| = 1 for 0 < |mu| < 2 and 0 for |mu| > 2;
    gapped whenever mu is not in {-2, 0, 2}.
    """
    hop = _two_band_blocks(2, [(0, SX), (1, SY)], [(0, -1.0), (1, -1.0)], mu)
    return HoppingModel(dim=2, sites=[[0.0, 0.0], [0.0, 0.0]], hoppings=hop,
                        name=f"two-band(mu={mu})")


def chain_model(mu=1.5):
    """d=1 two-band chain: h(k) = sin2pik sx + (mu - cos2pik) sz."""
    hop = _two_band_blocks(1, [(0, SX)], [(0, -1.0)], mu)
    return HoppingModel(dim=1, sites=[[0.0], [0.0]], hoppings=hop,
                        name=f"chain(mu={mu})")


def stacked_model(mu=3.0, t=0.5):
    """d=3 stack of trivial planar layers with mass dispersion along k3.

    h(k) = sin2pik1 sx + sin2pik2 sy + (mu - cos2pik1 - cos2pik2 + t cos2pik3) sz.
    For mu - 2 - |t| > 0 every planar slice is in the trivial phase, so all
    three Chern numbers vanish while the family genuinely depends on k3.
    """
    assert mu - 2.0 - abs(t) > 0, "parameters leave the trivial gapped regime"
    hop = _two_band_blocks(3, [(0, SX), (1, SY)],
                           [(0, -1.0), (1, -1.0), (2, t)], mu)
    return HoppingModel(dim=3, sites=[[0.0] * 3, [0.0] * 3], hoppings=hop,
                        name=f"stacked(mu={mu},t={t})")


def stacked_chern_model(mu=1.0, t=0.3):
    """d=3 model whose (k2,k3) faces carry Chern number while the other two
    pairs of axes stay trivial.

    h(k) = sin2pik2 sx + sin2pik3 sy + (mu - cos2pik2 - cos2pik3 + t cos2pik1) sz.
    For 0 < mu - |t| and mu + |t| < 2 every (k2,k3) slice is a planar model in
    the |Chern| = 1 phase; slices mixing k1 have planar images of degree 0.
    Exercises the twisted-periodicity branch of the d=3 constructions.
    """
    assert 0.0 < mu - abs(t) and mu + abs(t) < 2.0, \
        "parameters leave the Chern phase"
    hop = _two_band_blocks(3, [(1, SX), (2, SY)],
                           [(1, -1.0), (2, -1.0), (0, t)], mu)
    return HoppingModel(dim=3, sites=[[0.0] * 3, [0.0] * 3], hoppings=hop,
                        name=f"stacked-chern(mu={mu},t={t})")


def layered_model(a, b, name=None):
    """Decoupled direct sum of two models on the same lattice: block-diagonal
    fibers, valence spaces add."""
    if a.dim != b.dim:
        raise ValueError(f"cannot layer models of dimension {a.dim} and {b.dim}")
    na, nb = a.n_sites, b.n_sites
    hop = {}
    for g in set(a.hoppings) | set(b.hoppings):
        blk = np.zeros((na + nb, na + nb), dtype=complex)
        if g in a.hoppings:
            blk[:na, :na] = a.hoppings[g]
        if g in b.hoppings:
            blk[na:, na:] = b.hoppings[g]
        hop[g] = blk
    sites = [list(s) for s in a.sites] + [list(s) for s in b.sites]
    return HoppingModel(dim=a.dim, sites=sites, hoppings=hop,
                        name=name or f"layered({a.name},{b.name})")


def stacked_pair_model(mu1=1.0, mu2=3.0):
    """Two decoupled planar two-band layers: rank-2 valence space with total
    Chern = c(mu1) + c(mu2); defaults give |c| = 1.

    The two lower bands sit strictly below the two upper bands, so the
    energy window E < 0 (or band indices {0,1}) selects them cleanly.
    """
    return layered_model(two_band_model(mu1), two_band_model(mu2),
                         name=f"stacked-pair(mu1={mu1},mu2={mu2})")


MODEL_PRESETS = {
    "harper": harper_model,
    "two-band": two_band_model,
    "chain": chain_model,
    "stacked": stacked_model,
    "stacked-chern": stacked_chern_model,
    "stacked-pair": stacked_pair_model,
}


# ---------------------------------------------------------------------------
# band structure and band projections


def band_structure(h_samples):
    """Sorted band energies and phase-fixed eigenvectors of sampled fibers."""
    h = np.asarray(h_samples)
    h = 0.5 * (h + _dagger(h))
    return eig_hermitian(h)


def band_projection(h_samples, grid, bands=None, window=None, tol=DEFAULT_TOL):
    """Spectral projection of sampled fibers onto selected bands.

    Select either by sorted band indices (``bands``, iterable of ints) or by
    an open energy window ``window = (a, b)``.  The selected count must be the
    same at every k; a window crossing a band reports the two k-points where
    the counts differ.  Returns (ProjectionFamily, info) with the minimal
    spectral gaps below and above the selection in ``info``.
    """
    if (bands is None) == (window is None):
        raise ValueError("select bands either by index or by energy window")
    w, V = band_structure(h_samples)
    nb = w.shape[-1]
    if bands is not None:
        idx = sorted(int(b) for b in bands)
        if not idx or idx[0] < 0 or idx[-1] >= nb:
            raise ValueError(f"band indices {idx} outside 0..{nb - 1}")
        sel = np.zeros(nb, dtype=bool)
        sel[idx] = True
        sel = np.broadcast_to(sel, w.shape)
    else:
        a, b = float(window[0]), float(window[1])
        sel = (w > a) & (w < b)
        counts = sel.sum(axis=-1)
        if counts.min() != counts.max():
            lo = worst_index(-counts)
            hi = worst_index(counts)
            raise ValueError(
                f"window ({a}, {b}) selects {counts[lo]} bands at grid index "
                f"{lo} but {counts[hi]} at {hi}; choose a window inside a "
                f"spectral gap")
        if counts.flat[0] == 0:
            raise ValueError(f"window ({a}, {b}) selects no bands")
    count = int(sel.sum(axis=-1).flat[0])
    Vsel = np.swapaxes(V, -1, -2)[sel].reshape(w.shape[:-1] + (count, w.shape[-1]))
    Vsel = np.swapaxes(Vsel, -1, -2)
    P = Vsel @ _dagger(Vsel)
    P = 0.5 * (P + _dagger(P))
    wsel = w[sel].reshape(w.shape[:-1] + (count,))
    wrest = w[~sel].reshape(w.shape[:-1] + (nb - count,))
    below = wrest < wsel[..., :1]
    gap_below = np.inf
    gap_above = np.inf
    if np.any(below):
        gap_below = float((wsel[..., 0] - np.where(below, wrest, -np.inf).max(axis=-1)).min())
    if np.any(~below):
        gap_above = float((np.where(~below, wrest, np.inf).min(axis=-1) - wsel[..., -1]).min())
    info = {
        "count": count,
        "gap_below": gap_below,
        "gap_above": gap_above,
        "selected_range": (float(wsel.min()), float(wsel.max())),
    }
    family = ProjectionFamily(grid=grid, samples=P, tol=tol)
    assert family.rank == count, "projection rank disagrees with selection"
    return family, info
