"""Wannier functions from Bloch frames, effective Hamiltonians, interpolation.

The torus side of the story lives in :mod:`framesyn`; this module moves the
results to the lattice ((generalized) Wannier functions and their decay) and
back (reconstruction residuals, effective band operators on coarse grids that
trigonometric interpolation refines).
"""

import numpy as np

from .config import DEFAULT_TOL
from .families import _dagger, eig_hermitian, specnorm_max
from .kspace import LatticeBox, bloch_floquet, inverse_bloch_floquet, \
    to_lattice_torus, from_lattice_torus


def frame_to_wannier(frame, radius=None):
    """Wannier functions of a Bloch frame on a symmetric lattice box.

    w_a(gamma, x) = (1 / prod N_j) sum_k e^{i 2 pi k . gamma} Xi_a(k, x)

    Returns (w, box, info): w indexed [gamma_1 + L, ..., x, a], the box, and a
    report with the torus reconstruction residual (how much of the frame the
    truncated functions re-synthesize; exact up to rounding when the radius
    saturates the aliasing bound) and the captured mass fraction per column.
    """
    grid = frame.grid
    if radius is None:
        radius = (min(grid.sizes) - 1) // 2
    box = LatticeBox(radius=radius, fiber_dim=frame.fiber_dim, dim=grid.dim)
    w = inverse_bloch_floquet(frame.samples, box, grid=grid)
    rec = bloch_floquet(w, grid)
    resid = float(np.abs(rec - frame.samples).max())
    full = to_lattice_torus(frame.samples, grid.dim)
    ax = tuple(range(grid.dim)) + (grid.dim,)
    total = np.sum(np.abs(full) ** 2, axis=ax)
    captured = np.sum(np.abs(w) ** 2, axis=ax)
    info = {
        "reconstruction_residual": resid,
        "mass_fraction": (captured / np.maximum(total, 1e-300)).tolist(),
        "radius": int(radius),
    }
    return w, box, info


def wannier_shell_profile(w, box):
    """Sup-norm of the lattice function on each shell ||gamma||_inf = r."""
    d = box.dim
    mag = np.abs(w).reshape((box.side,) * d + (-1,)).max(axis=-1)
    coords = box.site_coords()
    rad = np.max(np.abs(coords), axis=1).reshape((box.side,) * d)
    out = np.zeros(box.radius + 1)
    for r in range(box.radius + 1):
        out[r] = mag[rad == r].max()
    return out


def decay_fit(w, box, r_min=2, r_max=None):
    """Exponential decay rate of a boxed lattice function, by least squares.

    Fits log(shell sup-norm) against the shell radius over r_min <= r <= r_max.
    The default window [2, radius // 2] skips the central peak and its onset
    curvature at the near end and stays clear of truncation effects at the far
    end (small boxes widen it to keep at least four shells).  Reports the rate
    beta (positive = decay), the fit quality R^2, and a boundary flag raised
    when the outermost shell sits far above the fitted line, the signature of
    wrap-around or box-edge contamination.
    """
    if r_max is None:
        r_max = max(box.radius // 2, r_min + 3)
    r_max = min(r_max, box.radius)
    if r_max - r_min < 1:
        raise ValueError(f"fit window [{r_min}, {r_max}] is too narrow; "
                         f"enlarge the box")
    shells = wannier_shell_profile(w, box)
    r = np.arange(r_min, r_max + 1)
    vals = np.maximum(shells[r_min:r_max + 1], 1e-300)
    slope, intercept = np.polyfit(r, np.log(vals), 1)
    pred = intercept + slope * r
    ss_res = float(np.sum((np.log(vals) - pred) ** 2))
    ss_tot = float(np.sum((np.log(vals) - np.log(vals).mean()) ** 2))
    r2 = 1.0 - ss_res / max(ss_tot, 1e-300)
    edge = float(np.log(max(shells[box.radius], 1e-300)))
    edge_pred = float(intercept + slope * box.radius)
    boundary_flag = bool(edge > edge_pred + 2.0)
    return {
        "beta": float(-slope),
        "r_squared": float(r2),
        "intercept": float(intercept),
        "fit_range": (int(r_min), int(r_max)),
        "shells": shells.tolist(),
        "boundary_flag": boundary_flag,
    }


def effective_hamiltonian(h_samples, frame, tol=DEFAULT_TOL):
    """Compression h_eff(k) = Xi(k)^H h(k) Xi(k) of the fiber Hamiltonian.

    For an orthonormal basis of Ran P the spectrum of h_eff reproduces the
    occupied bands exactly; a Parseval frame of M = m + 1 vectors adds one
    vanishing eigenvalue per k (the frame's internal null direction), and
    the nonzero part again matches the occupied bands.  Both statements are
    verified here, with the occupied reference spectrum extracted from
    P h P, P = Xi Xi^H.  Sub-frames compress to fewer levels than m; no
    spectral identity holds, so only the field is returned for them.

    Returns (h_eff, info); info carries the spectral residual and zero-mode
    statistics where applicable.
    """
    h = np.asarray(h_samples, dtype=complex)
    h = 0.5 * (h + _dagger(h))
    xi = frame.samples
    heff = _dagger(xi) @ h @ xi
    heff = 0.5 * (heff + _dagger(heff))
    M = frame.n_vectors
    info = {"kind": frame.kind, "n_vectors": M}
    if frame.kind == "orthonormal-subframe":
        info["spectral_identity"] = "not applicable (proper compression)"
        return heff, info

    P = xi @ _dagger(xi)
    levels = np.linalg.eigvalsh(0.5 * (P @ h @ P + _dagger(P @ h @ P)))
    order = np.argsort(np.abs(levels), axis=-1)
    n = levels.shape[-1]
    m = M if frame.kind == "orthonormal-basis" else M - 1
    small = np.take_along_axis(levels, order[..., :n - m], axis=-1)
    occ = np.sort(np.take_along_axis(levels, order[..., n - m:], axis=-1),
                  axis=-1)
    scale = float(np.abs(levels).max())
    if float(np.abs(small).max()) > tol.zero_mode_rel * scale:
        raise ValueError(
            "cannot separate the occupied spectrum from the structural kernel "
            f"of P h P: a kernel candidate reaches {np.abs(small).max():.3e} "
            f"against scale {scale:.3e}; an occupied band touches zero")
    ev = np.linalg.eigvalsh(heff)
    if frame.kind == "parseval":
        zorder = np.argsort(np.abs(ev), axis=-1)
        zero = np.take_along_axis(ev, zorder[..., :M - m], axis=-1)
        nonzero = np.sort(np.take_along_axis(ev, zorder[..., M - m:], axis=-1),
                          axis=-1)
        info["zero_mode_count"] = M - m
        info["zero_mode_max"] = float(np.abs(zero).max())
        if info["zero_mode_max"] > tol.zero_mode_rel * scale:
            raise ValueError(
                f"Parseval frame lacks its vanishing mode: smallest "
                f"eigenvalue {info['zero_mode_max']:.3e} at scale {scale:.3e}")
    else:
        nonzero = np.sort(ev, axis=-1)
    resid = float(np.abs(nonzero - occ).max())
    info["spectrum_residual"] = resid
    if resid > tol.heff_spectrum:
        raise ValueError(f"effective spectrum misses the occupied bands by "
                         f"{resid:.3e}")
    return heff, info


def _pad_axis(coeff, axis, n_coarse, n_fine):
    """Relocate lattice coefficients of one axis into a finer frequency grid.

    Even n_coarse carries a shared +-Nyquist bin; its weight is split in half
    between the two now-distinct frequencies, which keeps Hermitian fields
    Hermitian and reproduces the coarse samples exactly."""
    freqs = np.fft.fftfreq(n_coarse, d=1.0 / n_coarse).astype(int)
    shape = list(coeff.shape)
    shape[axis] = n_fine
    out = np.zeros(shape, dtype=complex)
    src = np.moveaxis(coeff, axis, 0)
    dst = np.moveaxis(out, axis, 0)
    for i, g in enumerate(freqs):
        if n_coarse % 2 == 0 and i == n_coarse // 2:
            dst[g % n_fine] += 0.5 * src[i]
            dst[-g % n_fine] += 0.5 * src[i]
        else:
            dst[g % n_fine] += src[i]
    return out


def interpolate_bands(field, fine_sizes, tol=DEFAULT_TOL):
    """Trigonometric interpolation of a sampled matrix field onto a finer grid.

    Each coarse size must divide the matching fine size, so the coarse
    samples are a subset of the fine ones; the interpolant restricts to them
    exactly (checked).  Intended for effective Hamiltonian fields, whose
    band structure on the fine grid converges spectrally in the coarse size.
    """
    field = np.asarray(field, dtype=complex)
    fine_sizes = tuple(int(n) for n in fine_sizes)
    d = len(fine_sizes)
    coarse = field.shape[:d]
    for nc, nf in zip(coarse, fine_sizes):
        if nf % nc != 0:
            raise ValueError(f"fine size {nf} is not a multiple of coarse "
                             f"size {nc}; coarse points must be re-sampled")
    coeff = to_lattice_torus(field, d)
    for j in range(d):
        coeff = _pad_axis(coeff, j, coarse[j], fine_sizes[j])
    out = from_lattice_torus(coeff, d)
    herm = specnorm_max(out - _dagger(out))
    if herm < 1e-9:
        out = 0.5 * (out + _dagger(out))
    sel = tuple(slice(None, None, nf // nc)
                for nc, nf in zip(coarse, fine_sizes))
    consistency = float(np.abs(out[sel] - field).max())
    assert consistency < tol.interp_consistency, \
        f"interpolant fails to reproduce coarse samples ({consistency:.3e})"
    return out
