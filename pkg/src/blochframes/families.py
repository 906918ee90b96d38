"""Sampled families over the torus: projections, unitaries, frames.

Everything in this module acts pointwise in k, so the same code serves d = 1,
2, 3; arrays carry the k axes outermost and the matrix axes last.
"""

from dataclasses import dataclass, field

import numpy as np

from .config import DEFAULT_TOL
from .kspace import KGrid


def _dagger(a):
    return np.conjugate(np.swapaxes(a, -1, -2))


def specnorm_max(a):
    """Largest spectral norm over all leading (grid) indices."""
    a = np.asarray(a)
    if a.size == 0:
        return 0.0
    if a.ndim == 2:
        return float(np.linalg.norm(a, 2))
    return float(np.linalg.svd(a, compute_uv=False).max())


def worst_index(defect_per_k):
    """Unravelled grid index of the largest entry (for error messages)."""
    d = np.asarray(defect_per_k)
    return tuple(int(i) for i in np.unravel_index(int(d.argmax()), d.shape))


# ---------------------------------------------------------------------------
# family containers


@dataclass(frozen=True)
class ProjectionFamily:
    """Sampled field of orthogonal projections P(k) on C^n.

    samples: (*grid.sizes, n, n).  Construction validates Hermiticity,
    idempotency and constancy of the trace; the common integer trace is the
    rank.
    """

    grid: KGrid
    samples: np.ndarray
    tol: object = field(default=DEFAULT_TOL, repr=False, compare=False)

    def __post_init__(self):
        P = np.ascontiguousarray(np.asarray(self.samples, dtype=np.complex128))
        object.__setattr__(self, "samples", P)
        if P.shape[: self.grid.dim] != self.grid.sizes or P.ndim != self.grid.dim + 2:
            raise ValueError(f"samples shape {P.shape} does not match grid "
                             f"{self.grid.sizes} plus two matrix axes")
        if P.shape[-1] != P.shape[-2]:
            raise ValueError("projection samples must be square matrices")
        herm = specnorm_max(P - _dagger(P))
        if herm > self.tol.hermitian:
            raise ValueError(f"family is not Hermitian: defect {herm:.3e}")
        idem = specnorm_max(P @ P - P)
        if idem > self.tol.idempotent:
            raise ValueError(f"family is not idempotent: defect {idem:.3e}")
        traces = np.einsum("...ii->...", P).real
        r = float(np.mean(traces))
        if abs(r - round(r)) > self.tol.trace_drift or \
                np.abs(traces - r).max() > self.tol.trace_drift:
            raise ValueError(
                f"rank is not constant over the grid: traces span "
                f"[{traces.min():.6f}, {traces.max():.6f}]")
        object.__setattr__(self, "_rank", int(round(r)))

    @property
    def rank(self):
        return self._rank

    @property
    def fiber_dim(self):
        return self.samples.shape[-1]


@dataclass(frozen=True)
class UnitaryFamily:
    """Sampled field of unitaries on C^m, optionally with a wrap twist.

    The twist, when present, records the continuation rule in the leading k
    axis: U(k_1 + 1, k_rest) = twist(k_rest) U(k_1, k_rest) twist(k_rest)^H.
    On the sampled grid the array itself is plainly periodic; the twist is
    metadata consumed by the interpolation routines, which must commute with
    it.  Its shape is (*grid.sizes[1:], m, m).
    """

    grid: KGrid
    samples: np.ndarray
    twist: np.ndarray = None
    tol: object = field(default=DEFAULT_TOL, repr=False, compare=False)

    def __post_init__(self):
        U = np.ascontiguousarray(np.asarray(self.samples, dtype=np.complex128))
        object.__setattr__(self, "samples", U)
        if U.shape[: self.grid.dim] != self.grid.sizes or U.ndim != self.grid.dim + 2:
            raise ValueError(f"samples shape {U.shape} does not match grid "
                             f"{self.grid.sizes} plus two matrix axes")
        m = U.shape[-1]
        if U.shape[-2] != m:
            raise ValueError("unitary samples must be square matrices")
        dev = specnorm_max(_dagger(U) @ U - np.eye(m))
        if dev > self.tol.obstruction_unitary:
            raise ValueError(f"family is not unitary: defect {dev:.3e}")
        if self.twist is not None:
            g = np.ascontiguousarray(np.asarray(self.twist, dtype=np.complex128))
            object.__setattr__(self, "twist", g)
            want = self.grid.sizes[1:] + (m, m)
            if g.shape != want:
                raise ValueError(f"twist shape {g.shape}, expected {want}")
            gdev = specnorm_max(_dagger(g) @ g - np.eye(m))
            if gdev > self.tol.obstruction_unitary:
                raise ValueError(f"twist is not unitary: defect {gdev:.3e}")

    @property
    def dim(self):
        return self.samples.shape[-1]


FRAME_KINDS = ("orthonormal-basis", "orthonormal-subframe", "parseval")


@dataclass(frozen=True)
class BlochFrame:
    """Sampled field of frames: columns of samples[k] are the frame vectors.

    samples: (*grid.sizes, n, M).  For the orthonormal kinds the Gram matrix
    is checked to be the identity at every k; a "parseval" frame carries no
    self-contained Gram constraint (its vectors are not orthonormal) and is
    validated against its projection family by :func:`validate_frame`.
    """

    grid: KGrid
    samples: np.ndarray
    kind: str = "orthonormal-basis"
    tol: object = field(default=DEFAULT_TOL, repr=False, compare=False)

    def __post_init__(self):
        Phi = np.ascontiguousarray(np.asarray(self.samples, dtype=np.complex128))
        object.__setattr__(self, "samples", Phi)
        if self.kind not in FRAME_KINDS:
            raise ValueError(f"unknown frame kind {self.kind!r}; "
                             f"expected one of {FRAME_KINDS}")
        if Phi.shape[: self.grid.dim] != self.grid.sizes or Phi.ndim != self.grid.dim + 2:
            raise ValueError(f"samples shape {Phi.shape} does not match grid "
                             f"{self.grid.sizes} plus two matrix axes")
        if self.kind != "parseval":
            g = _dagger(Phi) @ Phi
            dev = specnorm_max(g - np.eye(g.shape[-1]))
            if dev > self.tol.frame_gram:
                raise ValueError(
                    f"{self.kind} columns are not orthonormal: "
                    f"Gram defect {dev:.3e}")

    @property
    def n_vectors(self):
        return self.samples.shape[-1]

    @property
    def fiber_dim(self):
        return self.samples.shape[-2]


# ---------------------------------------------------------------------------
# validation reports


def discrete_derivative_bound(samples, grid):
    """Per-axis max of N_j ||F(k + delta_j) - F(k)||: the constant C in the
    first-difference bound C / N_j, wrap included."""
    out = []
    for j in range(grid.dim):
        diff = np.roll(samples, -1, axis=j) - samples
        out.append(grid.sizes[j] * specnorm_max(diff))
    return out


def projection_report(family):
    """Worst-case defects of a projection family, as plain floats."""
    P = family.samples
    traces = np.einsum("...ii->...", P).real
    return {
        "hermitian_defect": specnorm_max(P - _dagger(P)),
        "idempotent_defect": specnorm_max(P @ P - P),
        "trace_drift": float(np.abs(traces - family.rank).max()),
        "rank": family.rank,
        "fiber_dim": family.fiber_dim,
        "derivative_bound": discrete_derivative_bound(P, family.grid),
    }


def frame_defects(frame, family):
    """Residuals of a frame against its projection family.

    range_defect     max_k || (1 - P) Phi ||
    gram_defect      max_k || Phi^H Phi - 1 ||      (orthonormal kinds)
    parseval_defect  max_k || Phi Phi^H - P ||      (basis / parseval kinds)
    """
    Phi = frame.samples
    P = family.samples
    n = family.fiber_dim
    out = {"range_defect": specnorm_max(Phi - P @ Phi)}
    g = _dagger(Phi) @ Phi
    out["gram_defect"] = specnorm_max(g - np.eye(g.shape[-1]))
    out["parseval_defect"] = specnorm_max(Phi @ _dagger(Phi) - P)
    # Gram of any Parseval frame is itself a projection; report its defect too
    out["gram_idempotent_defect"] = specnorm_max(g @ g - g)
    assert Phi.shape[-2] == n, "frame and family live on different fibers"
    return out


def validate_frame(frame, family, tol=DEFAULT_TOL):
    """Check a frame against its family per its declared kind; return defects.

    basis:     spans Ran P exactly (orthonormal and Parseval, M = rank)
    subframe:  orthonormal inside Ran P, M <= rank
    parseval:  resolves P (Phi Phi^H = P), M arbitrary
    """
    d = frame_defects(frame, family)
    if d["range_defect"] > tol.frame_range:
        raise ValueError(f"frame leaves Ran P: defect {d['range_defect']:.3e}")
    if frame.kind in ("orthonormal-basis", "orthonormal-subframe"):
        if d["gram_defect"] > tol.frame_gram:
            raise ValueError(f"frame is not orthonormal: {d['gram_defect']:.3e}")
    if frame.kind == "orthonormal-basis":
        if frame.n_vectors != family.rank:
            raise ValueError(f"basis must carry rank = {family.rank} vectors, "
                             f"got {frame.n_vectors}")
    if frame.kind == "orthonormal-subframe" and frame.n_vectors > family.rank:
        raise ValueError("subframe cannot carry more vectors than the rank")
    if frame.kind in ("orthonormal-basis", "parseval"):
        if d["parseval_defect"] > tol.parseval:
            raise ValueError(
                f"frame does not resolve the projection: "
                f"defect {d['parseval_defect']:.3e}")
    return d


# ---------------------------------------------------------------------------
# pointwise matrix primitives


def eig_hermitian(H):
    """Eigendecomposition of stacked Hermitian matrices with fixed phases.

    Returns (w, V): w ascending, columns of V the eigenvectors.  Each column
    is rotated so its largest-modulus component (first such index on ties) is
    real and positive, making the output deterministic up to degeneracies.
    Inside a degenerate eigenvalue block no particular basis is guaranteed;
    downstream code must not rely on one.
    """
    H = np.asarray(H)
    herm = float(np.abs(H - _dagger(H)).max())
    if herm > 1e-10:
        raise ValueError(f"matrix is not Hermitian (max entry defect {herm:.3e})")
    w, V = np.linalg.eigh(H)
    mods = np.abs(V)
    lead = mods.argmax(axis=-2)
    anchor = np.take_along_axis(V, lead[..., None, :], axis=-2)
    phase = anchor / np.abs(anchor)
    return w, V * np.conjugate(phase)


def cayley_log(U, tol=DEFAULT_TOL):
    """Principal Hermitian logarithm h of stacked unitaries, e^{ih} = U.

    Uses the rational symmetrization s = i (1 - U)(1 + U)^{-1}: for unitary U
    this s is Hermitian with eigenvalues tan(theta/2), so h = 2 arctan(s) has
    spectrum in (-pi, pi) and exponentiates back to U.  Requires -1 to stay
    out of the spectrum: min singular value of 1 + U at least tol.cayley_gap.
    """
    U = np.asarray(U, dtype=np.complex128)
    m = U.shape[-1]
    eye = np.eye(m)
    sv = np.linalg.svd(eye + U, compute_uv=False)
    smin = float(sv.min())
    if smin < tol.cayley_gap:
        per_k = sv.min(axis=-1) if sv.ndim > 1 else sv
        at = worst_index(-np.atleast_1d(per_k))
        raise ValueError(
            f"spectrum touches -1 (min singular value of 1+U is {smin:.3e} "
            f"at grid index {at}); shift the branch line before taking "
            f"the logarithm")
    s = 1j * (eye - U) @ np.linalg.inv(eye + U)
    s = 0.5 * (s + _dagger(s))
    sig, V = eig_hermitian(s)
    h = (V * (2.0 * np.arctan(sig))[..., None, :]) @ _dagger(V)
    return 0.5 * (h + _dagger(h))


def expi(h):
    """e^{ih} for stacked Hermitian h, through its eigendecomposition."""
    h = np.asarray(h)
    w, V = np.linalg.eigh(h)
    return (V * np.exp(1j * w)[..., None, :]) @ _dagger(V)


def unitary_log_gapline(U, tol=DEFAULT_TOL):
    """Hermitian logarithm of a single unitary with the branch cut through
    the largest spectral gap.

    Returns (h, mu): e^{ih} = U, spec(h) inside (mu, mu + 2 pi), where e^{i mu}
    is the midpoint of the widest arc free of eigenvalues.  Fails only when
    the spectrum fills the circle too densely for the Cayley gap margin.
    """
    U = np.asarray(U, dtype=np.complex128)
    if U.ndim != 2:
        raise ValueError("gap-line logarithm acts on a single matrix")
    ev = np.linalg.eigvals(U)
    ang = np.sort(np.mod(np.angle(ev), 2.0 * np.pi))
    gaps = np.diff(np.concatenate([ang, [ang[0] + 2.0 * np.pi]]))
    j = int(gaps.argmax())
    mu = float(np.mod(ang[j] + 0.5 * gaps[j], 2.0 * np.pi))
    shift = mu + np.pi
    h = cayley_log(np.exp(-1j * shift) * U, tol=tol) + shift * np.eye(U.shape[-1])
    return h, mu


def inv_sqrt_psd(S, tol=DEFAULT_TOL, mode="eig"):
    """Inverse square root of stacked Hermitian positive definite matrices.

    mode "eig": eigendecomposition, valid for any positive definite input
    (smallest eigenvalue above tol.psd_floor).  mode "neumann-series" (alias
    "series"): binomial series in D = S - 1, requires ||D|| < 1; matches the
    eig route to tol.inv_sqrt_agree and is the form that transfers to
    operators given only by their action.
    """
    S = np.asarray(S, dtype=np.complex128)
    m = S.shape[-1]
    herm = specnorm_max(S - _dagger(S))
    assert herm <= 1e-8, f"input to inv_sqrt_psd is not Hermitian ({herm:.3e})"
    if mode == "eig":
        w, V = np.linalg.eigh(S)
        wmin = float(w.min())
        if wmin < tol.psd_floor:
            raise ValueError(
                f"matrix is not safely positive definite "
                f"(smallest eigenvalue {wmin:.3e})")
        return (V * (1.0 / np.sqrt(w))[..., None, :]) @ _dagger(V)
    if mode in ("series", "neumann-series"):
        D = S - np.eye(m)
        dn = specnorm_max(D)
        if dn >= 1.0:
            raise ValueError(f"series mode needs ||S - 1|| < 1, got {dn:.3e}")
        X = np.broadcast_to(np.eye(m), S.shape).copy()
        term = X.copy()
        coeff = 1.0
        for k in range(1, 600):
            coeff *= -(2 * k - 1) / (2.0 * k)
            term = term @ D
            inc = coeff * term
            X = X + inc
            if specnorm_max(inc) < 0.1 * tol.inv_sqrt:
                return X
        raise ValueError(f"series for S^(-1/2) did not converge (||S-1|| = {dn:.3e})")
    raise ValueError(f"unknown mode {mode!r}")


def reflect_conjugate(family):
    """The companion family Q(k) = conj(P(-k)) on the same grid.

    Entrywise conjugation composed with the grid reflection k -> -k (index
    i -> -i mod N on every axis).  Sends projections to projections and flips
    the sign of every first Chern number, which is what makes it the raw
    material for topology-cancelling doublings.
    """
    Q = family.samples
    for ax in range(family.grid.dim):
        Q = np.roll(np.flip(Q, axis=ax), 1, axis=ax)
    return ProjectionFamily(grid=family.grid, samples=np.conjugate(Q), tol=family.tol)
