"""HTTP facade over the construction library.

Every operation is a POST carrying a pydantic model and returns JSON.
Array payloads (frames, Wannier seeds) travel as base64-encoded binary
containers, so the wire format and the on-disk format are byte-identical;
the CLI is a thin client that decodes and writes them.  Certificates pass
through untouched from the library.

Domain errors (bad windows, obstructed constructions, hypothesis failures)
surface as 422 with the library's message; anything else is a plain 500.
"""

import base64
from typing import Optional

import numpy as np
from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse
from pydantic import BaseModel, Field, model_validator

from . import io
from .config import DEFAULT_TOL
from .families import validate_frame
from .hofstadter import butterfly_data, fiber_bands, supercell_reduce
from .kspace import KGrid
from .magframes import magnetic_pipeline
from .models import (HoppingModel, band_projection, chain_model, harper_model,
                     stacked_chern_model, stacked_model, stacked_pair_model,
                     two_band_model)
from .framesyn import (construct_bloch_basis, construct_parseval_frame,
                       construct_subframe)
from .wannier import (decay_fit, effective_hamiltonian, frame_to_wannier,
                      interpolate_bands)

SERVICE_VERSION = "1"

_BUILTINS = {
    "harper": harper_model,
    "two-band": two_band_model,
    "chain": chain_model,
    "stacked": stacked_model,
    "stacked-chern": stacked_chern_model,
    "stacked-pair": stacked_pair_model,
}


class ModelSpec(BaseModel):
    """A model either by builtin name plus parameters or as inline data."""

    builtin: Optional[str] = None
    params: dict = Field(default_factory=dict)
    data: Optional[dict] = None

    @model_validator(mode="after")
    def _one_source(self):
        if (self.builtin is None) == (self.data is None):
            raise ValueError("give exactly one of builtin or data")
        if self.builtin is not None and self.builtin not in _BUILTINS:
            raise ValueError(f"unknown builtin {self.builtin!r}; "
                             f"have {sorted(_BUILTINS)}")
        return self

    def resolve(self):
        if self.data is not None:
            return HoppingModel.from_dict(self.data)
        return _BUILTINS[self.builtin](**self.params)


class BandSelection(BaseModel):
    """Band rows by index or by open energy window; at most one of them.

    With neither given, the lower half of the spectrum is selected (at
    least one band), which matches the usual insulator setup for the
    bundled models.
    """

    bands: Optional[list[int]] = None
    window: Optional[tuple[float, float]] = None

    @model_validator(mode="after")
    def _at_most_one(self):
        if self.bands is not None and self.window is not None:
            raise ValueError("select bands either by index or by window")
        return self

    def pick(self, h_samples, grid, n_fiber, tol=DEFAULT_TOL):
        if self.window is not None:
            return band_projection(h_samples, grid, window=tuple(self.window),
                                   tol=tol)
        bands = self.bands
        if bands is None:
            bands = list(range(max(1, n_fiber // 2)))
        return band_projection(h_samples, grid, bands=bands, tol=tol)


class BuildRequest(BaseModel):
    builtin: str
    params: dict = Field(default_factory=dict)
    p: Optional[int] = None
    q: Optional[int] = None
    epsilon: Optional[float] = None
    box_radius: Optional[int] = None


class ConstructRequest(BaseModel):
    model: ModelSpec
    grid: list[int]
    mode: str = "basis"
    select: BandSelection = Field(default_factory=BandSelection)
    seed: int = 7
    decay_radius: Optional[int] = None


class ScanRequest(BaseModel):
    model: ModelSpec
    p: int = 0
    q: int = 1
    n_k: int = 64


class ButterflyRequest(BaseModel):
    model: ModelSpec
    q_max: int
    n_k: int = 8


class PerturbRequest(BaseModel):
    model: ModelSpec
    p: int
    q: int
    epsilon: float
    window: tuple[float, float]
    mode: str = "parseval"
    box: int = 12
    k_grid: int = 64
    trim: int = 1
    seed: int = 7
    original_gauge: bool = False


class WannierRequest(BaseModel):
    model: ModelSpec
    grid: list[int]
    mode: str = "basis"
    select: BandSelection = Field(default_factory=BandSelection)
    radius: Optional[int] = None
    seed: int = 7


class InterpolateRequest(BaseModel):
    model: ModelSpec
    coarse: list[int]
    fine: list[int]
    select: BandSelection = Field(default_factory=BandSelection)
    mode: str = "basis"
    seed: int = 7


app = FastAPI(title="blochframes", version=SERVICE_VERSION)


@app.exception_handler(ValueError)
async def _domain_error(request: Request, exc: ValueError):
    return JSONResponse(status_code=422, content={"detail": str(exc)})


def _b64(raw):
    return base64.b64encode(raw).decode("ascii")


def _jsonable(obj):
    """Deep-convert certificates to plain JSON types (numpy included)."""
    import json

    return json.loads(json.dumps(obj, cls=io._NumpyEncoder, default=str))


_CONSTRUCTORS = {
    "basis": construct_bloch_basis,
    "subframe": construct_subframe,
    "parseval": construct_parseval_frame,
}


def _construct(family, mode, seed):
    if mode not in _CONSTRUCTORS:
        raise ValueError(f"unknown mode {mode!r}; have {sorted(_CONSTRUCTORS)}")
    return _CONSTRUCTORS[mode](family, seed=seed)


def _grid(sizes):
    return KGrid(sizes=tuple(int(n) for n in sizes))


def _decay_certificate(frame, radius):
    """IDFT the frame and fit every column's shell decay."""
    if radius is None:
        radius = (min(frame.grid.sizes) - 1) // 2
    w, box, winfo = frame_to_wannier(frame, radius=radius)
    fits = []
    per_site = w.reshape(box.n_sites, box.fiber_dim, -1)
    for col in range(per_site.shape[-1]):
        fits.append(decay_fit(per_site[..., col], box))
    return w, box, {"radius": int(radius), "fits": fits,
                    "reconstruction_residual": winfo["reconstruction_residual"]}


@app.get("/health")
def health():
    return {"status": "ok", "version": SERVICE_VERSION}


@app.post("/model/build")
def model_build(req: BuildRequest):
    spec = ModelSpec(builtin=req.builtin, params=req.params)
    model = spec.resolve()
    data = model.to_dict()
    for key in ("p", "q", "epsilon", "box_radius"):
        value = getattr(req, key)
        if value is not None:
            data[key] = value
    return {"model": data, "n_sites": model.n_sites,
            "support_radius": model.support_radius}


@app.post("/frame/construct")
def frame_construct(req: ConstructRequest):
    model = req.model.resolve()
    grid = _grid(req.grid)
    h = model.fiber_samples(grid)
    family, band_info = req.select.pick(h, grid, model.n_sites)
    frame, certificate = _construct(family, req.mode, req.seed)
    report = validate_frame(frame, family)
    _, _, decay = _decay_certificate(frame, req.decay_radius)
    certificate = dict(certificate)
    certificate["validation"] = report
    certificate["bands"] = band_info
    certificate["decay"] = decay
    raw, header = io.container_bytes(
        frame.samples, "frame", frame.grid.sizes,
        meta={"frame_kind": frame.kind, "n_vectors": frame.n_vectors,
              "fiber_dim": frame.fiber_dim})
    return {"certificate": _jsonable(certificate), "container_b64": _b64(raw),
            "header": header}


@app.post("/bands/scan")
def bands_scan(req: ScanRequest):
    model = req.model.resolve()
    red = supercell_reduce(model, req.p, req.q, epsilon=0.0)
    grid = _grid((req.n_k,) * model.dim)
    energies, _ = fiber_bands(red.fiber_field(grid), tol=DEFAULT_TOL)
    flat = energies.reshape(-1, energies.shape[-1])
    ranges = [[float(flat[:, j].min()), float(flat[:, j].max())]
              for j in range(flat.shape[-1])]
    kpoints = np.stack(np.meshgrid(
        *[np.arange(n) / n for n in grid.sizes], indexing="ij"),
        axis=-1).reshape(-1, grid.dim)
    return {"k": kpoints.tolist(), "energies": flat.tolist(),
            "band_ranges": ranges, "flux": {"p": req.p, "q": req.q}}


@app.post("/butterfly")
def butterfly(req: ButterflyRequest):
    model = req.model.resolve()
    rows = butterfly_data(model, req.q_max, nk=req.n_k)
    return {"rows": [{"p": r["p"], "q": r["q"], "flux": r["flux"],
                      "energies": np.asarray(r["energies"]).tolist()}
                     for r in rows]}


@app.post("/magnetic/perturb")
def magnetic_perturb(req: PerturbRequest):
    model = req.model.resolve()
    frame = magnetic_pipeline(model, req.p, req.q, req.epsilon,
                              tuple(req.window), mode=req.mode,
                              radius=req.box, k_grid=req.k_grid,
                              trim=req.trim, seed=req.seed,
                              original_gauge=req.original_gauge)
    sides = (2 * frame.box.radius + 1,) * frame.box.dim
    payload = frame.seeds.reshape(sides + (frame.box.fiber_dim, -1))
    meta = {"frame_kind": frame.kind, "epsilon": frame.epsilon,
            "theta": frame.theta, "window": list(frame.window),
            "gauge_phase": frame.gauge_phase is not None,
            "box": {"radius": frame.box.radius,
                    "fiber_dim": frame.box.fiber_dim, "dim": frame.box.dim}}
    raw, header = io.container_bytes(payload, "wannier", sides, meta=meta)
    out = {"certificate": _jsonable(frame.certificate),
           "admissible": bool(frame.certificate["admissible"]),
           "container_b64": _b64(raw), "header": header}
    if frame.gauge_phase is not None:
        gauge = frame.gauge_phase.reshape(sides + (frame.box.fiber_dim, 1))
        graw, _ = io.container_bytes(
            gauge, "wannier", sides,
            meta={"frame_kind": "gauge-phase", "box": meta["box"]})
        out["gauge_b64"] = _b64(graw)
    return out


@app.post("/wannier/emit")
def wannier_emit(req: WannierRequest):
    model = req.model.resolve()
    grid = _grid(req.grid)
    h = model.fiber_samples(grid)
    family, band_info = req.select.pick(h, grid, model.n_sites)
    frame, certificate = _construct(family, req.mode, req.seed)
    w, box, decay = _decay_certificate(frame, req.radius)
    sides = (2 * box.radius + 1,) * box.dim
    payload = w.reshape(sides + (box.fiber_dim, -1))
    meta = {"frame_kind": frame.kind,
            "box": {"radius": box.radius, "fiber_dim": box.fiber_dim,
                    "dim": box.dim}}
    raw, header = io.container_bytes(payload, "wannier", sides, meta=meta)
    certificate = dict(certificate)
    certificate["bands"] = band_info
    certificate["decay"] = decay
    return {"certificate": _jsonable(certificate), "container_b64": _b64(raw),
            "header": header}


@app.post("/bands/interpolate")
def bands_interpolate(req: InterpolateRequest):
    """Occupied bands on the fine grid via the coarse effective Hamiltonian.

    The comparison column is the directly diagonalized model on the fine
    grid restricted to the selected bands; for a Parseval frame the one
    near-zero null level per k is dropped before comparing.
    """
    if req.mode == "subframe":
        raise ValueError("subframe compressions carry no spectral identity; "
                         "interpolate with mode basis or parseval")
    model = req.model.resolve()
    coarse = _grid(req.coarse)
    fine_sizes = tuple(int(n) for n in req.fine)
    h = model.fiber_samples(coarse)
    family, band_info = req.select.pick(h, coarse, model.n_sites)
    frame, _ = _construct(family, req.mode, req.seed)
    heff, hinfo = effective_hamiltonian(h, frame)
    fine_field = interpolate_bands(heff, fine_sizes)
    interp = np.linalg.eigvalsh(fine_field)
    m = family.rank
    if interp.shape[-1] > m:
        # drop the frame's internal null levels, smallest in modulus
        order = np.argsort(np.abs(interp), axis=-1)
        keep = np.take_along_axis(interp, order[..., -m:], axis=-1)
        interp = np.sort(keep, axis=-1)
    fine_grid = _grid(fine_sizes)
    h_fine = model.fiber_samples(fine_grid)
    family_fine, _ = req.select.pick(h_fine, fine_grid, model.n_sites)
    proj = family_fine.samples
    comp = proj @ h_fine @ proj
    levels = np.linalg.eigvalsh(
        0.5 * (comp + np.swapaxes(comp, -1, -2).conj()))
    order = np.argsort(np.abs(levels), axis=-1)
    direct = np.sort(np.take_along_axis(levels, order[..., -m:], axis=-1),
                     axis=-1)
    err = float(np.abs(interp - direct).max())
    kpoints = np.stack(np.meshgrid(
        *[np.arange(n) / n for n in fine_sizes], indexing="ij"),
        axis=-1).reshape(-1, len(fine_sizes))
    return {"k": kpoints.tolist(),
            "energies": interp.reshape(len(kpoints), -1).tolist(),
            "max_band_error": err,
            "heff": _jsonable(hinfo), "bands": _jsonable(band_info)}
