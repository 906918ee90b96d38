"""Binary container, JSON sidecars, and CSV emitters.

Container layout, version 1:

    bytes 0..3    magic ``BFC1``
    bytes 4..7    header length H as unsigned 32-bit little-endian
    bytes 8..8+H  UTF-8 JSON header
    rest          complex64 little-endian payload, C order

The header records the payload kind, the outer sampling axes (k axes for
sampled fields, site axes for lattice functions), the full payload shape,
and a free-form ``meta`` dict.  Certificates and family sidecars are plain
JSON files next to the container.  Storage is complex64 by contract, so a
round trip costs about seven digits; loaders therefore validate with
thresholds floored at :data:`STORAGE_FLOOR` instead of the construction
defaults.
"""

import csv
import dataclasses
import json
from pathlib import Path

import numpy as np

from .config import DEFAULT_TOL
from .families import BlochFrame, ProjectionFamily, UnitaryFamily
from .kspace import KGrid, LatticeBox
from .models import HoppingModel

_MAGIC = b"BFC1"

# complex64 keeps ~7.2 significant digits; validation of loaded data cannot
# ask for more than roundoff accumulated over a matrix product or two.
STORAGE_FLOOR = 5e-6

_LOAD_KEYS = ("hermitian", "idempotent", "trace_drift", "unitary",
              "obstruction_unitary", "frame_range", "frame_gram")


def storage_tol(tol=DEFAULT_TOL):
    """Tolerances for data that went through complex64 storage."""
    bumps = {k: max(getattr(tol, k), STORAGE_FLOOR) for k in _LOAD_KEYS}
    return dataclasses.replace(tol, **bumps)


# ---------------------------------------------------------------------------
# container


def container_bytes(array, kind, sizes, meta=None):
    """Serialize one complex array; returns the raw container bytes."""
    a = np.ascontiguousarray(np.asarray(array, dtype=np.complex128))
    sizes = [int(n) for n in sizes]
    assert tuple(a.shape[: len(sizes)]) == tuple(sizes), \
        f"outer axes {a.shape[:len(sizes)]} do not match declared {sizes}"
    header = {
        "format": "bloch-container",
        "version": 1,
        "kind": str(kind),
        "dims": len(sizes),
        "sizes": sizes,
        "shape": list(a.shape),
        "dtype": "complex64-le",
        "meta": meta if meta is not None else {},
    }
    blob = json.dumps(header, sort_keys=True, cls=_NumpyEncoder).encode("utf-8")
    return (_MAGIC + np.array(len(blob), dtype="<u4").tobytes() + blob
            + a.astype("<c8").tobytes()), header


def write_container(path, array, kind, sizes, meta=None):
    """Write one complex array; returns the header that was stored."""
    raw, header = container_bytes(array, kind, sizes, meta=meta)
    Path(path).write_bytes(raw)
    return header


def parse_container(raw, origin="container"):
    """Decode container bytes to (payload as complex128, header)."""
    if raw[:4] != _MAGIC:
        raise ValueError(f"{origin}: not a bloch container (magic {raw[:4]!r})")
    hlen = int(np.frombuffer(raw[4:8], dtype="<u4")[0])
    if 8 + hlen > len(raw):
        raise ValueError(f"{origin}: truncated header")
    header = json.loads(raw[8:8 + hlen].decode("utf-8"))
    payload = np.frombuffer(raw[8 + hlen:], dtype="<c8")
    shape = tuple(int(n) for n in header["shape"])
    if payload.size != int(np.prod(shape)):
        raise ValueError(f"{origin}: payload holds {payload.size} values, "
                         f"header shape {shape} needs {int(np.prod(shape))}")
    return payload.reshape(shape).astype(np.complex128), header


def read_container(path):
    """Read back (payload as complex128, header)."""
    return parse_container(Path(path).read_bytes(), origin=str(path))


# ---------------------------------------------------------------------------
# families and frames


def _sidecar(path):
    return Path(str(path) + ".json")


def write_family(path, family):
    """Container plus the JSON sidecar ``<path>.json``.

    The sidecar repeats the structural facts a reader needs before touching
    the payload: family flavor, rank, ambient dimension, twist presence.  A
    twisted unitary family stores the twist in ``<path>.twist``.
    """
    if isinstance(family, ProjectionFamily):
        side = {"family": "projection", "rank": family.rank,
                "ambient_dim": family.fiber_dim, "twist": False}
    elif isinstance(family, UnitaryFamily):
        side = {"family": "unitary", "rank": family.dim,
                "ambient_dim": family.dim,
                "twist": family.twist is not None}
    else:
        raise TypeError(f"cannot serialize {type(family).__name__} as a family")
    write_container(path, family.samples, "family", family.grid.sizes,
                    meta=side)
    if isinstance(family, UnitaryFamily) and family.twist is not None:
        write_container(str(path) + ".twist", family.twist, "family-twist",
                        family.grid.sizes[1:], meta={})
    write_json(_sidecar(path), side)
    return side


def read_family(path, tol=None):
    """Load a family written by :func:`write_family`."""
    tol = storage_tol() if tol is None else tol
    samples, header = read_container(path)
    side = header["meta"]
    grid = KGrid(sizes=tuple(header["sizes"]))
    if side.get("family") == "projection":
        return ProjectionFamily(grid=grid, samples=samples, tol=tol)
    if side.get("family") == "unitary":
        twist = None
        if side.get("twist"):
            twist, _ = read_container(str(path) + ".twist")
        return UnitaryFamily(grid=grid, samples=samples, twist=twist, tol=tol)
    raise ValueError(f"{path}: sidecar names no known family flavor: {side}")


def write_frame(path, frame):
    meta = {"frame_kind": frame.kind, "n_vectors": frame.n_vectors,
            "fiber_dim": frame.fiber_dim}
    return write_container(path, frame.samples, "frame", frame.grid.sizes,
                           meta=meta)


def read_frame(path, tol=None):
    tol = storage_tol() if tol is None else tol
    samples, header = read_container(path)
    grid = KGrid(sizes=tuple(header["sizes"]))
    return BlochFrame(grid=grid, samples=samples,
                      kind=header["meta"]["frame_kind"], tol=tol)


# ---------------------------------------------------------------------------
# lattice payloads


def _box_sides(box):
    return (2 * box.radius + 1,) * box.dim


def write_wannier(path, w, box, meta=None):
    """Lattice functions on a box: w is (dim_total, n_funcs) or a bare
    (dim_total,) vector; stored with site axes outermost."""
    w = np.asarray(w, dtype=complex)
    if w.ndim == 1:
        w = w[:, None]
    sides = _box_sides(box)
    assert w.shape[0] == box.total_dim, \
        f"vector length {w.shape[0]} does not fill the box ({box.total_dim})"
    payload = w.reshape(sides + (box.fiber_dim, w.shape[1]))
    meta = dict(meta or {})
    meta["box"] = {"radius": box.radius, "fiber_dim": box.fiber_dim,
                   "dim": box.dim}
    return write_container(path, payload, "wannier", sides, meta=meta)


def read_wannier(path):
    """Returns (w as (dim_total, n_funcs), box, meta)."""
    payload, header = read_container(path)
    b = header["meta"]["box"]
    box = LatticeBox(radius=int(b["radius"]), fiber_dim=int(b["fiber_dim"]),
                     dim=int(b["dim"]))
    w = payload.reshape(box.total_dim, payload.shape[-1])
    return w, box, header["meta"]


def write_magnetic_frame(path, frame):
    """Seed container for a generalized frame; the certificate is the
    caller's to place (CLI puts it in a JSON file next to the container).
    A recorded gauge pullback phase lands in ``<path>.gauge``."""
    meta = {"frame_kind": frame.kind, "epsilon": frame.epsilon,
            "theta": frame.theta, "window": list(frame.window),
            "gauge_phase": frame.gauge_phase is not None}
    header = write_wannier(path, frame.seeds, frame.box, meta=meta)
    if frame.gauge_phase is not None:
        write_wannier(str(path) + ".gauge", frame.gauge_phase, frame.box,
                      meta={"frame_kind": "gauge-phase"})
    return header


def read_magnetic_frame(path, certificate=None):
    """Load seeds written by :func:`write_magnetic_frame`.

    The container does not carry the certificate; pass the dict from the
    certificate JSON to reattach it, else it comes back empty.
    """
    from .magframes import GeneralizedWannierFrame

    w, box, meta = read_wannier(path)
    gauge = None
    if meta.get("gauge_phase"):
        gauge, _, _ = read_wannier(str(path) + ".gauge")
        gauge = gauge[:, 0]
    return GeneralizedWannierFrame(
        kind=meta["frame_kind"], epsilon=float(meta["epsilon"]),
        theta=float(meta["theta"]), window=tuple(meta["window"]), box=box,
        seeds=w, certificate=dict(certificate or {}), gauge_phase=gauge)


# ---------------------------------------------------------------------------
# JSON and CSV


class _NumpyEncoder(json.JSONEncoder):
    def default(self, obj):
        if isinstance(obj, np.integer):
            return int(obj)
        if isinstance(obj, np.floating):
            return float(obj)
        if isinstance(obj, np.bool_):
            return bool(obj)
        if isinstance(obj, (complex, np.complexfloating)):
            return {"re": float(obj.real), "im": float(obj.imag)}
        if isinstance(obj, np.ndarray):
            return obj.tolist()
        return super().default(obj)


def write_json(path, obj):
    text = json.dumps(obj, indent=2, sort_keys=True, cls=_NumpyEncoder)
    Path(path).write_text(text + "\n")


def read_json(path):
    return json.loads(Path(path).read_text())


def write_band_csv(path, kpoints, energies):
    """Rows ``k_1..k_d, E_1..E_M``, one line per k point."""
    k = np.asarray(kpoints, dtype=float)
    if k.ndim == 1:
        k = k[:, None]
    e = np.asarray(energies, dtype=float)
    if e.ndim == 1:
        e = e[:, None]
    assert k.shape[0] == e.shape[0], "one energy row per k row"
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow([f"k{j + 1}" for j in range(k.shape[1])]
                    + [f"E{j + 1}" for j in range(e.shape[1])])
        for krow, erow in zip(k, e):
            wr.writerow([f"{x:.12g}" for x in krow]
                        + [f"{x:.12g}" for x in erow])


def write_butterfly_csv(path, points):
    """Flux-versus-energy point cloud: rows ``p, q, flux, E``."""
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["p", "q", "flux", "E"])
        for p, q, energy in points:
            for e in np.atleast_1d(energy):
                wr.writerow([int(p), int(q), f"{p / q:.12g}", f"{e:.12g}"])


def write_field_csv(path, array, grid):
    """Long-format dump for small sampled fields: grid indices, the flat
    index into the trailing axes, then re and im."""
    a = np.asarray(array, dtype=complex)
    assert a.shape[: grid.dim] == grid.sizes, "field does not sit on the grid"
    trail = a.shape[grid.dim:]
    flat = a.reshape(grid.sizes + (-1,))
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow([f"i{j + 1}" for j in range(grid.dim)]
                    + ["component", "re", "im"])
        for idx in np.ndindex(*grid.sizes):
            for c in range(flat.shape[-1]):
                z = flat[idx + (c,)]
                wr.writerow([*idx, c, f"{z.real:.12g}", f"{z.imag:.12g}"])
    return trail


# ---------------------------------------------------------------------------
# model files


_MODEL_EXTRAS = ("p", "q", "epsilon", "box_radius")


def write_model_file(path, model, **extras):
    """Model JSON: hopping data plus optional run parameters.

    Recognized extras: p, q (flux numerator and denominator), epsilon,
    box_radius.  They ride along for the magnetic commands so a single file
    can describe a complete run.
    """
    data = model.to_dict()
    for key in _MODEL_EXTRAS:
        if extras.get(key) is not None:
            data[key] = extras[key]
    unknown = set(extras) - set(_MODEL_EXTRAS)
    if unknown:
        raise TypeError(f"unknown model-file extras {sorted(unknown)}")
    write_json(path, data)


def read_model_file(path):
    """Returns (HoppingModel, extras dict with any run parameters found)."""
    data = read_json(path)
    extras = {k: data[k] for k in _MODEL_EXTRAS if k in data}
    return HoppingModel.from_dict(data), extras
