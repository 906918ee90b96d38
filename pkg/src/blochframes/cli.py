"""Command-line client for the construction service.

Every command talks to the FastAPI app through httpx: in process by
default, or over the wire when --server (or BLOCHFRAMES_SERVER) points at
a running instance.  Commands decode the base64 containers from the
responses and place them next to the JSON certificates under --out, so the
files on disk are exactly what the service produced.
"""

import base64
import json
from pathlib import Path

import click
import httpx

from . import io

_TIMEOUT = 3600.0


def _post_inprocess(path, payload):
    """Drive the ASGI app directly; no socket, no running server."""
    import asyncio

    from .service import app

    async def go():
        transport = httpx.ASGITransport(app=app)
        async with httpx.AsyncClient(transport=transport,
                                     base_url="http://blochframes.local",
                                     timeout=_TIMEOUT) as client:
            return await client.post(path, json=payload)

    return asyncio.run(go())


def _post(ctx, path, payload):
    server = ctx.obj.get("server")
    if server:
        with httpx.Client(base_url=server, timeout=_TIMEOUT) as client:
            resp = client.post(path, json=payload)
    else:
        resp = _post_inprocess(path, payload)
    if resp.status_code != 200:
        try:
            detail = resp.json().get("detail", resp.text)
        except (ValueError, AttributeError):
            detail = resp.text
        raise click.ClickException(f"{path} failed ({resp.status_code}): "
                                   f"{detail}")
    return resp.json()


def _model_payload(path):
    model, extras = io.read_model_file(path)
    return {"data": model.to_dict()}, extras


def _parse_flux(text):
    try:
        p, q = text.split("/")
        return int(p), int(q)
    except ValueError:
        raise click.BadParameter(f"flux must look like p/q, got {text!r}")


def _parse_grid(text):
    try:
        return [int(n) for n in text.split(",")]
    except ValueError:
        raise click.BadParameter(f"grid must be N[,N[,N]], got {text!r}")


def _parse_pair(text, name):
    try:
        a, b = text.split(",")
        return float(a), float(b)
    except ValueError:
        raise click.BadParameter(f"{name} must be two comma-separated "
                                 f"numbers, got {text!r}")


def _selection(bands, window):
    if bands is not None and window is not None:
        raise click.BadParameter("give --bands or --window, not both")
    sel = {}
    if bands is not None:
        sel["bands"] = [int(b) for b in bands.split(",")]
    if window is not None:
        sel["window"] = list(_parse_pair(window, "--window"))
    return sel


def _write_container_b64(out_dir, name, b64):
    raw = base64.b64decode(b64)
    path = Path(out_dir) / name
    path.write_bytes(raw)
    return path


def _prepare_out(out):
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


@click.group()
@click.option("--server", envvar="BLOCHFRAMES_SERVER", default=None,
              help="URL of a running service; defaults to in-process.")
@click.pass_context
def main(ctx, server):
    """Bloch frames, Wannier functions, and magnetic perturbations."""
    ctx.ensure_object(dict)
    ctx.obj["server"] = server


@main.command("serve")
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8000, show_default=True, type=int)
def serve(host, port):
    """Run the HTTP service."""
    import uvicorn

    from .service import app

    uvicorn.run(app, host=host, port=port)


@main.group()
def model():
    """Model files."""


@model.command("build")
@click.option("--builtin", required=True,
              help="harper, two-band, chain, stacked, stacked-chern, "
                   "stacked-pair")
@click.option("--param", "params", multiple=True,
              help="Constructor parameter as name=value; repeatable.")
@click.option("--flux", default=None, help="Optional flux p/q to record.")
@click.option("--eps", default=None, type=float,
              help="Optional perturbation strength to record.")
@click.option("--box", default=None, type=int,
              help="Optional box radius to record.")
@click.option("--out", required=True, type=click.Path(dir_okay=False),
              help="Model JSON file to write.")
@click.pass_context
def model_build(ctx, builtin, params, flux, eps, box, out):
    """Write a model file for one of the bundled constructors."""
    kv = {}
    for item in params:
        if "=" not in item:
            raise click.BadParameter(f"--param needs name=value, got {item!r}")
        name, value = item.split("=", 1)
        try:
            kv[name] = float(value)
        except ValueError:
            kv[name] = value
    payload = {"builtin": builtin, "params": kv}
    if flux is not None:
        payload["p"], payload["q"] = _parse_flux(flux)
    if eps is not None:
        payload["epsilon"] = eps
    if box is not None:
        payload["box_radius"] = box
    resp = _post(ctx, "/model/build", payload)
    io.write_json(out, resp["model"])
    click.echo(f"wrote {out}: {builtin} with {resp['n_sites']} site(s), "
               f"hopping radius {resp['support_radius']}")


@main.command("frame")
@click.argument("action", type=click.Choice(["construct"]))
@click.option("--mode", type=click.Choice(["basis", "subframe", "parseval"]),
              default="basis", show_default=True)
@click.option("--model", "model_file", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--grid", required=True, help="Samples per axis, N[,N[,N]].")
@click.option("--bands", default=None, help="Band indices, comma separated.")
@click.option("--window", default=None, help="Energy window a,b.")
@click.option("--seed", default=7, show_default=True, type=int)
@click.option("--out", required=True, type=click.Path(file_okay=False))
@click.pass_context
def frame(ctx, action, mode, model_file, grid, bands, window, seed, out):
    """Construct a Bloch frame and its certificate."""
    spec, _ = _model_payload(model_file)
    payload = {"model": spec, "grid": _parse_grid(grid), "mode": mode,
               "select": _selection(bands, window), "seed": seed}
    resp = _post(ctx, "/frame/construct", payload)
    out_dir = _prepare_out(out)
    path = _write_container_b64(out_dir, "frame.bfc", resp["container_b64"])
    io.write_json(out_dir / "certificate.json", resp["certificate"])
    cert = resp["certificate"]
    betas = [round(f["beta"], 3) for f in cert["decay"]["fits"]]
    click.echo(f"wrote {path} and certificate.json")
    click.echo(f"kind {resp['header']['meta']['frame_kind']}, "
               f"{resp['header']['meta']['n_vectors']} vector(s), "
               f"decay rates {betas}")


@main.group()
def bands():
    """Band structure products."""


@bands.command("scan")
@click.option("--model", "model_file", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--flux", default=None,
              help="Flux p/q; defaults to the model file's, else 0/1.")
@click.option("--nk", default=64, show_default=True, type=int)
@click.option("--out", required=True, type=click.Path(file_okay=False))
@click.pass_context
def bands_scan(ctx, model_file, flux, nk, out):
    """Fiber bands on a k grid at one rational flux."""
    spec, extras = _model_payload(model_file)
    if flux is not None:
        p, q = _parse_flux(flux)
    else:
        p, q = int(extras.get("p", 0)), int(extras.get("q", 1))
    resp = _post(ctx, "/bands/scan",
                 {"model": spec, "p": p, "q": q, "n_k": nk})
    out_dir = _prepare_out(out)
    io.write_band_csv(out_dir / "bands.csv", resp["k"], resp["energies"])
    io.write_json(out_dir / "band_ranges.json",
                  {"flux": resp["flux"], "band_ranges": resp["band_ranges"]})
    click.echo(f"wrote bands.csv ({len(resp['k'])} k points, "
               f"{len(resp['band_ranges'])} bands) at flux {p}/{q}")


@bands.command("interpolate")
@click.option("--model", "model_file", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--coarse", required=True, type=int,
              help="Coarse samples per axis.")
@click.option("--fine", required=True, type=int,
              help="Fine samples per axis; multiple of --coarse.")
@click.option("--mode", type=click.Choice(["basis", "parseval"]),
              default="basis", show_default=True)
@click.option("--bands", "band_list", default=None)
@click.option("--window", default=None)
@click.option("--seed", default=7, show_default=True, type=int)
@click.option("--out", required=True, type=click.Path(file_okay=False))
@click.pass_context
def bands_interpolate(ctx, model_file, coarse, fine, mode, band_list, window,
                      seed, out):
    """Interpolate the effective Hamiltonian bands coarse to fine."""
    spec, _ = _model_payload(model_file)
    model_dim = len(json.loads(Path(model_file).read_text())
                    .get("sites", [[0]])[0])
    payload = {"model": spec, "coarse": [coarse] * model_dim,
               "fine": [fine] * model_dim, "mode": mode,
               "select": _selection(band_list, window), "seed": seed}
    resp = _post(ctx, "/bands/interpolate", payload)
    out_dir = _prepare_out(out)
    io.write_band_csv(out_dir / "bands_fine.csv", resp["k"],
                      resp["energies"])
    io.write_json(out_dir / "interpolation.json",
                  {"max_band_error": resp["max_band_error"],
                   "heff": resp["heff"]})
    click.echo(f"wrote bands_fine.csv; max band error vs direct "
               f"diagonalization {resp['max_band_error']:.3e}")


@main.command("butterfly")
@click.option("--model", "model_file", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--q-max", "q_max", required=True, type=int)
@click.option("--nk", default=8, show_default=True, type=int)
@click.option("--out", required=True, type=click.Path(file_okay=False))
@click.pass_context
def butterfly(ctx, model_file, q_max, nk, out):
    """Flux-versus-energy point cloud over all reduced fluxes."""
    spec, _ = _model_payload(model_file)
    resp = _post(ctx, "/butterfly",
                 {"model": spec, "q_max": q_max, "n_k": nk})
    out_dir = _prepare_out(out)
    points = [(r["p"], r["q"], r["energies"]) for r in resp["rows"]]
    io.write_butterfly_csv(out_dir / "butterfly.csv", points)
    click.echo(f"wrote butterfly.csv ({len(points)} flux values, "
               f"q up to {q_max})")


@main.command("magnetic")
@click.argument("action", type=click.Choice(["perturb"]))
@click.option("--model", "model_file", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--flux", default=None, help="Rational base flux p/q.")
@click.option("--eps", default=None, type=float,
              help="Perturbation strength; default from the model file.")
@click.option("--window", required=True, help="Energy window E-,E+.")
@click.option("--mode", type=click.Choice(["basis", "parseval"]),
              default="parseval", show_default=True)
@click.option("--box", default=None, type=int,
              help="Box radius; default from the model file, else 12.")
@click.option("--kgrid", default=64, show_default=True, type=int)
@click.option("--trim", default=1, show_default=True, type=int)
@click.option("--seed", default=7, show_default=True, type=int)
@click.option("--original-gauge", is_flag=True, default=False,
              help="Attach the phase pulling seeds back to the unreduced "
                   "gauge.")
@click.option("--out", required=True, type=click.Path(file_okay=False))
@click.pass_context
def magnetic(ctx, action, model_file, flux, eps, window, mode, box, kgrid,
             trim, seed, original_gauge, out):
    """Generalized Wannier frame for a magnetically perturbed model."""
    spec, extras = _model_payload(model_file)
    if flux is not None:
        p, q = _parse_flux(flux)
    elif "p" in extras and "q" in extras:
        p, q = int(extras["p"]), int(extras["q"])
    else:
        raise click.BadParameter("no --flux given and none in the model file")
    if eps is None:
        eps = float(extras.get("epsilon", 0.0))
    if box is None:
        box = int(extras.get("box_radius", 12))
    payload = {"model": spec, "p": p, "q": q, "epsilon": eps,
               "window": list(_parse_pair(window, "--window")), "mode": mode,
               "box": box, "k_grid": kgrid, "trim": trim, "seed": seed,
               "original_gauge": original_gauge}
    resp = _post(ctx, "/magnetic/perturb", payload)
    out_dir = _prepare_out(out)
    path = _write_container_b64(out_dir, "frame.bfc", resp["container_b64"])
    if "gauge_b64" in resp:
        _write_container_b64(out_dir, "frame.bfc.gauge", resp["gauge_b64"])
    io.write_json(out_dir / "certificate.json", resp["certificate"])
    cert = resp["certificate"]
    res = cert["residuals"]
    click.echo(f"wrote {path} and certificate.json")
    click.echo(f"admissible: {resp['admissible']}; reconstruction "
               f"{res['reconstruction']:.3e}, slowest decay rate "
               f"{res['min_decay_rate']:.3f}")


@main.command("wannier")
@click.argument("action", type=click.Choice(["emit"]))
@click.option("--model", "model_file", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--grid", required=True, help="Samples per axis, N[,N[,N]].")
@click.option("--mode", type=click.Choice(["basis", "subframe", "parseval"]),
              default="basis", show_default=True)
@click.option("--bands", default=None)
@click.option("--window", default=None)
@click.option("--radius", default=None, type=int,
              help="Box radius; defaults to the aliasing bound.")
@click.option("--seed", default=7, show_default=True, type=int)
@click.option("--out", required=True, type=click.Path(file_okay=False))
@click.pass_context
def wannier(ctx, action, model_file, grid, mode, bands, window, radius, seed,
            out):
    """Emit Wannier functions and their decay certificate."""
    spec, _ = _model_payload(model_file)
    payload = {"model": spec, "grid": _parse_grid(grid), "mode": mode,
               "select": _selection(bands, window), "radius": radius,
               "seed": seed}
    resp = _post(ctx, "/wannier/emit", payload)
    out_dir = _prepare_out(out)
    path = _write_container_b64(out_dir, "wannier.bfc", resp["container_b64"])
    io.write_json(out_dir / "decay.json", resp["certificate"]["decay"])
    io.write_json(out_dir / "certificate.json", resp["certificate"])
    betas = [round(f["beta"], 3) for f in resp["certificate"]["decay"]["fits"]]
    click.echo(f"wrote {path}, decay.json, certificate.json")
    click.echo(f"decay rates {betas}, torus reconstruction residual "
               f"{resp['certificate']['decay']['reconstruction_residual']:.3e}")


if __name__ == "__main__":
    main()
