"""Command line client for the lineage placement service.

Every subcommand speaks the HTTP API.  With --server it talks to a running
instance; otherwise it mounts the app in-process, so single-machine use
needs no daemon.  Exit codes: 0 success, 2 usage/config error, 3 numeric
failure, 1 anything else.
"""

from __future__ import annotations

import sys

import click
import httpx


def _post_in_process(path: str, payload: dict) -> httpx.Response:
    """Serve one request against the app mounted in this process."""
    import asyncio

    from .service.app import create_app

    async def go() -> httpx.Response:
        transport = httpx.ASGITransport(app=create_app())
        async with httpx.AsyncClient(
            transport=transport, base_url="http://covit.internal", timeout=None
        ) as client:
            return await client.post(path, json=payload)

    return asyncio.run(go())


def _call(server: str | None, path: str, payload: dict) -> dict:
    try:
        if server:
            with httpx.Client(base_url=server, timeout=None) as client:
                resp = client.post(path, json=payload)
        else:
            resp = _post_in_process(path, payload)
    except httpx.HTTPError as exc:
        click.echo(f"error: cannot reach service: {exc}", err=True)
        sys.exit(1)
    if resp.is_success:
        return resp.json()
    kind, message = "internal", resp.text
    try:
        detail = resp.json().get("detail")
        if isinstance(detail, dict):
            kind = detail.get("kind", "internal")
            message = detail.get("message", message)
        elif detail is not None:  # pydantic validation errors
            kind = "config"
            message = str(detail)
    except ValueError:
        pass
    click.echo(f"error ({kind}): {message}", err=True)
    sys.exit({"config": 2, "numeric": 3}.get(kind, 1))


def _overrides(sets: tuple[str, ...], seed: int | None) -> dict:
    out: dict = {}
    for item in sets:
        if "=" not in item:
            raise click.UsageError(f"--set expects KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        out[key.strip()] = value.strip()
    if seed is not None:
        out["seed"] = seed
    return out


def _common(fn):
    fn = click.option("--set", "sets", multiple=True, metavar="KEY=VALUE",
                      help="Override one config key.")(fn)
    fn = click.option("--config", "config_file", type=click.Path(), default=None,
                      help="key=value config file.")(fn)
    fn = click.option("--seed", type=int, default=None, help="Run seed.")(fn)
    return fn


@click.group()
@click.option("--server", envvar="COVIT_SERVER", default=None,
              help="Base URL of a running service; default runs in-process.")
@click.pass_context
def main(ctx: click.Context, server: str | None) -> None:
    """Viral genome lineage placement toolkit."""
    ctx.obj = server


@main.command()
@click.option("--out", "out_dir", required=True, type=click.Path(), help="Output directory.")
@_common
@click.pass_obj
def synth(server, out_dir, sets, config_file, seed) -> None:
    """Generate a synthetic labeled corpus (FASTA + labels TSV)."""
    body = {"out_dir": out_dir, "config_file": config_file, "overrides": _overrides(sets, seed)}
    res = _call(server, "/synth", body)
    click.echo(f"wrote {res['genomes']} genomes in {res['classes']} classes to {res['out_dir']}")


@main.command()
@click.option("--fasta", required=True, type=click.Path(), help="Input FASTA file.")
@click.option("--out", required=True, type=click.Path(), help="Output feature file.")
@_common
@click.pass_obj
def extract(server, fasta, out, sets, config_file, seed) -> None:
    """Extract fragment features from genomes into a CVFT container."""
    body = {"fasta": fasta, "out": out, "config_file": config_file,
            "overrides": _overrides(sets, seed)}
    res = _call(server, "/extract", body)
    click.echo(f"extracted {res['written']} genomes (skipped {len(res['skipped'])})", err=True)
    for gid in res["skipped"]:
        click.echo(f"skipped (shorter than k): {gid}", err=True)
    click.echo(res["features"])


@main.command()
@click.option("--features", required=True, type=click.Path(), help="CVFT feature file.")
@click.option("--labels", required=True, type=click.Path(), help="Two-column labels TSV.")
@click.option("--out", "out_dir", required=True, type=click.Path(), help="Run directory.")
@click.option("--layerwise", default=None, metavar="L:E,L:E",
              help="Greedy layer-wise schedule, e.g. 2:60,2:120.")
@click.option("--transfer-from", default=None, type=click.Path(),
              help="Checkpoint whose encoder to reuse with a fresh head.")
@click.option("--classes", "num_classes", default=None, type=int,
              help="Expected class count (validated against the labels).")
@_common
@click.pass_obj
def train(server, features, labels, out_dir, layerwise, transfer_from, num_classes,
          sets, config_file, seed) -> None:
    """Train a model and write checkpoint + training log."""
    body = {
        "features": features, "labels": labels, "out_dir": out_dir,
        "layerwise": layerwise, "transfer_from": transfer_from,
        "num_classes": num_classes, "config_file": config_file,
        "overrides": _overrides(sets, seed),
    }
    res = _call(server, "/train", body)
    click.echo(
        f"trained {res['epochs']} epochs over {res['num_classes']} classes: "
        f"best val loss {res['best_val_loss']:.4f}, best val top-1 {res['best_val_top1']:.3f}"
    )
    click.echo(res["checkpoint"])


@main.command()
@click.option("--fasta", required=True, type=click.Path(), help="Genomes to classify.")
@click.option("--checkpoint", required=True, type=click.Path(), help="Trained model.")
@click.option("--top", "top_n", default=5, show_default=True, help="Ranks per genome.")
@click.option("--out", default=None, type=click.Path(),
              help="Write predictions TSV here instead of stdout.")
@_common
@click.pass_obj
def classify(server, fasta, checkpoint, top_n, out, sets, config_file, seed) -> None:
    """Rank lineages for each genome; TSV on stdout unless --out is given."""
    body = {"fasta": fasta, "checkpoint": checkpoint, "top_n": top_n, "out": out,
            "config_file": config_file, "overrides": _overrides(sets, seed)}
    res = _call(server, "/classify", body)
    for gid in res["skipped"]:
        click.echo(f"skipped (shorter than k): {gid}", err=True)
    if out:
        click.echo(res["out"])
    else:
        click.echo("genome_id\trank\tclass_name\tprobability")
        for pred in res["predictions"]:
            for row in pred["ranking"]:
                click.echo(
                    f"{pred['genome_id']}\t{row['rank']}\t{row['class_name']}\t{row['probability']!r}"
                )


@main.command("eval")
@click.option("--fasta", required=True, type=click.Path(), help="Labeled genomes.")
@click.option("--labels", required=True, type=click.Path(), help="Two-column labels TSV.")
@click.option("--checkpoint", required=True, type=click.Path(), help="Trained model.")
@click.option("--ambiguity", default="0", show_default=True,
              help="Comma-separated masking rates, e.g. 0,0.08,0.16,0.32.")
@click.option("--out", default=None, type=click.Path(), help="Write report CSV here.")
@_common
@click.pass_obj
def eval_cmd(server, fasta, labels, checkpoint, ambiguity, out, sets, config_file, seed) -> None:
    """Evaluate accuracy under increasing base ambiguity."""
    try:
        rates = [float(r) for r in ambiguity.split(",") if r.strip() != ""]
    except ValueError:
        raise click.UsageError(f"--ambiguity expects comma-separated numbers, got {ambiguity!r}")
    body = {"fasta": fasta, "labels": labels, "checkpoint": checkpoint, "rates": rates,
            "out": out, "config_file": config_file, "overrides": _overrides(sets, seed)}
    res = _call(server, "/eval", body)
    click.echo("ambiguity_rate  placement_rate  top1    top2    top5")
    for r in res["reports"]:
        click.echo(
            f"{r['ambiguity_rate']:<14g}  {r['placement_rate']:<14g}  "
            f"{r['top1']:<6.3f}  {r['top2']:<6.3f}  {r['top5']:<6.3f}"
        )
    if out:
        click.echo(res["out"])


@main.command()
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8000, show_default=True, type=int)
def serve(host: str, port: int) -> None:
    """Run the HTTP service."""
    import uvicorn

    from .service.app import create_app

    uvicorn.run(create_app(), host=host, port=port)


if __name__ == "__main__":
    main()
