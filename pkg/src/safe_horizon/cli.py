"""Command-line client. Requests go to the HTTP service, in-process unless --server is given."""
from __future__ import annotations

import csv
import json
import sys
import warnings

import click
import httpx

from .experiments import SUMMARY_COLUMNS


def _client(server: str | None):
    if server:
        return httpx.Client(base_url=server, timeout=None)
    with warnings.catch_warnings():
        # starlette nags about its httpx transport; harmless in-process
        warnings.simplefilter("ignore")
        from fastapi.testclient import TestClient

    from .service import app

    return TestClient(app)


def _call(ctx, method: str, url: str, payload=None):
    with _client(ctx.obj["server"]) as client:
        resp = client.request(method, url, json=payload)
    if resp.status_code >= 400:
        detail = resp.json().get("detail", resp.text) if resp.headers.get("content-type", "").startswith(
            "application/json") else resp.text
        raise click.ClickException(f"{resp.status_code}: {detail}")
    return resp.json()


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise click.BadParameter(f"expected comma-separated numbers, got {text!r}")


def _write_csv(rows, columns=None):
    if not rows:
        return
    writer = csv.DictWriter(sys.stdout, fieldnames=columns or list(rows[0]), extrasaction="ignore",
                            lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)


@click.group()
@click.option("--server", default=None, help="Base URL of a running service; default runs in-process.")
@click.pass_context
def main(ctx, server):
    ctx.obj = {"server": server}


@main.command("sample-size")
@click.option("--epsilon", type=float, required=True)
@click.option("--beta", type=float, required=True)
@click.option("--support", "support", type=int, required=True, help="Support limit before removal.")
@click.option("--removal", type=int, default=0, show_default=True, help="Removal budget, added to the limit.")
@click.pass_context
def sample_size(ctx, epsilon, beta, support, removal):
    """Print the minimal sample size and the eps(n) table."""
    out = _call(ctx, "POST", "/sample-size",
                {"epsilon": epsilon, "beta": beta, "support": support, "removal": removal})
    click.echo(f"S={out['S']}")
    _write_csv(out["table"], ["n", "epsilon_n"])


def _simulate_payload(config, seed, reps, mc, out):
    payload = {"seed": seed, "repetitions": reps, "n_mc": mc, "out_dir": out}
    if config.endswith((".yaml", ".yml")):
        import yaml

        with open(config) as fh:
            payload["spec"] = yaml.safe_load(fh)
    else:
        payload["scene"] = config
    return payload


@main.command()
@click.option("--config", required=True, help="Scene YAML file or bundled scene name.")
@click.option("--seed", type=int, default=None)
@click.option("--reps", type=int, default=None)
@click.option("--mc", type=int, default=None, help="Monte-Carlo samples per plan.")
@click.option("--out", type=click.Path(file_okay=False), default=None)
@click.pass_context
def simulate(ctx, config, seed, reps, mc, out):
    """Closed-loop runs; prints the summary row as CSV."""
    res = _call(ctx, "POST", "/simulate", _simulate_payload(config, seed, reps, mc, out))
    _write_csv([res["summary"]], SUMMARY_COLUMNS)


@main.command()
@click.option("--plans", required=True, type=click.Path(exists=True), help="Output dir or plans.jsonl.")
@click.option("--mc", type=int, default=100_000, show_default=True)
@click.option("--seed", type=int, default=0)
@click.pass_context
def validate(ctx, plans, mc, seed):
    """Re-estimate the joint collision probability of stored plans."""
    res = _call(ctx, "POST", "/validate", {"plans": plans, "n_mc": mc, "seed": seed})
    _write_csv(res["rows"])
    click.echo(f"plans={res['plans']} max_joint_cp={res['max_joint_cp']:.6f} violations={res['violations']}",
               err=True)


@main.command()
@click.option("--config", default="gaussian-4", show_default=True)
@click.option("--param", type=click.Choice(["epsilon", "N"]), default="epsilon", show_default=True)
@click.option("--values", required=True, help="Comma-separated, e.g. 0.2,0.1,0.05,0.01")
@click.option("--seed", type=int, default=None)
@click.option("--reps", type=int, default=None)
@click.option("--mc", type=int, default=None)
@click.pass_context
def sweep(ctx, config, param, values, seed, reps, mc):
    """Repeat the experiment across one parameter."""
    payload = _simulate_payload(config, seed, reps, mc, None)
    payload.update(parameter=param, values=_floats(values))
    _write_csv(_call(ctx, "POST", "/sweep", payload)["rows"])


@main.command()
@click.option("--mode", type=click.Choice(["solve", "support-compare", "removal-study"]), default="solve")
@click.option("--S", "S", type=int, default=400, show_default=True)
@click.option("--seed", type=int, default=0)
@click.option("--repeats", type=int, default=100, show_default=True)
@click.option("--realizations", type=int, default=25, show_default=True)
@click.pass_context
def toy(ctx, mode, S, seed, repeats, realizations):
    """One-dimensional illustrative problem."""
    res = _call(ctx, "POST", "/toy",
                {"mode": mode, "S": S, "seed": seed, "repeats": repeats, "realizations": realizations})["result"]
    if isinstance(res, list):
        _write_csv(res)
    else:
        click.echo(json.dumps(res, indent=2))


@main.command()
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8000, show_default=True)
def serve(host, port):
    """Run the HTTP service (needs uvicorn)."""
    try:
        import uvicorn
    except ImportError:
        raise click.ClickException("uvicorn is not installed; pip install 'artifact[serve]'")
    uvicorn.run("safe_horizon.service:app", host=host, port=port)


if __name__ == "__main__":
    main()
