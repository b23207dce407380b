"""Thin command-line client for the HTTP service.

Every subcommand issues one request against the service API. By default
the FastAPI app is mounted in-process (no server needed); pass
``--server URL`` to talk to a running instance instead.

Exit codes: 0 success; 1 invalid input / format errors; 2 backend
exhaustion or wire-protocol failure.
"""
from __future__ import annotations

import asyncio
import json
import sys

import click
import httpx

SERVER_OPTION = click.option(
    "--server", default=None, metavar="URL",
    help="Base URL of a running service; default runs the app in-process.",
)


def _call(server: str | None, method: str, path: str, payload: dict | None = None,
          params: dict | None = None) -> dict:
    async def go() -> httpx.Response:
        if server:
            client = httpx.AsyncClient(base_url=server, timeout=600.0)
        else:
            from .service import app

            client = httpx.AsyncClient(
                transport=httpx.ASGITransport(app=app), base_url="http://mmkg",
                timeout=600.0,
            )
        async with client:
            return await client.request(method, path, json=payload, params=params)

    try:
        resp = asyncio.run(go())
    except httpx.HTTPError as exc:
        click.echo(f"error: cannot reach service: {exc}", err=True)
        sys.exit(2)

    body = resp.json()
    if resp.status_code == 200:
        return body
    message = body.get("message", resp.text) if isinstance(body, dict) else resp.text
    error_type = body.get("error_type", "error") if isinstance(body, dict) else "error"
    click.echo(f"error [{error_type}]: {message}", err=True)
    sys.exit(2 if resp.status_code in (502, 503) else 1)


@click.group()
def main() -> None:
    """Build and query multimodal knowledge graphs from image corpora."""


@main.command()
@SERVER_OPTION
@click.option("--config", "config_path", required=True, type=click.Path())
@click.option("--manifest", "manifest_path", required=True, type=click.Path())
@click.option("--out", "out_path", default=None, type=click.Path(),
              help="Write descriptions as JSON lines instead of stdout.")
def describe(server, config_path, manifest_path, out_path) -> None:
    """Run the expert chain over the corpus and emit raw descriptions."""
    body = _call(server, "POST", "/describe",
                 {"config_path": config_path, "manifest_path": manifest_path})
    lines = [json.dumps(item, sort_keys=True) for item in body["items"]]
    if out_path:
        with open(out_path, "w", encoding="utf-8") as fh:
            fh.write("\n".join(lines) + ("\n" if lines else ""))
        click.echo(f"wrote {len(lines)} descriptions to {out_path}")
    else:
        for line in lines:
            click.echo(line)


@main.command()
@SERVER_OPTION
@click.option("--config", "config_path", required=True, type=click.Path())
@click.option("--manifest", "manifest_path", required=True, type=click.Path())
@click.option("--descriptions", "descriptions_path", required=True, type=click.Path(),
              help="JSON-lines file produced by the describe command.")
@click.option("--emit-scores", is_flag=True, default=False)
def verify(server, config_path, manifest_path, descriptions_path, emit_scores) -> None:
    """Prune descriptions by cross-modal similarity."""
    descriptions = []
    with open(descriptions_path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                rec = json.loads(line)
                descriptions.append({"id": rec["id"], "text": rec["text"]})
    body = _call(server, "POST", "/verify", {
        "config_path": config_path,
        "manifest_path": manifest_path,
        "descriptions": descriptions,
        "emit_scores": emit_scores,
    })
    for item in body["items"]:
        click.echo(json.dumps(item, sort_keys=True))


@main.command()
@SERVER_OPTION
@click.option("--config", "config_path", required=True, type=click.Path())
@click.option("--manifest", "manifest_path", required=True, type=click.Path())
@click.option("--graph-dir", required=True, type=click.Path())
@click.option("--emit-scores", is_flag=True, default=False)
def build(server, config_path, manifest_path, graph_dir, emit_scores) -> None:
    """Full pipeline: describe, verify, and build the graph directory."""
    body = _call(server, "POST", "/build", {
        "config_path": config_path,
        "manifest_path": manifest_path,
        "graph_dir": graph_dir,
        "emit_scores": emit_scores,
    })
    click.echo(json.dumps(body, sort_keys=True, indent=2))


@main.command()
@SERVER_OPTION
@click.option("--config", "config_path", required=True, type=click.Path())
@click.option("--graph-dir", required=True, type=click.Path())
@click.option("--mode", default=None,
              type=click.Choice(["naive", "local", "global", "hybrid", "mix"]))
@click.option("--top-k", "top_k", default=None, type=int,
              help="Triplet budget (chunk budget comes from config).")
@click.argument("query")
def query(server, config_path, graph_dir, mode, top_k, query) -> None:
    """Retrieve a subgraph for a query; prints line-delimited records."""
    body = _call(server, "POST", "/query", {
        "config_path": config_path,
        "graph_dir": graph_dir,
        "query": query,
        "mode": mode,
        "top_k_triplets": top_k,
    })
    for triplet in body["triplets"]:
        click.echo(json.dumps({"record": "triplet", **triplet}, sort_keys=True))
    for chunk in body["chunks"]:
        click.echo(json.dumps({"record": "chunk", **chunk}, sort_keys=True))


@main.command()
@SERVER_OPTION
@click.option("--config", "config_path", required=True, type=click.Path())
@click.option("--graph-dir", required=True, type=click.Path())
@click.option("--mode", default=None,
              type=click.Choice(["naive", "local", "global", "hybrid", "mix"]))
@click.option("--show-prompt", is_flag=True, default=False)
@click.argument("query")
def answer(server, config_path, graph_dir, mode, show_prompt, query) -> None:
    """Answer a query with graph-augmented prompting."""
    body = _call(server, "POST", "/answer", {
        "config_path": config_path,
        "graph_dir": graph_dir,
        "query": query,
        "mode": mode,
        "show_prompt": show_prompt,
    })
    if show_prompt and body.get("prompt") is not None:
        click.echo("--- prompt ---")
        click.echo(body["prompt"])
        click.echo("--- answer ---")
    click.echo(body["answer"])


@main.command("eval")
@SERVER_OPTION
@click.option("--config", "config_path", required=True, type=click.Path())
@click.option("--manifest", "manifest_path", required=True, type=click.Path())
@click.option("--graph-dir", required=True, type=click.Path())
def eval_cmd(server, config_path, manifest_path, graph_dir) -> None:
    """Exact-match accuracy over a labeled manifest."""
    body = _call(server, "POST", "/eval", {
        "config_path": config_path,
        "manifest_path": manifest_path,
        "graph_dir": graph_dir,
    })
    click.echo(json.dumps(body, sort_keys=True, indent=2))


@main.command()
@SERVER_OPTION
@click.option("--graph-dir", required=True, type=click.Path())
def stats(server, graph_dir) -> None:
    """Entity/relation/chunk counts and on-disk size of a graph."""
    body = _call(server, "GET", "/stats", params={"graph_dir": graph_dir})
    click.echo(json.dumps(body, sort_keys=True, indent=2))


@main.command()
@click.option("--host", default="127.0.0.1")
@click.option("--port", default=8000, type=int)
def serve(host, port) -> None:
    """Run the HTTP service."""
    import uvicorn

    uvicorn.run("mmkg.service:app", host=host, port=port)


if __name__ == "__main__":
    main()
