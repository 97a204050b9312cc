"""Command-line client for the gfmate service.

Every command builds the same request models the HTTP API accepts.  Without
--server the handler runs in-process; with --server the request is POSTed to
a running `gfmate serve` instance and the JSON response echoed.

Exit codes: 0 success, 2 config error, 3 data error, 4 numeric failure.
"""

from __future__ import annotations

import functools
import json
import sys
from pathlib import Path

import click
import httpx
from pydantic import ValidationError

from .errors import GfmateError
from .harness import ExperimentConfig
from .pretrain import PretrainConfig
from . import service


def _parse_seeds(text: str) -> list[int]:
    text = text.strip()
    if ".." in text:
        lo, hi = text.split("..", 1)
        return list(range(int(lo), int(hi) + 1))
    return [int(t) for t in text.split(",") if t.strip() != ""]


def _parse_floats(text: str) -> list[float]:
    return [float(t) for t in text.split(",") if t.strip() != ""]


def _parse_groups(text: str) -> list[list[int]]:
    return [[int(c) for c in part.split(",")] for part in text.split(";") if part.strip()]


def _cli_errors(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except GfmateError as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(exc.exit_code)
        except ValidationError as exc:
            click.echo(f"config error: {exc}", err=True)
            sys.exit(2)

    return wrapper


def _post(server: str, path: str, payload: dict) -> dict:
    resp = httpx.post(server.rstrip("/") + path, json=payload, timeout=None)
    if resp.status_code != 200:
        try:
            body = resp.json()
            detail = body.get("detail", resp.text)
            code = int(body.get("exit_code", 1))
        except Exception:
            detail, code = resp.text, 1
        click.echo(f"error: {detail}", err=True)
        sys.exit(code)
    return resp.json()


def _dispatch(server: str | None, path: str, request, handler) -> None:
    if server:
        click.echo(json.dumps(_post(server, path, request.model_dump()), indent=2))
    else:
        click.echo(handler(request).model_dump_json(indent=2))


def _experiment_config(config_file, overrides: dict, pretrain: dict, tune_kw: dict, sweeps=None) -> ExperimentConfig:
    base: dict = {}
    if config_file:
        base = json.loads(Path(config_file).read_text(encoding="utf-8"))
    for key, value in overrides.items():
        if value is not None:
            base[key] = value
    base_pre = dict(base.get("pretrain", {}))
    base_pre.update({k: v for k, v in pretrain.items() if v is not None})
    base["pretrain"] = base_pre
    base_tune = dict(base.get("tune", {}))
    base_tune.update({k: v for k, v in tune_kw.items() if v is not None})
    base["tune"] = base_tune
    if sweeps is not None:
        base["sweeps"] = sweeps
    return ExperimentConfig(**base)


_server_option = click.option("--server", default=None, help="URL of a running gfmate service.")


def _base_options(fn):
    for deco in reversed(
        [
            click.option("--config", "config_file", type=click.Path(exists=True), default=None,
                         help="JSON config mirroring the experiment schema; flags override it."),
            click.option("--manifest", default=None, help="Dataset manifest path."),
            click.option("--target", default=None, help="Held-out target domain."),
            click.option("--ckpt", default=None, help="Pre-trained encoder checkpoint."),
            click.option("--shots", type=int, default=None),
            click.option("--seeds", default=None, help="'0..4' or '0,1,2'."),
            click.option("--out", "output_dir", default=None, help="Output directory."),
            click.option("--repretrain-per-seed", is_flag=True, default=False),
            click.option("--epochs", type=int, default=None, help="Pre-training steps."),
            click.option("--pretrain-lr", type=float, default=None),
            click.option("--dim", type=int, default=None, help="Hidden dimension."),
            click.option("--layers", type=int, default=None, help="Propagation layers."),
            click.option("--pretrain-seed", type=int, default=None),
            click.option("--gamma", type=float, default=None),
            click.option("--tau", type=float, default=None),
            click.option("--lr", type=float, default=None, help="Prompt-tuning step size."),
            click.option("--max-epochs", type=int, default=None),
            click.option("--patience", type=int, default=None),
            click.option("--layer-mode", type=click.Choice(["learned", "frozen-uniform"]), default=None),
            click.option("--tgcl-mode", type=click.Choice(["complementary", "few-shot-only", "pseudo"]), default=None),
            _server_option,
        ]
    ):
        fn = deco(fn)
    return fn


def _collect(config_file, kwargs, sweeps=None) -> tuple[ExperimentConfig, str | None]:
    overrides = {
        "manifest_path": kwargs.get("manifest"),
        "target_domain": kwargs.get("target"),
        "shots": kwargs.get("shots"),
        "seeds": _parse_seeds(kwargs["seeds"]) if kwargs.get("seeds") else None,
        "output_dir": kwargs.get("output_dir"),
        "repretrain_per_seed": kwargs["repretrain_per_seed"] or None,
    }
    pretrain = {
        "epochs": kwargs.get("epochs"),
        "lr": kwargs.get("pretrain_lr"),
        "hidden_dim": kwargs.get("dim"),
        "num_layers": kwargs.get("layers"),
        "seed": kwargs.get("pretrain_seed"),
    }
    tune_kw = {
        "gamma": kwargs.get("gamma"),
        "tau": kwargs.get("tau"),
        "lr": kwargs.get("lr"),
        "max_epochs": kwargs.get("max_epochs"),
        "patience": kwargs.get("patience"),
        "layer_mode": kwargs.get("layer_mode"),
        "tgcl_mode": kwargs.get("tgcl_mode"),
    }
    cfg = _experiment_config(config_file, overrides, pretrain, tune_kw, sweeps)
    return cfg, kwargs.get("ckpt")


@click.group()
def main():
    """Multi-domain graph pre-training and test-time prompt tuning."""


@main.command()
@click.option("--host", default="127.0.0.1")
@click.option("--port", type=int, default=8000)
def serve(host, port):
    """Run the HTTP service."""
    import uvicorn

    uvicorn.run("gfmate.service:app", host=host, port=port)


@main.command()
@click.option("--manifest", required=True)
@click.option("--exclude", default=None, help="Target domain to leave out.")
@click.option("--out", "out_path", required=True, help="Checkpoint file to write.")
@click.option("--epochs", type=int, default=None)
@click.option("--lr", type=float, default=None)
@click.option("--neg-ratio", type=float, default=None)
@click.option("--batch-edges", type=int, default=None)
@click.option("--dim", type=int, default=None)
@click.option("--layers", type=int, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--no-row-normalize", is_flag=True, default=False)
@_server_option
@_cli_errors
def pretrain(manifest, exclude, out_path, epochs, lr, neg_ratio, batch_edges, dim, layers, seed, no_row_normalize, server):
    """Pre-train the encoder on every manifest domain except --exclude."""
    knobs = {
        "epochs": epochs,
        "lr": lr,
        "neg_ratio": neg_ratio,
        "batch_edges": batch_edges,
        "hidden_dim": dim,
        "num_layers": layers,
        "seed": seed,
    }
    pcfg = PretrainConfig(**{k: v for k, v in knobs.items() if v is not None},
                          **({"row_normalize": False} if no_row_normalize else {}))
    req = service.PretrainRequest(manifest_path=manifest, exclude=exclude, out_path=out_path, pretrain=pcfg)
    _dispatch(server, "/pretrain", req, service.handle_pretrain)


@main.command()
@_base_options
@_cli_errors
def tune(config_file, server, **kwargs):
    """Tune prompts on the target domain and report test accuracy."""
    cfg, ckpt = _collect(config_file, kwargs)
    req = service.RunRequest(config=cfg, ckpt_path=ckpt)
    _dispatch(server, "/experiments/run", req, service.handle_run)


@main.command()
@click.option("--kind", type=click.Choice(["ratio", "perturb", "shots", "merge"]), required=True)
@click.option("--ratios", default=None, help="Comma-separated ratios.")
@click.option("--perturb-kind", type=click.Choice(["features", "edges"]), default=None)
@click.option("--shots-list", default=None, help="Comma-separated shot counts.")
@click.option("--merge-groups", default=None, help="Semicolon-separated class groups, e.g. '0,1;2'.")
@_base_options
@_cli_errors
def sweep(kind, ratios, perturb_kind, shots_list, merge_groups, config_file, server, **kwargs):
    """Run a ratio / perturbation / shots / merge sweep."""
    spec: dict = {"kind": kind}
    if ratios:
        spec["ratios"] = _parse_floats(ratios)
    if perturb_kind:
        spec["perturb_kind"] = perturb_kind
    if shots_list:
        spec["shots_list"] = [int(t) for t in shots_list.split(",")]
    if merge_groups:
        spec["merge_groups"] = _parse_groups(merge_groups)
    cfg, ckpt = _collect(config_file, kwargs, sweeps=spec)
    req = service.RunRequest(config=cfg, ckpt_path=ckpt)
    _dispatch(server, "/experiments/sweep", req, service.handle_sweep)


@main.command("audit-labels")
@_base_options
@_cli_errors
def audit_labels(config_file, server, **kwargs):
    """Report complementary-label correctness vs the last-layer baseline."""
    cfg, ckpt = _collect(config_file, kwargs)
    req = service.RunRequest(config=cfg, ckpt_path=ckpt)
    _dispatch(server, "/experiments/audit-labels", req, service.handle_audit)


@main.command()
@click.option("--reports", multiple=True, required=True, help="report.json files (repeatable).")
@click.option("--out", "out_dir", required=True)
@_server_option
@_cli_errors
def plot(reports, out_dir, server):
    """Render SVG charts from report files."""
    req = service.PlotRequest(report_paths=list(reports), out_dir=out_dir)
    _dispatch(server, "/plots", req, service.handle_plot)


@main.command()
@click.option("--out", "out_dir", required=True)
@click.option("--seed", type=int, default=0)
@click.option("--target-nodes", type=int, default=500)
@_server_option
@_cli_errors
def synth(out_dir, seed, target_nodes, server):
    """Write the synthetic SBM benchmark (two sources + shifted target)."""
    req = service.SynthRequest(out_dir=out_dir, seed=seed, target_nodes=target_nodes)
    _dispatch(server, "/synthetic", req, service.handle_synth)


if __name__ == "__main__":
    main()
