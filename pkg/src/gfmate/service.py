"""HTTP service wrapping the harness.

Routes delegate to plain handler functions so the CLI can call the same code
in-process; domain errors map onto HTTP statuses (config 400, data 422,
numeric 500).
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse
from pydantic import BaseModel, Field

from . import __version__
from .errors import ConfigError, DataError, GfmateError
from .graph import load_manifest
from .harness import (
    AuditReport,
    ExperimentConfig,
    MetricReport,
    audit_complementary_labels,
    run_experiment,
    run_sweep,
)
from .plots import emit_plots
from .pretrain import PretrainConfig, pretrain, save_params, svd_align
from .synthetic import make_benchmark_trio, write_manifest


class PretrainRequest(BaseModel):
    manifest_path: str
    exclude: str | None = None
    out_path: str
    pretrain: PretrainConfig = Field(default_factory=PretrainConfig)


class PretrainResponse(BaseModel):
    checkpoint_path: str
    loss_trace_path: str
    steps: int
    steps_per_domain: dict[str, int]
    final_loss: float


class RunRequest(BaseModel):
    config: ExperimentConfig
    ckpt_path: str | None = None


class SweepResponse(BaseModel):
    reports: list[MetricReport]


class PlotRequest(BaseModel):
    report_paths: list[str]
    out_dir: str


class PlotResponse(BaseModel):
    files: list[str]


class SynthRequest(BaseModel):
    out_dir: str
    seed: int = 0
    target_nodes: int = Field(default=500, ge=30)


class SynthResponse(BaseModel):
    manifest_path: str
    domain_ids: list[str]


# ---------------------------------------------------------------------------
# handlers (shared by the HTTP routes and the CLI's in-process mode)


def handle_pretrain(req: PretrainRequest) -> PretrainResponse:
    graphs = load_manifest(req.manifest_path)
    sources = [g for g in graphs if g.domain_id != req.exclude]
    if len(sources) == len(graphs) and req.exclude is not None:
        raise ConfigError(f"excluded domain {req.exclude!r} not found in manifest")
    if not sources:
        raise ConfigError("no source domains left after exclusion")
    pcfg = req.pretrain
    aligned = svd_align(sources, pcfg.hidden_dim, seed=pcfg.seed, row_normalize=pcfg.row_normalize)
    result = pretrain(aligned, pcfg)
    out = Path(req.out_path)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_params(result.params, out)
    trace_path = out.with_suffix(out.suffix + ".loss.csv")
    with open(trace_path, "w", encoding="utf-8") as fh:
        fh.write("epoch,loss\n")
        for i, loss in enumerate(result.loss_trace):
            fh.write(f"{i},{loss!r}\n")
    return PretrainResponse(
        checkpoint_path=str(out),
        loss_trace_path=str(trace_path),
        steps=result.num_steps,
        steps_per_domain=result.steps_per_domain,
        final_loss=float(np.mean(result.loss_trace[-10:])),
    )


def handle_run(req: RunRequest) -> MetricReport:
    return run_experiment(req.config, ckpt_path=req.ckpt_path)


def handle_sweep(req: RunRequest) -> SweepResponse:
    return SweepResponse(reports=run_sweep(req.config, ckpt_path=req.ckpt_path))


def handle_audit(req: RunRequest) -> AuditReport:
    return audit_complementary_labels(req.config, ckpt_path=req.ckpt_path)


def handle_plot(req: PlotRequest) -> PlotResponse:
    reports = []
    for path in req.report_paths:
        try:
            payload = json.loads(Path(path).read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise DataError(f"report file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}: invalid report JSON ({exc})") from None
        reports.append(MetricReport(**payload))
    files = emit_plots(reports, req.out_dir)
    return PlotResponse(files=[str(f) for f in files])


def handle_synth(req: SynthRequest) -> SynthResponse:
    sources, target = make_benchmark_trio(seed=req.seed, target_nodes=req.target_nodes)
    manifest = write_manifest(sources + [target], req.out_dir)
    return SynthResponse(
        manifest_path=str(manifest), domain_ids=[g.domain_id for g in sources] + [target.domain_id]
    )


# ---------------------------------------------------------------------------
# app

app = FastAPI(title="gfmate", version=__version__)


@app.exception_handler(GfmateError)
async def _domain_error(_request: Request, exc: GfmateError):
    status = 400 if isinstance(exc, ConfigError) else 422 if isinstance(exc, DataError) else 500
    return JSONResponse(
        status_code=status,
        content={"error": type(exc).__name__, "detail": str(exc), "exit_code": exc.exit_code},
    )


@app.get("/health")
def health():
    return {"status": "ok", "version": __version__}


@app.post("/pretrain", response_model=PretrainResponse)
def pretrain_route(req: PretrainRequest):
    return handle_pretrain(req)


@app.post("/experiments/run", response_model=MetricReport)
def run_route(req: RunRequest):
    return handle_run(req)


@app.post("/experiments/sweep", response_model=SweepResponse)
def sweep_route(req: RunRequest):
    return handle_sweep(req)


@app.post("/experiments/audit-labels", response_model=AuditReport)
def audit_route(req: RunRequest):
    return handle_audit(req)


@app.post("/plots", response_model=PlotResponse)
def plot_route(req: PlotRequest):
    return handle_plot(req)


@app.post("/synthetic", response_model=SynthResponse)
def synth_route(req: SynthRequest):
    return handle_synth(req)
