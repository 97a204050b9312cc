"""Experiment orchestration: leave-one-domain-out pre-training, per-seed
tuning, ratio/perturbation/shot sweeps, the complementary-label audit, and
report emission.

Everything is deterministic for a fixed config: splits, prompt inits and
subset draws are keyed by the per-run seed, and one pre-trained checkpoint is
shared across seeds (keyed by source set + pre-train config) unless
``repretrain_per_seed`` is set.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import time
from pathlib import Path
from typing import Literal, Optional

import numpy as np
from pydantic import BaseModel, Field, field_validator

from .errors import ConfigError, NumericError, StaleCacheError
from .graph import (
    Graph,
    load_manifest,
    merge_classes,
    perturb_edges,
    perturb_features,
    sample_few_shot_split,
)
from .pretrain import (
    GcnParams,
    PretrainConfig,
    encode_graph,
    load_params,
    pretrain,
    save_params,
    svd_align,
)
from .prompt import (
    TuneConfig,
    compute_complementary_labels,
    ensemble_predict,
    init_centroids,
    last_layer_argmin_labels,
    refine_centroids,
    tune,
)
from .rng import make_rng

CACHE_DIR_ENV = "GFMATE_CACHE_DIR"


class SweepSpec(BaseModel):
    kind: Literal["ratio", "perturb", "shots", "merge"]
    ratios: list[float] | None = None
    perturb_kind: Literal["features", "edges"] | None = None
    shots_list: list[int] | None = None
    merge_groups: list[list[int]] | None = None


class ExperimentConfig(BaseModel):
    """One target-domain experiment; mirrors the JSON config file."""

    manifest_path: str
    target_domain: str
    shots: int = Field(default=1, ge=1)
    seeds: list[int] = Field(default_factory=lambda: [0, 1, 2, 3, 4])
    pretrain: PretrainConfig = Field(default_factory=PretrainConfig)
    tune: TuneConfig = Field(default_factory=TuneConfig)
    sweeps: SweepSpec | None = None
    output_dir: str = "runs"
    repretrain_per_seed: bool = False

    @field_validator("seeds")
    @classmethod
    def _seeds_nonempty(cls, v):
        if not v:
            raise ValueError("seeds must be non-empty")
        return v


class MetricReport(BaseModel):
    """Per-seed accuracies (percent, full precision) plus aggregates."""

    target_domain: str
    shots: int
    seeds: list[int]
    per_seed_accuracy: list[float]
    mean_accuracy: float
    std_accuracy: float
    display: str
    comp_label_accuracy: Optional[float] = None
    param_count: int
    pretrain_steps: int
    wallclock_s: float
    sweep_kind: Optional[str] = None
    sweep_value: Optional[float] = None


class AuditReport(BaseModel):
    """Complementary-label correctness: entropy-pivot strategy vs last layer."""

    target_domain: str
    seeds: list[int]
    pivot_layers: list[int]
    per_seed_pivot_correctness: list[float]
    per_seed_last_layer_correctness: list[float]
    mean_pivot_correctness: float
    mean_last_layer_correctness: float


# ---------------------------------------------------------------------------
# checkpoint cache


def _cache_payload(source_ids: list[str], pcfg: PretrainConfig) -> str:
    return json.dumps(
        {"sources": sorted(source_ids), "pretrain": pcfg.model_dump()}, sort_keys=True
    )


def cache_key(source_ids: list[str], pcfg: PretrainConfig) -> str:
    return hashlib.sha256(_cache_payload(source_ids, pcfg).encode("utf-8")).hexdigest()[:24]


def _cache_dir(cfg: ExperimentConfig) -> Path:
    override = os.environ.get(CACHE_DIR_ENV)
    return Path(override) if override else Path(cfg.output_dir) / "cache"


def _pretrain_sources(sources: list[Graph], pcfg: PretrainConfig):
    aligned = svd_align(sources, pcfg.hidden_dim, seed=pcfg.seed, row_normalize=pcfg.row_normalize)
    return pretrain(aligned, pcfg)


def obtain_params(
    cfg: ExperimentConfig, sources: list[Graph], ckpt_path=None
) -> tuple[GcnParams, int]:
    """Load or train the shared encoder; returns (params, steps run now).

    With an explicit checkpoint path, load it (zero steps).  Otherwise consult
    the cache keyed by (sorted source ids, pre-train config); a cached entry
    whose recorded key inputs disagree with the requested ones is stale.
    """
    if ckpt_path is not None:
        return load_params(ckpt_path), 0
    payload = _cache_payload([g.domain_id for g in sources], cfg.pretrain)
    key = hashlib.sha256(payload.encode("utf-8")).hexdigest()[:24]
    cdir = _cache_dir(cfg)
    ckpt = cdir / f"{key}.ckpt"
    meta = cdir / f"{key}.json"
    if ckpt.exists():
        if not meta.exists() or meta.read_text(encoding="utf-8") != payload:
            raise StaleCacheError(
                f"{ckpt}: cached checkpoint metadata disagrees with the requested "
                "source set / pre-train config"
            )
        return load_params(ckpt), 0
    result = _pretrain_sources(sources, cfg.pretrain)
    cdir.mkdir(parents=True, exist_ok=True)
    save_params(result.params, ckpt)
    meta.write_text(payload, encoding="utf-8")
    return result.params, result.num_steps


# ---------------------------------------------------------------------------
# single experiment


def _split_domains(cfg: ExperimentConfig) -> tuple[list[Graph], Graph]:
    graphs = load_manifest(cfg.manifest_path)
    by_id = {g.domain_id: g for g in graphs}
    if cfg.target_domain not in by_id:
        raise ConfigError(
            f"target domain {cfg.target_domain!r} not in manifest "
            f"(available: {sorted(by_id)})"
        )
    target = by_id[cfg.target_domain]
    sources = [g for g in graphs if g.domain_id != cfg.target_domain]
    if not sources:
        raise ConfigError("manifest must list at least one non-target source domain")
    return sources, target


def _align_target(target: Graph, pcfg: PretrainConfig) -> Graph:
    (aligned,) = svd_align([target], pcfg.hidden_dim, seed=pcfg.seed, row_normalize=pcfg.row_normalize)
    return aligned


def _csv(path: Path, header: str, rows) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(header + "\n")
        for row in rows:
            fh.write(",".join(repr(x) if isinstance(x, float) else str(x) for x in row) + "\n")


def _ratio_subset(test_ids: np.ndarray, ratio: float, seed: int) -> np.ndarray:
    """First ceil(ratio*n) positions of a seeded permutation, in original order."""
    n = len(test_ids)
    k = math.ceil(ratio * n)
    keep = np.zeros(n, dtype=bool)
    keep[make_rng(seed, "ratio-subset").permutation(n)[:k]] = True
    return test_ids[keep]


def run_experiment(
    cfg: ExperimentConfig,
    ckpt_path=None,
    tgcl_ratio: float | None = None,
    perturb: tuple[str, float] | None = None,
    write_outputs: bool = True,
    sweep_kind: str | None = None,
    sweep_value: float | None = None,
    output_subdir: str | None = None,
) -> MetricReport:
    """Pre-train (or load) the encoder, then tune and evaluate per seed.

    ``tgcl_ratio`` restricts the test-time loss to a random fraction of the
    test nodes (0 switches to few-shot-only tuning); evaluation always uses
    the full test split.  ``perturb`` = (kind, ratio) perturbs the raw target
    graph before encoding.  Writes report.json, per_seed.csv and per-seed
    tuning histories under output_dir unless ``write_outputs`` is off.
    """
    started = time.perf_counter()
    sources, target = _split_domains(cfg)
    if target.labels is None or target.num_classes < 2:
        raise ConfigError(f"target domain {target.domain_id!r} needs labels to evaluate")
    if cfg.repretrain_per_seed:
        params, steps_total = None, 0
    else:
        params, steps_total = obtain_params(cfg, sources, ckpt_path)

    shared_stack = None
    if perturb is None and params is not None:
        shared_stack = encode_graph(params, _align_target(target, cfg.pretrain))

    accuracies: list[float] = []
    comp_accs: list[float] = []
    param_count = None
    out_dir = Path(cfg.output_dir) if output_subdir is None else Path(cfg.output_dir) / output_subdir
    if write_outputs:
        out_dir.mkdir(parents=True, exist_ok=True)

    for seed in cfg.seeds:
        if cfg.repretrain_per_seed:
            reseed = int(make_rng(cfg.pretrain.seed, "repretrain", seed).integers(2**31))
            result = _pretrain_sources(sources, cfg.pretrain.model_copy(update={"seed": reseed}))
            params = result.params
            steps_total += result.num_steps
        split = sample_few_shot_split(target, cfg.shots, seed)
        if perturb is not None:
            kind, ratio = perturb
            if kind == "features":
                disturbed = perturb_features(target, split.test_ids, ratio, seed)
            elif kind == "edges":
                disturbed = perturb_edges(target, split.test_ids, ratio, seed)
            else:
                raise ConfigError(f"unknown perturbation kind {kind!r}")
            stack = encode_graph(params, _align_target(disturbed, cfg.pretrain))
        elif shared_stack is not None:
            stack = shared_stack
        else:
            stack = encode_graph(params, _align_target(target, cfg.pretrain))

        tcfg = cfg.tune.model_copy(update={"seed": seed})
        tgcl_ids = None
        if tgcl_ratio is not None:
            if tgcl_ratio == 0.0:
                tcfg = tcfg.model_copy(update={"tgcl_mode": "few-shot-only"})
            else:
                tgcl_ids = _ratio_subset(split.test_ids, tgcl_ratio, seed)
        prompts, history = tune(stack, split, target.labels, tcfg, tgcl_test_ids=tgcl_ids)
        param_count = prompts.param_count

        e = init_centroids(stack, split)
        pred = ensemble_predict(stack, refine_centroids(e, prompts), prompts.eta, split.test_ids)
        acc = float((pred == target.labels[split.test_ids]).mean())
        if not np.isfinite(acc):
            raise NumericError("run_experiment: non-finite accuracy")
        accuracies.append(100.0 * acc)
        if tcfg.tgcl_mode == "complementary":
            comp = compute_complementary_labels(stack, e, split.test_ids)
            comp_accs.append(float((comp.labels != target.labels[split.test_ids]).mean()))
        if write_outputs:
            _csv(
                out_dir / f"history_seed{seed}.csv",
                "epoch,loss_te,loss_fs,loss_tgcl,val_acc",
                [(h.epoch, h.loss_te, h.loss_fs, h.loss_tgcl, h.val_acc) for h in history],
            )

    mean = float(np.mean(accuracies))
    std = float(np.std(accuracies))
    report = MetricReport(
        target_domain=cfg.target_domain,
        shots=cfg.shots,
        seeds=list(cfg.seeds),
        per_seed_accuracy=accuracies,
        mean_accuracy=mean,
        std_accuracy=std,
        display=f"{mean:.2f}±{std:.2f}",
        comp_label_accuracy=float(np.mean(comp_accs)) if comp_accs else None,
        param_count=int(param_count),
        pretrain_steps=steps_total,
        wallclock_s=time.perf_counter() - started,
        sweep_kind=sweep_kind,
        sweep_value=sweep_value,
    )
    if write_outputs:
        _csv(out_dir / "per_seed.csv", "seed,accuracy", list(zip(cfg.seeds, accuracies)))
        (out_dir / "report.json").write_text(
            json.dumps(report.model_dump(), indent=2) + "\n", encoding="utf-8"
        )
    return report


# ---------------------------------------------------------------------------
# sweeps


def run_ratio_sweep(cfg: ExperimentConfig, ratios: list[float], ckpt_path=None) -> list[MetricReport]:
    """One report per test-data ratio; ratio 0 is few-shot-only tuning."""
    for r in ratios:
        if not 0.0 <= r <= 1.0:
            raise ConfigError(f"ratio {r} outside [0, 1]")
    return [
        run_experiment(
            cfg,
            ckpt_path=ckpt_path,
            tgcl_ratio=r,
            sweep_kind="ratio",
            sweep_value=r,
            output_subdir=f"ratio_{r:g}",
        )
        for r in ratios
    ]


def run_perturb_sweep(
    cfg: ExperimentConfig, kind: str, ratios: list[float], ckpt_path=None
) -> list[MetricReport]:
    """Perturb the target graph before encoding, at each ratio."""
    if kind not in ("features", "edges"):
        raise ConfigError(f"perturbation kind must be 'features' or 'edges', got {kind!r}")
    return [
        run_experiment(
            cfg,
            ckpt_path=ckpt_path,
            perturb=(kind, r),
            sweep_kind=f"perturb-{kind}",
            sweep_value=r,
            output_subdir=f"perturb_{kind}_{r:g}",
        )
        for r in ratios
    ]


def run_shots_sweep(cfg: ExperimentConfig, shots_list: list[int], ckpt_path=None) -> list[MetricReport]:
    return [
        run_experiment(
            cfg.model_copy(update={"shots": m}),
            ckpt_path=ckpt_path,
            sweep_kind="shots",
            sweep_value=float(m),
            output_subdir=f"shots_{m}",
        )
        for m in shots_list
    ]


def run_merge_sweep(
    cfg: ExperimentConfig, groups: list[list[int]], ckpt_path=None
) -> list[MetricReport]:
    """Binary class-merging arms: group -> class 0, rest -> class 1.

    The encoder checkpoint is resolved once (the sources are untouched by the
    merge) and shared across arms.
    """
    import tempfile

    from .synthetic import write_manifest

    sources, target = _split_domains(cfg)
    if ckpt_path is None:
        params, _ = obtain_params(cfg, sources)
        key = cache_key([g.domain_id for g in sources], cfg.pretrain)
        ckpt_path = _cache_dir(cfg) / f"{key}.ckpt"
    reports = []
    for gi, group in enumerate(groups):
        merged = merge_classes(target, group)
        with tempfile.TemporaryDirectory() as tmp:
            manifest = write_manifest(sources + [merged], tmp)
            sub = cfg.model_copy(update={"manifest_path": str(manifest)})
            reports.append(
                run_experiment(
                    sub,
                    ckpt_path=ckpt_path,
                    sweep_kind="merge",
                    sweep_value=float(gi),
                    output_subdir=f"merge_{gi}",
                )
            )
    return reports


def run_sweep(cfg: ExperimentConfig, ckpt_path=None) -> list[MetricReport]:
    """Dispatch on cfg.sweeps.kind."""
    if cfg.sweeps is None:
        raise ConfigError("config has no sweeps section")
    spec = cfg.sweeps
    if spec.kind == "ratio":
        if not spec.ratios:
            raise ConfigError("ratio sweep needs 'ratios'")
        return run_ratio_sweep(cfg, spec.ratios, ckpt_path)
    if spec.kind == "perturb":
        if not spec.ratios or spec.perturb_kind is None:
            raise ConfigError("perturb sweep needs 'perturb_kind' and 'ratios'")
        return run_perturb_sweep(cfg, spec.perturb_kind, spec.ratios, ckpt_path)
    if spec.kind == "shots":
        if not spec.shots_list:
            raise ConfigError("shots sweep needs 'shots_list'")
        return run_shots_sweep(cfg, spec.shots_list, ckpt_path)
    if not spec.merge_groups:
        raise ConfigError("merge sweep needs 'merge_groups'")
    return run_merge_sweep(cfg, spec.merge_groups, ckpt_path)


# ---------------------------------------------------------------------------
# label audit


def audit_complementary_labels(cfg: ExperimentConfig, ckpt_path=None) -> AuditReport:
    """Fraction of test nodes whose complementary label avoids the true class.

    Reports the entropy-pivot strategy next to the last-layer-argmin baseline.
    """
    sources, target = _split_domains(cfg)
    if target.labels is None:
        raise ConfigError("label audit needs a labelled target domain")
    params, _ = obtain_params(cfg, sources, ckpt_path)
    stack = encode_graph(params, _align_target(target, cfg.pretrain))
    pivots, pivot_corr, last_corr = [], [], []
    for seed in cfg.seeds:
        split = sample_few_shot_split(target, cfg.shots, seed)
        e = init_centroids(stack, split)
        truth = target.labels[split.test_ids]
        comp = compute_complementary_labels(stack, e, split.test_ids)
        base = last_layer_argmin_labels(stack, e, split.test_ids)
        pivots.append(comp.pivot_layer)
        pivot_corr.append(float((comp.labels != truth).mean()))
        last_corr.append(float((base != truth).mean()))
    return AuditReport(
        target_domain=cfg.target_domain,
        seeds=list(cfg.seeds),
        pivot_layers=pivots,
        per_seed_pivot_correctness=pivot_corr,
        per_seed_last_layer_correctness=last_corr,
        mean_pivot_correctness=float(np.mean(pivot_corr)),
        mean_last_layer_correctness=float(np.mean(last_corr)),
    )
