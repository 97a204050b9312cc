import math
from pathlib import Path

import numpy as np
import pytest

from gfmate.errors import ConfigError, StaleCacheError
from gfmate.harness import (
    ExperimentConfig,
    SweepSpec,
    audit_complementary_labels,
    run_experiment,
    run_merge_sweep,
    run_perturb_sweep,
    run_ratio_sweep,
    run_shots_sweep,
    run_sweep,
)
from gfmate.pretrain import PretrainConfig
from gfmate.prompt import TuneConfig
from gfmate.synthetic import make_benchmark_trio, write_manifest


@pytest.fixture(scope="module")
def bench(tmp_path_factory):
    """Small benchmark manifest shared by harness tests."""
    root = tmp_path_factory.mktemp("bench")
    sources, target = make_benchmark_trio(seed=0, target_nodes=150)
    manifest = write_manifest(sources + [target], root / "data")
    return root, manifest


def make_cfg(root, manifest, out_name, **overrides) -> ExperimentConfig:
    base = dict(
        manifest_path=str(manifest),
        target_domain="target",
        shots=1,
        seeds=[0, 1],
        pretrain=PretrainConfig(epochs=40, lr=0.1, batch_edges=64, hidden_dim=12, num_layers=2),
        tune=TuneConfig(lr=0.1, max_epochs=25, patience=25),
        output_dir=str(root / out_name),
    )
    base.update(overrides)
    return ExperimentConfig(**base)


def test_run_experiment_writes_report_and_is_deterministic(bench):
    root, manifest = bench
    cfg = make_cfg(root, manifest, "run-a", seeds=[0, 1, 2])
    rep1 = run_experiment(cfg)
    assert len(rep1.per_seed_accuracy) == 3
    assert rep1.pretrain_steps == 40
    out = Path(cfg.output_dir)
    assert (out / "report.json").exists()
    assert (out / "per_seed.csv").exists()
    for seed in cfg.seeds:
        assert (out / f"history_seed{seed}.csv").exists()
    # second run: cache hit, bit-identical science
    cfg2 = make_cfg(root, manifest, "run-a", seeds=[0, 1, 2])
    rep2 = run_experiment(cfg2)
    assert rep2.pretrain_steps == 0
    assert rep2.per_seed_accuracy == rep1.per_seed_accuracy
    d1 = rep1.model_dump()
    d2 = rep2.model_dump()
    d1.pop("wallclock_s"), d2.pop("wallclock_s")
    d1.pop("pretrain_steps"), d2.pop("pretrain_steps")
    assert d1 == d2


def test_emitted_numeric_files_are_byte_reproducible(bench):
    root, manifest = bench
    rep_a = run_experiment(make_cfg(root, manifest, "repro-a"))
    rep_b = run_experiment(make_cfg(root, manifest, "repro-b"))
    for name in ("per_seed.csv", "history_seed0.csv", "history_seed1.csv"):
        a = (Path(root / "repro-a") / name).read_bytes()
        b = (Path(root / "repro-b") / name).read_bytes()
        assert a == b
    da, db = rep_a.model_dump(), rep_b.model_dump()
    da.pop("wallclock_s"), db.pop("wallclock_s")
    da.pop("pretrain_steps"), db.pop("pretrain_steps")  # second run hits the cache
    assert da == db


def test_report_aggregates_recompute_from_csv(bench):
    root, manifest = bench
    cfg = make_cfg(root, manifest, "run-csv", seeds=[0, 1, 2, 3])
    rep = run_experiment(cfg)
    rows = (Path(cfg.output_dir) / "per_seed.csv").read_text().strip().splitlines()[1:]
    accs = [float(r.split(",")[1]) for r in rows]
    assert abs(np.mean(accs) - rep.mean_accuracy) <= 1e-9
    assert abs(np.std(accs) - rep.std_accuracy) <= 1e-9
    assert rep.display == f"{rep.mean_accuracy:.2f}±{rep.std_accuracy:.2f}"


def test_param_count_formula(bench):
    root, manifest = bench
    cfg = make_cfg(root, manifest, "run-pc")
    rep = run_experiment(cfg)
    depth = cfg.pretrain.num_layers + 1
    assert rep.param_count == depth * 3 * cfg.pretrain.hidden_dim + depth


def test_history_csv_schema(bench):
    root, manifest = bench
    cfg = make_cfg(root, manifest, "run-hist")
    run_experiment(cfg)
    text = (Path(cfg.output_dir) / "history_seed0.csv").read_text().splitlines()
    assert text[0] == "epoch,loss_te,loss_fs,loss_tgcl,val_acc"
    first = text[1].split(",")
    assert int(first[0]) == 1 and all(math.isfinite(float(x)) for x in first[1:])


def test_stale_cache_detected(bench):
    root, manifest = bench
    cfg = make_cfg(root, manifest, "run-stale")
    run_experiment(cfg)
    (meta,) = (Path(cfg.output_dir) / "cache").glob("*.json")
    meta.write_text(meta.read_text().replace("source-a", "source-x"))
    with pytest.raises(StaleCacheError):
        run_experiment(cfg)


def test_explicit_checkpoint_skips_pretraining(bench, tmp_path):
    root, manifest = bench
    cfg = make_cfg(root, manifest, "run-ckpt")
    run_experiment(cfg)
    (ckpt,) = (Path(cfg.output_dir) / "cache").glob("*.ckpt")
    rep = run_experiment(make_cfg(root, manifest, "run-ckpt2"), ckpt_path=ckpt)
    assert rep.pretrain_steps == 0


def test_unknown_target_is_config_error(bench):
    root, manifest = bench
    cfg = make_cfg(root, manifest, "run-bad", target_domain="nope")
    with pytest.raises(ConfigError, match="nope"):
        run_experiment(cfg)


def test_seeds_must_be_nonempty(bench):
    root, manifest = bench
    with pytest.raises(Exception):
        make_cfg(root, manifest, "run-empty", seeds=[])


def test_ratio_one_matches_plain_run_per_seed(bench):
    root, manifest = bench
    cfg = make_cfg(root, manifest, "run-ratio")
    plain = run_experiment(cfg)
    r0, r1 = run_ratio_sweep(cfg, [0.0, 1.0])
    assert r1.per_seed_accuracy == plain.per_seed_accuracy
    assert r1.sweep_kind == "ratio" and r1.sweep_value == 1.0
    # ratio 0 is exactly few-shot-only mode
    fs_cfg = make_cfg(root, manifest, "run-fsonly")
    fs_cfg = fs_cfg.model_copy(update={"tune": fs_cfg.tune.model_copy(update={"tgcl_mode": "few-shot-only"})})
    fs = run_experiment(fs_cfg)
    assert r0.per_seed_accuracy == fs.per_seed_accuracy


def test_ratio_sweep_validates_range(bench):
    root, manifest = bench
    cfg = make_cfg(root, manifest, "run-ratio-bad")
    with pytest.raises(ConfigError):
        run_ratio_sweep(cfg, [0.0, 1.2])


def test_perturb_sweep_runs_and_zero_ratio_matches_plain(bench):
    root, manifest = bench
    cfg = make_cfg(root, manifest, "run-perturb")
    plain = run_experiment(cfg)
    feats = run_perturb_sweep(cfg, "features", [0.0, 0.5])
    assert feats[0].per_seed_accuracy == plain.per_seed_accuracy
    assert feats[1].sweep_kind == "perturb-features"
    edges = run_perturb_sweep(cfg, "edges", [0.5])
    assert len(edges) == 1
    with pytest.raises(ConfigError):
        run_perturb_sweep(cfg, "labels", [0.1])


def test_shots_sweep(bench):
    root, manifest = bench
    cfg = make_cfg(root, manifest, "run-shots")
    reports = run_shots_sweep(cfg, [1, 3])
    assert [r.shots for r in reports] == [1, 3]
    assert all(r.sweep_kind == "shots" for r in reports)


def test_merge_sweep_binary_targets(bench):
    root, manifest = bench
    cfg = make_cfg(root, manifest, "run-merge")
    reports = run_merge_sweep(cfg, [[0], [0, 2]])
    assert len(reports) == 2
    # merged targets are binary, so the prompt table has 2 class rows
    depth = cfg.pretrain.num_layers + 1
    assert all(r.param_count == depth * 2 * cfg.pretrain.hidden_dim + depth for r in reports)


def test_run_sweep_dispatch_and_validation(bench):
    root, manifest = bench
    cfg = make_cfg(root, manifest, "run-dispatch")
    with pytest.raises(ConfigError):
        run_sweep(cfg)
    cfg_r = cfg.model_copy(update={"sweeps": SweepSpec(kind="ratio", ratios=[0.0, 1.0])})
    assert len(run_sweep(cfg_r)) == 2
    cfg_bad = cfg.model_copy(update={"sweeps": SweepSpec(kind="perturb", ratios=[0.1])})
    with pytest.raises(ConfigError):
        run_sweep(cfg_bad)


def test_audit_report(bench):
    root, manifest = bench
    cfg = make_cfg(root, manifest, "run-audit", seeds=[0, 1, 2])
    audit = audit_complementary_labels(cfg)
    assert len(audit.per_seed_pivot_correctness) == 3
    assert 0.0 <= audit.mean_pivot_correctness <= 1.0
    assert abs(np.mean(audit.per_seed_pivot_correctness) - audit.mean_pivot_correctness) <= 1e-12


def test_cache_dir_env_override(bench, tmp_path, monkeypatch):
    root, manifest = bench
    monkeypatch.setenv("GFMATE_CACHE_DIR", str(tmp_path / "sharedcache"))
    cfg = make_cfg(root, manifest, "run-envcache")
    run_experiment(cfg)
    assert list((tmp_path / "sharedcache").glob("*.ckpt"))
    assert not (Path(cfg.output_dir) / "cache").exists()


def test_repretrain_per_seed_counts_steps(bench):
    root, manifest = bench
    cfg = make_cfg(root, manifest, "run-reseed", repretrain_per_seed=True, seeds=[0, 1])
    rep = run_experiment(cfg)
    assert rep.pretrain_steps == 2 * cfg.pretrain.epochs
