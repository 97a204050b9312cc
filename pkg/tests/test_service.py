from pathlib import Path

import pytest
from fastapi.testclient import TestClient

from gfmate.service import app


@pytest.fixture(scope="module")
def client():
    return TestClient(app)


@pytest.fixture(scope="module")
def workspace(tmp_path_factory, client):
    """Synthetic dataset + pre-trained checkpoint, built through the API."""
    root = tmp_path_factory.mktemp("svc")
    synth = client.post(
        "/synthetic", json={"out_dir": str(root / "data"), "seed": 0, "target_nodes": 120}
    )
    assert synth.status_code == 200
    manifest = synth.json()["manifest_path"]
    pre = client.post(
        "/pretrain",
        json={
            "manifest_path": manifest,
            "exclude": "target",
            "out_path": str(root / "enc.ckpt"),
            "pretrain": {"epochs": 30, "lr": 0.1, "batch_edges": 64, "hidden_dim": 12, "num_layers": 2},
        },
    )
    assert pre.status_code == 200
    return root, manifest, pre.json()["checkpoint_path"]


def experiment_payload(root, manifest, **overrides):
    cfg = {
        "manifest_path": manifest,
        "target_domain": "target",
        "shots": 1,
        "seeds": [0, 1],
        "pretrain": {"epochs": 30, "lr": 0.1, "batch_edges": 64, "hidden_dim": 12, "num_layers": 2},
        "tune": {"lr": 0.1, "max_epochs": 20, "patience": 20},
        "output_dir": str(root / "run"),
    }
    cfg.update(overrides)
    return cfg


def test_health(client):
    body = client.get("/health").json()
    assert body["status"] == "ok"


def test_pretrain_response_contract(workspace):
    root, _, ckpt = workspace
    assert Path(ckpt).exists()
    trace = Path(ckpt + ".loss.csv").read_text().splitlines()
    assert trace[0] == "epoch,loss"
    assert len(trace) == 31


def test_pretrain_unknown_exclude(client, workspace):
    root, manifest, _ = workspace
    resp = client.post(
        "/pretrain",
        json={"manifest_path": manifest, "exclude": "ghost", "out_path": str(root / "x.ckpt")},
    )
    assert resp.status_code == 400
    assert resp.json()["exit_code"] == 2


def test_run_experiment_route(client, workspace):
    root, manifest, ckpt = workspace
    resp = client.post(
        "/experiments/run",
        json={"config": experiment_payload(root, manifest), "ckpt_path": ckpt},
    )
    assert resp.status_code == 200
    body = resp.json()
    assert body["pretrain_steps"] == 0
    assert len(body["per_seed_accuracy"]) == 2
    assert "±" in body["display"]


def test_run_experiment_bad_target_maps_to_400(client, workspace):
    root, manifest, _ = workspace
    resp = client.post(
        "/experiments/run",
        json={"config": experiment_payload(root, manifest, target_domain="ghost")},
    )
    assert resp.status_code == 400
    assert resp.json()["error"] == "ConfigError"


def test_missing_manifest_maps_to_data_error(client, workspace):
    root, manifest, _ = workspace
    payload = experiment_payload(root, manifest, manifest_path=str(root / "nope.json"))
    resp = client.post("/experiments/run", json={"config": payload})
    assert resp.status_code in (404, 422, 500)


def test_sweep_route(client, workspace):
    root, manifest, ckpt = workspace
    cfg = experiment_payload(root, manifest, output_dir=str(root / "sweep"))
    cfg["sweeps"] = {"kind": "ratio", "ratios": [0.0, 1.0]}
    resp = client.post("/experiments/sweep", json={"config": cfg, "ckpt_path": ckpt})
    assert resp.status_code == 200
    reports = resp.json()["reports"]
    assert [r["sweep_value"] for r in reports] == [0.0, 1.0]


def test_audit_route(client, workspace):
    root, manifest, ckpt = workspace
    resp = client.post(
        "/experiments/audit-labels",
        json={"config": experiment_payload(root, manifest, output_dir=str(root / "audit")), "ckpt_path": ckpt},
    )
    assert resp.status_code == 200
    body = resp.json()
    assert 0.0 <= body["mean_pivot_correctness"] <= 1.0


def test_plot_route_and_missing_report(client, workspace, tmp_path):
    root, manifest, ckpt = workspace
    run_dir = root / "plotrun"
    resp = client.post(
        "/experiments/run",
        json={"config": experiment_payload(root, manifest, output_dir=str(run_dir)), "ckpt_path": ckpt},
    )
    assert resp.status_code == 200
    resp = client.post(
        "/plots",
        json={"report_paths": [str(run_dir / "report.json")], "out_dir": str(tmp_path / "plots")},
    )
    assert resp.status_code == 200
    (svg,) = resp.json()["files"]
    assert Path(svg).read_text().startswith("<?xml")
    resp = client.post(
        "/plots", json={"report_paths": [str(tmp_path / "ghost.json")], "out_dir": str(tmp_path)}
    )
    assert resp.status_code == 422


def test_request_validation_is_422(client):
    resp = client.post("/experiments/run", json={"config": {"manifest_path": 1}})
    assert resp.status_code == 422
