"""Manifests, pipeline bundles, trajectory comparison, CLI verbs."""

import hashlib
import json

import numpy as np
import pytest

from spiraldrift.cli import (
    DeviationReport,
    ExperimentManifest,
    canonical_manifest,
    compare_trajectories,
    main,
    run_pipeline,
)
from spiraldrift.driftlaw import DriftPath
from spiraldrift.solver import ExperimentConfig, canonical_config


def micro_config(**overrides):
    kw = dict(a=1.3, b=0.19, eps=0.025, A=0.1, B=0.0, L=16.0, dx=0.1,
              D_v=0.0, D_L=1.0, D_T=1.0, D0=1.0, t_end=20.0,
              seed_position=(0.0, 0.0), chirality=1, seed_margin=2.0,
              name="micro")
    kw.update(overrides)
    return ExperimentConfig(**kw)


# ---------------------------------------------------------------------------
# comparison
# ---------------------------------------------------------------------------

def _path(t, x, y):
    return DriftPath(np.asarray(t, float), np.asarray(x, float), np.asarray(y, float))


def test_compare_identical_paths():
    t = np.linspace(0, 10, 50)
    p = _path(t, np.cos(t), np.sin(t))
    rep = compare_trajectories(p, p)
    assert rep.max == 0.0 and rep.mean == 0.0 and rep.terminal == 0.0


def test_compare_constant_offset():
    t = np.linspace(0, 10, 200)
    a = _path(t, t * 0.1, np.zeros_like(t))
    b = _path(t, t * 0.1, np.full_like(t, 0.25))
    rep = compare_trajectories(a, b)
    assert rep.max == pytest.approx(0.25, abs=1e-12)
    assert rep.mean == pytest.approx(0.25, abs=1e-12)
    assert rep.terminal == pytest.approx(0.25, abs=1e-12)


def test_compare_requires_time_overlap():
    a = _path([0, 1, 2], [0, 1, 2], [0, 0, 0])
    b = _path([5, 6, 7], [0, 1, 2], [0, 0, 0])
    with pytest.raises(ValueError):
        compare_trajectories(a, b)


def test_compare_reparameterization_invariant():
    # same geometric curve traversed at different speeds: deviation stays 0
    t = np.linspace(0, 10, 300)
    a = _path(t, t, t**2 / 10)
    s = np.linspace(0, 10, 77) ** 1.3 / 10 ** 0.3
    b = _path(np.linspace(0, 10, 77), s, s**2 / 10)
    rep = compare_trajectories(a, b)
    assert rep.mean < 2e-3  # polyline discretization only


# ---------------------------------------------------------------------------
# manifests
# ---------------------------------------------------------------------------

def test_canonical_manifest_expectations_validate():
    for name in ("fig3", "fig4a", "fig4b", "fig5a", "fig5b"):
        m = canonical_manifest(name)
        assert m.config.name == name
        m.validate()


def test_manifest_schema_rejects_unknown_keys():
    m = ExperimentManifest(name="bad", config=micro_config(),
                           expectations={"definitely_not_a_key": 1})
    with pytest.raises(Exception):
        m.validate()


def test_manifest_json_roundtrip(tmp_path):
    m = canonical_manifest("fig4a")
    path = tmp_path / "manifest.json"
    m.save(path)
    loaded = ExperimentManifest.load(path)
    assert loaded.name == m.name
    assert loaded.config == m.config
    assert loaded.expectations == m.expectations


# ---------------------------------------------------------------------------
# pipeline bundles
# ---------------------------------------------------------------------------

def test_pipeline_geometry_only_bundle(tmp_path):
    m = ExperimentManifest(name="geomonly", config=micro_config(t_end=0.0))
    out = tmp_path / "bundle"
    summary = run_pipeline(m, out)
    assert summary["passed"] is True
    assert summary["stages"]["simulate"].startswith("skipped")
    assert (out / "ricci.bin").exists()
    assert (out / "ricci.csv").exists()
    assert (out / "summary.json").exists()
    assert not (out / "tip.csv").exists()


def test_pipeline_bundle_reproducible(tmp_path):
    m = ExperimentManifest(name="geomonly", config=micro_config(t_end=0.0))
    h = []
    for sub in ("one", "two"):
        out = tmp_path / sub
        run_pipeline(m, out)
        h.append(hashlib.sha256((out / "ricci.csv").read_bytes()).hexdigest())
    assert h[0] == h[1]


@pytest.fixture(scope="module")
def micro_bundle(tmp_path_factory):
    out = tmp_path_factory.mktemp("bundle") / "micro"
    m = ExperimentManifest(name="micro", config=micro_config(t_end=25.0),
                           settle_rotations=1.0)
    summary = run_pipeline(m, out)
    return out, summary


def test_pipeline_full_bundle_contents(micro_bundle):
    out, summary = micro_bundle
    assert summary["stages"]["geometry"] == "ok"
    assert summary["stages"]["simulate"] in ("ok", "boundary")
    assert summary["stages"]["extract"] == "ok"
    assert (out / "tip.csv").exists()
    assert (out / "drift.csv").exists()
    assert (out / "summary.json").exists()
    assert (out / "run" / "run.json").exists()
    meta = json.loads((out / "run" / "run.json").read_text())
    assert meta["config"]["a"] == 1.3
    assert meta["dt"] <= 0.9 * 0.1**2 / 4.0 + 1e-15
    # bundle self-describes: the manifest is embedded in the summary
    assert summary["manifest"]["experiment"]["L"] == 16.0


def test_pipeline_fit_and_prediction_stages(micro_bundle):
    out, summary = micro_bundle
    # the micro run is short; fit may be noisy but the stages must complete
    assert summary["stages"]["fit"] == "ok"
    assert (out / "fit.json").exists()
    fit = json.loads((out / "fit.json").read_text())
    assert "q1" in fit["estimates"] and "input_digest" in fit
    assert summary["stages"].get("predict") in ("ok", "exited")
    assert (out / "prediction.csv").exists()
    assert "comparison" in summary


def test_cli_compare_verb(tmp_path, capsys):
    t = np.linspace(0, 5, 40)
    a = _path(t, t, np.zeros_like(t))
    b = _path(t, t, np.full_like(t, 0.1))
    pa, pb = tmp_path / "a.csv", tmp_path / "b.csv"
    a.to_csv(pa)
    b.to_csv(pb)
    rc = main(["compare", str(pa), str(pb)])
    assert rc == 0
    rep = json.loads(capsys.readouterr().out)
    assert rep["max"] == pytest.approx(0.1)


def test_cli_geometry_verb(tmp_path, capsys):
    from spiraldrift.geometry import SurfaceSpec

    spec_path = tmp_path / "surface.json"
    SurfaceSpec.from_config({
        "shape": {"kind": "paraboloid", "A": 0.1, "sign": -1},
        "fiber": {"kind": "constant", "alpha0": 0.0},
        "dL": 1.0, "dT": 1.0, "D0": 1.0, "L": 8.0, "dx": 0.1,
    }).save(spec_path)
    rc = main(["geometry", str(spec_path), "--out", str(tmp_path / "geo"), "--csv"])
    assert rc == 0
    from spiraldrift.gridio import load_grid

    ricci, meta = load_grid(tmp_path / "geo" / "ricci.bin")
    assert meta["nx"] == 81
    assert abs(ricci[40, 40] - 0.08) < 1e-10


def test_cli_predict_verb(tmp_path):
    from spiraldrift.driftlaw import MobilityCoefficients
    from spiraldrift.geometry import SurfaceSpec

    spec_path = tmp_path / "surface.json"
    SurfaceSpec.from_config({
        "shape": {"kind": "paraboloid", "A": 0.1, "sign": -1},
        "fiber": {"kind": "constant", "alpha0": 0.0},
        "dL": 1.0, "dT": 1.0, "D0": 1.0, "L": 20.0, "dx": 0.1,
    }).save(spec_path)
    q_path = tmp_path / "q.json"
    MobilityCoefficients(q1=0.855, q2=-0.386, omega0=1.0).save(q_path)
    out = tmp_path / "pred.csv"
    rc = main(["predict", str(spec_path), str(q_path),
               "--x0", "3.0", "0.0", "--t-end", "50", "--out", str(out)])
    assert rc == 0
    path = DriftPath.from_csv(out)
    r = np.hypot(path.x, path.y)
    assert r[-1] > r[0]  # q1 > 0 drifts outward on the dome


def test_cli_simulate_geometry_only(tmp_path):
    cfg_path = tmp_path / "cfg.json"
    micro_config(t_end=0.0).save(cfg_path)
    rc = main(["simulate", str(cfg_path), "--out", str(tmp_path / "out")])
    assert rc == 0
    assert (tmp_path / "out" / "ricci.bin").exists()
