import csv
import json
from pathlib import Path

import numpy as np
import pytest
import yaml
from hypothesis import given
from hypothesis import strategies as st

from advsep.attack import AttackSpec, generate_noise_set, write_noise_csv
from advsep.exceptions import ConfigError, ExperimentError, IngestError
from advsep.exphar import ExperimentConfig, emit_report, ingest_noise_csv, load_report, run_experiment
from advsep.exphar.cli import main
from advsep.exphar.report import NO_TRIALS, ExperimentReport, aggregate, criterion, read_flat_csv
from advsep.model import init_network, two_cluster_dataset
from advsep.numerics import make_rng

CONFIGS = Path(__file__).resolve().parents[1] / "configs"

SMALL = {
    "init_separability": {"kind": "init_separability", "dims": {"d": 32, "m": 128, "n": 20, "n_test": 20},
                          "seeds": {"count": 2}},
    "ntk_separability": {"kind": "ntk_separability", "dims": {"d": 32, "m": 256, "n": 20},
                         "seeds": {"count": 2}},
    "corollary_adv_examples": {"kind": "corollary_adv_examples", "dims": {"d": 64, "m": 128, "n": 10}},
    "large_eta": {"kind": "large_eta", "dims": {"d": 32, "m": 128, "n": 64}},
    "train_and_probe": {"kind": "train_and_probe", "dims": {"d": 8, "m": 64, "n": 40, "n_test": 20},
                        "seeds": {"count": 2}, "train": {"lr": 0.1, "steps": 30, "snapshot_every": 10},
                        "learning_rates": [0.1, 1.0],
                        "attacks": [{"name": "sign", "method": "sign_linf", "eta": 0.1, "norm": "linf"}]},
    "theory_suite": {"kind": "theory_suite",
                     "theory": {"checks": [{"check": "moments", "d": 16, "m": 32, "trials": 500},
                                           {"check": "chi_square", "d": 16, "trials": 500, "z": 2.0,
                                            "side": "upper"}]}},
}


def write_yaml(path, data):
    path.write_text(yaml.safe_dump(data))
    return path


# -- config --------------------------------------------------------------------


def test_invalid_config_lists_every_problem():
    raw = {"kind": "init_separability", "dims": {"d": -1, "n": 1}, "seeds": {"count": 0},
           "attack": {"method": "bogus"}, "criteria": {"nope": 1}, "output": {"formats": ["pdf"]}, "foo": 1}
    with pytest.raises(ConfigError) as err:
        ExperimentConfig.from_dict(raw)
    diag = err.value.diagnostics
    for key in ("dims.d", "dims.m", "dims.n", "seeds.count", "attack", "criteria.nope", "output.formats", "foo"):
        assert key in diag, key
    assert "dims.d" in str(err.value)


@pytest.mark.parametrize("raw,key", [
    ({"kind": "sweep"}, "kind"),
    ([1, 2], "<root>"),
    ({"kind": "train_and_probe", "dims": {"d": 4, "m": 4, "n": 4}}, "train"),
    ({"kind": "corollary_adv_examples", "dims": {"d": 8, "m": 4, "n": 8}}, "dims.n"),
    ({"kind": "theory_suite", "theory": {"checks": [{"check": "chi_square", "d": 4, "trials": 9,
                                                     "z": 2.0, "side": "lower"}]}}, "theory.checks[0].z"),
    ({"kind": "theory_suite", "theory": {"checks": [{"check": "h_norm", "d": 4, "trials": 9}]}},
     "theory.checks[0].m"),
    ({"kind": "ingest_and_probe"}, "ingest.path"),
    ({"kind": "large_eta", "dims": {"d": 4, "m": 4, "n": 4}, "n_jobs": 0}, "n_jobs"),
    ({"kind": "large_eta", "dims": {"d": 4, "m": 4, "n": 4}, "data": {"separation": float("nan")}},
     "data.separation"),
])
def test_config_diagnostics(raw, key):
    with pytest.raises(ConfigError) as err:
        ExperimentConfig.from_dict(raw)
    assert key in err.value.diagnostics


def test_config_load_errors(tmp_path):
    with pytest.raises(ConfigError, match="does not exist"):
        ExperimentConfig.load(tmp_path / "none.yaml")
    (tmp_path / "bad.yaml").write_text("kind: [unclosed")
    with pytest.raises(ConfigError, match="not valid YAML"):
        ExperimentConfig.load(tmp_path / "bad.yaml")


@pytest.mark.parametrize("path", sorted(CONFIGS.glob("*.yaml")), ids=lambda p: p.stem)
def test_shipped_configs_round_trip(path):
    cfg = ExperimentConfig.load(path)
    assert ExperimentConfig.from_dict(cfg.to_dict()) == cfg
    assert ExperimentConfig.from_dict(yaml.safe_load(cfg.to_yaml())) == cfg


@given(d=st.integers(1, 4096), m=st.integers(1, 4096), n=st.integers(2, 500), base=st.integers(0, 2**31),
       count=st.integers(1, 50), sep=st.floats(0, 10), eta=st.floats(1e-3, 10))
def test_config_round_trip_property(d, m, n, base, count, sep, eta):
    cfg = ExperimentConfig.from_dict({"kind": "init_separability", "dims": {"d": d, "m": m, "n": n},
                                      "seeds": {"base": base, "count": count}, "data": {"separation": sep},
                                      "attack": {"eta": eta}})
    assert ExperimentConfig.from_dict(cfg.to_dict()) == cfg
    assert cfg.seeds == list(range(base, base + count))


def test_criteria_defaults_can_be_overridden():
    cfg = ExperimentConfig.from_dict({**SMALL["init_separability"], "criteria": {"separable_seed_fraction": 0.5}})
    assert cfg.criteria["separable_seed_fraction"] == 0.5
    assert cfg.criteria["probe_test_accuracy"] == 0.99


# -- reports -------------------------------------------------------------------


@pytest.fixture(scope="module")
def small_reports():
    return {k: run_experiment(ExperimentConfig.from_dict(v), write=False, timestamp="t") for k, v in SMALL.items()}


@pytest.mark.parametrize("kind", sorted(SMALL))
def test_every_kind_runs_and_is_finite(small_reports, kind):
    report = small_reports[kind]
    text = report.to_json()
    assert "NaN" not in text and "Infinity" not in text
    assert report.criteria
    assert all(isinstance(c["passed"], bool) for c in report.criteria)


def test_report_json_csv_json_round_trip(small_reports, tmp_path):
    for kind, report in small_reports.items():
        out = tmp_path / kind
        emit_report(report, {"json", "csv"}, out)
        assert read_flat_csv(out / "report.csv") == json.loads((out / "report.json").read_text())
        assert load_report(out).to_dict() == report.to_dict()


def test_empty_report_has_no_trials_marker(tmp_path):
    agg = aggregate([], ["min_margin"])
    assert agg["status"] == NO_TRIALS and agg["n_seeds"] == 0 and agg["mean_min_margin"] == 0.0
    report = ExperimentReport(kind="init_separability", config={}, aggregates=agg)
    paths = emit_report(report, {"json", "csv", "plotdata"}, tmp_path)
    assert json.loads(paths["json"][0].read_text())["aggregates"]["status"] == NO_TRIALS
    assert NO_TRIALS in (tmp_path / "per_seed.csv").read_text()
    assert paths["plotdata"] == []


def test_plotdata_one_row_per_snapshot(small_reports, tmp_path):
    paths = emit_report(small_reports["train_and_probe"], {"plotdata"}, tmp_path)["plotdata"]
    assert len(paths) == 2 * 3
    for p in paths:
        with p.open() as fh:
            rows = list(csv.reader(fh))
        assert rows[0][0] == "step"
        assert [int(r[0]) for r in rows[1:]] == [0, 10, 20, 30]


def test_criterion_helper():
    assert criterion("x", 0.5, 0.4, ">=")["passed"]
    assert not criterion("x", None, 0.4, ">=")["passed"]
    with pytest.raises(ValueError):
        criterion("x", 1, 1, "==")


def test_emit_report_surfaces_path(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("")
    with pytest.raises(OSError, match="file"):
        emit_report(ExperimentReport(kind="large_eta", config={}), {"json"}, blocker / "sub")


# -- replay and determinism ------------------------------------------------------


def test_same_config_twice_is_byte_identical(tmp_path):
    raw = {**SMALL["init_separability"], "output": {"dir": str(tmp_path / "run"), "save_noise": True}}
    cfg = ExperimentConfig.from_dict(raw)

    def snapshot():
        run_experiment(cfg, timestamp="2000-01-01T00:00:00+00:00")
        return {p.relative_to(tmp_path): p.read_bytes() for p in sorted((tmp_path / "run").rglob("*")) if p.is_file()}

    first = snapshot()
    assert any("noise" in str(k) for k in first)
    assert snapshot() == first


def test_replay_from_config_echo(small_reports):
    for report in small_reports.values():
        replay = run_experiment(ExperimentConfig.from_dict(report.config), write=False)
        assert replay.results() == report.results()


def test_n_jobs_parity():
    raw = SMALL["ntk_separability"]
    serial = run_experiment(ExperimentConfig.from_dict(raw), write=False)
    parallel = run_experiment(ExperimentConfig.from_dict({**raw, "n_jobs": 2}), write=False)
    assert serial.per_seed == parallel.per_seed and serial.aggregates == parallel.aggregates


def test_errors_carry_seed_context():
    raw = {**SMALL["ntk_separability"], "seeds": {"base": 41, "count": 1},
           "perturbation": {"source": "train"}, "train": {"lr": 1e9, "steps": 5}}
    with pytest.raises(ExperimentError, match="seed 41") as err:
        run_experiment(ExperimentConfig.from_dict(raw), write=False)
    assert err.value.seed == 41


# -- ingestion -------------------------------------------------------------------


def generated_noise(d=12, n=15, seed=0):
    rng = make_rng(seed)
    p = init_network(d, 64, rng)
    return generate_noise_set(p, two_cluster_dataset(n, d, 0.5, rng), AttackSpec(), seed)


def test_ingest_round_trip(tmp_path):
    ns = generated_noise()
    path, _ = write_noise_csv(ns, tmp_path / "n.csv")
    back = ingest_noise_csv(path, expected_dim=12)
    assert np.allclose(back.R, ns.R, rtol=1e-12, atol=0)
    assert np.array_equal(back.y, ns.y) and np.array_equal(back.sample_ids, ns.sample_ids)
    assert back.spec == ns.spec and back.residual_factors is None
    assert back.fingerprint["source"] == "external" and back.fingerprint["upstream"] == ns.fingerprint


def test_ingest_nan_row_is_named(tmp_path):
    path, _ = write_noise_csv(generated_noise(), tmp_path / "n.csv")
    lines = path.read_text().splitlines()
    cells = lines[4].split(",")
    cells[2] = "nan"
    lines[4] = ",".join(cells)
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(IngestError, match="row 5") as err:
        ingest_noise_csv(path)
    assert err.value.row == 5 and "r_3" in str(err.value)


@pytest.mark.parametrize("body,msg", [
    ("", "empty file"),
    ("a,b\n", "header"),
    ("r_1,r_2,y,sample_id\n", "no data rows"),
    ("r_1,r_2,y,sample_id\n1,2,1\n", "malformed"),
    ("r_1,r_2,y,sample_id\n1,x,1,0\n", "non-numeric"),
    ("r_1,r_2,y,sample_id\n1,2,0.5,0\n", "not an integer"),
    ("r_1,r_2,y,sample_id\n1,2,-1,0\n1,2,3,1\n", "labels"),
])
def test_ingest_errors(tmp_path, body, msg):
    path = tmp_path / "bad.csv"
    path.write_text(body)
    with pytest.raises(IngestError, match=msg):
        ingest_noise_csv(path)


def test_ingest_dimension_mismatch_and_missing(tmp_path):
    path, _ = write_noise_csv(generated_noise(), tmp_path / "n.csv")
    with pytest.raises(IngestError, match="dimension mismatch"):
        ingest_noise_csv(path, expected_dim=13)
    with pytest.raises(IngestError, match="does not exist"):
        ingest_noise_csv(tmp_path / "missing.csv")


def test_ingest_multiclass_smoke(tmp_path):
    rng = make_rng(5)
    n, d = 1000, 3072
    R = rng.standard_normal((n, d))
    y = np.arange(n) % 10
    path = tmp_path / "ext.csv"
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"r_{j + 1}" for j in range(d)] + ["y", "sample_id"])
        for i in range(n):
            w.writerow([f"{v:.6g}" for v in R[i]] + [y[i], i])
    cfg = ExperimentConfig.from_dict({"kind": "ingest_and_probe", "ingest": {"path": str(path),
                                                                             "expected_dim": d}})
    report = run_experiment(cfg, write=False)
    (row,) = report.per_seed
    assert row["classes"] == 10 and row["n_train"] + row["n_test"] == n and row["d"] == d
    assert 0 <= row["probe_test_accuracy"] <= 1 and row["probe_train_accuracy"] > row["probe_test_accuracy"]


# -- CLI ---------------------------------------------------------------------------


def test_cli_run_report_verify(tmp_path, capsys):
    cfg = write_yaml(tmp_path / "c.yaml", SMALL["corollary_adv_examples"])
    run_dir = tmp_path / "run"
    assert main(["run", str(cfg), "--out", str(run_dir)]) == 0
    assert "[PASS] separable_seed_fraction" in capsys.readouterr().out
    assert (run_dir / "config.yaml").exists() and (run_dir / "report.json").exists()

    assert main(["report", str(run_dir), "--format", "json"]) == 0
    assert json.loads(capsys.readouterr().out)["kind"] == "corollary_adv_examples"
    for p in run_dir.glob("plot_*.csv"):
        p.unlink()
    assert main(["report", str(run_dir), "--format", "plotdata"]) == 0
    assert (run_dir / "plot_min_margin_by_seed.csv").exists()

    assert main(["verify", str(run_dir)]) == 0
    assert "reproduces" in capsys.readouterr().out

    data = json.loads((run_dir / "report.json").read_text())
    data["per_seed"][0]["min_margin"] += 1e-12
    (run_dir / "report.json").write_text(json.dumps(data))
    assert main(["verify", str(run_dir)]) == 3
    assert "per_seed/0/min_margin" in capsys.readouterr().out


def test_cli_failed_criterion_exit_1(tmp_path):
    raw = {**SMALL["large_eta"], "criteria": {"perturbation_constant": 1e-6}}
    assert main(["run", str(write_yaml(tmp_path / "c.yaml", raw)), "--out", str(tmp_path / "r")]) == 1


def test_cli_input_errors_exit_2(tmp_path, capsys):
    bad = write_yaml(tmp_path / "bad.yaml", {"kind": "init_separability", "dims": {"d": -1}})
    assert main(["run", str(bad)]) == 2
    err = capsys.readouterr().err
    assert "dims.d" in err and "dims.m" in err
    assert main(["report", str(tmp_path / "nowhere")]) == 2
    assert main(["verify", str(tmp_path / "nowhere")]) == 2
    probe = write_yaml(tmp_path / "p.yaml", {"kind": "ingest_and_probe", "ingest": {"path": "x"}})
    assert main(["ingest", str(tmp_path / "missing.csv"), "--probe", str(probe)]) == 2


def test_cli_ingest_verb(tmp_path, capsys):
    path, _ = write_noise_csv(generated_noise(d=10, n=40), tmp_path / "n.csv")
    probe = write_yaml(tmp_path / "p.yaml", {"kind": "init_separability", "dims": {"d": 10, "m": 8, "n": 4},
                                             "probe": {"max_iter": 20}})
    assert main(["ingest", str(path), "--probe", str(probe), "--out", str(tmp_path / "r")]) == 0
    report = load_report(tmp_path / "r")
    assert report.kind == "ingest_and_probe" and report.config["probe"]["max_iter"] == 20
    assert report.fingerprints[0]["source"] == "external"


def test_cli_default_output_root(tmp_path, monkeypatch):
    monkeypatch.setenv("ADVSEP_OUTPUT_ROOT", str(tmp_path / "root"))
    cfg = write_yaml(tmp_path / "c.yaml", SMALL["large_eta"])
    assert main(["run", str(cfg)]) == 0
    (run_dir,) = (tmp_path / "root").iterdir()
    assert run_dir.name.startswith("large_eta-") and (run_dir / "report.json").exists()
