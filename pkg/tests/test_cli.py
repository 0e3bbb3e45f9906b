import json

import pytest

from services.experiment_runner import ExperimentConfig, ExperimentRunner
from synrdp_cli import EXIT_ASSERTION, EXIT_CONFIG, EXIT_OK, main
from utils.config_loader import ConfigError

SMALL_EXPERIMENT = """{
  "source": {"probs": [0.5, 0.25, 0.25]},
  "partition": {"blocks": [[0, 1], [2]]},
  "distortion": "hamming",
  "solver": {"restarts": 3, "seed": 0},
  "codec": {"n": 2000, "seed": 42},
  "sweep": {"d_targets": [0.1, 0.3], "p_targets": [0, 0.05, Infinity], "slopes": [-3.0, -1.0]},
  "battery": {"instances": 50, "oracle_points": []}
}
"""


@pytest.fixture
def config_file(tmp_path):
    path = tmp_path / "experiment.json"
    path.write_text(SMALL_EXPERIMENT)
    return path


def write_config(tmp_path, doc):
    path = tmp_path / "custom.json"
    path.write_text(json.dumps(doc))
    return path


def test_entropy_summary(config_file, tmp_path):
    out = tmp_path / "out"
    code = main(["entropy", str(config_file), "--out-dir", str(out), "-q"])
    assert code == EXIT_OK
    summary = json.loads((out / "entropy.json").read_text())
    assert summary["h"] == pytest.approx(1.5, abs=1e-12)
    assert summary["h_s"] == pytest.approx(0.8112781244591328, abs=1e-12)
    assert summary["syn_rate"] == summary["h_s"]


def test_unknown_key_exits_with_config_error(tmp_path, capsys):
    path = write_config(tmp_path, {"source": {"probs": [0.5, 0.5], "temperature": 1}})
    code = main(["entropy", str(path), "--out-dir", str(tmp_path / "out")])
    assert code == EXIT_CONFIG
    assert "source.temperature" in capsys.readouterr().err
    assert not (tmp_path / "out").exists()


def test_missing_config_and_bad_jobs(config_file):
    assert main(["entropy"]) == EXIT_CONFIG
    assert main(["entropy", str(config_file), "--jobs", "0"]) == EXIT_CONFIG


def test_config_flag_equivalent_to_positional(config_file, tmp_path):
    out = tmp_path / "flag"
    assert main(["entropy", "--config", str(config_file), "--out-dir", str(out), "-q"]) == EXIT_OK
    assert (out / "entropy.json").exists()


def test_singleton_codec_run_is_lossless(tmp_path):
    path = write_config(tmp_path, {
        "source": {"probs": [0.5, 0.25, 0.25]},
        "codec": {"n": 3000, "seed": 7},
    })
    out = tmp_path / "codec"
    assert main(["codec-run", str(path), "--out-dir", str(out), "-q"]) == EXIT_OK
    report = json.loads((out / "codec_run.json").read_text())
    assert report["expected_distortion"] == 0.0
    assert report["n"] == 3000
    assert len((out / "reconstruction.txt").read_text().splitlines()) == 3000
    assert (out / "codec_run.bin").read_bytes()[:4] == b"SRDP"


def test_seed_override_changes_codec_stream(config_file, tmp_path):
    main(["codec-run", str(config_file), "--out-dir", str(tmp_path / "a"), "-q"])
    main(["codec-run", str(config_file), "--out-dir", str(tmp_path / "b"), "--seed", "5", "-q"])
    assert (tmp_path / "a" / "codec_run.bin").read_bytes() != (tmp_path / "b" / "codec_run.bin").read_bytes()


def test_battery_is_reproducible(config_file, tmp_path):
    first, second = tmp_path / "first", tmp_path / "second"
    assert main(["all", str(config_file), "--out-dir", str(first), "-q"]) == EXIT_OK
    assert main(["all", str(config_file), "--out-dir", str(second), "-q"]) == EXIT_OK
    names = sorted(p.name for p in first.iterdir())
    assert names == sorted(p.name for p in second.iterdir())
    assert "battery.json" in names and "rdp_surface.csv" in names and "suites.json" in names
    for name in names:
        assert (first / name).read_bytes() == (second / name).read_bytes(), name
    battery = json.loads((first / "battery.json").read_text())
    assert battery["passed"]
    suites = battery["sections"]["suites"]["assertions"]
    assert {a["name"] for a in suites} >= {"semantic_entropy_below_entropy", "f_equals_kl_plus_delta_p"}
    assert all(a["residual"] <= a["tolerance"] for a in suites)


def test_parallel_sweep_matches_serial(config_file, tmp_path):
    serial, parallel = tmp_path / "serial", tmp_path / "parallel"
    assert main(["rdp-surface", str(config_file), "--out-dir", str(serial), "-q"]) == EXIT_OK
    assert main(["rdp-surface", str(config_file), "--out-dir", str(parallel), "--jobs", "4", "-q"]) == EXIT_OK
    assert (serial / "rdp_surface.csv").read_bytes() == (parallel / "rdp_surface.csv").read_bytes()


def test_json_format_sweep(config_file, tmp_path):
    out = tmp_path / "json"
    assert main(["rd-curve", str(config_file), "--out-dir", str(out), "--format", "json", "-q"]) == EXIT_OK
    rows = json.loads((out / "rd_curve.json").read_text())
    assert [r["slope"] for r in rows] == [-3.0, -1.0]
    assert rows[0]["achieved_d"] < rows[1]["achieved_d"]


def test_failed_assertion_exits_one(tmp_path):
    path = write_config(tmp_path, {
        "source": {"probs": [0.5, 0.3, 0.2]},
        "solver": {"max_iters": 1},
    })
    assert main(["degenerate", str(path), "--out-dir", str(tmp_path / "deg"), "-q"]) == EXIT_ASSERTION
    report = json.loads((tmp_path / "deg" / "degenerate.json").read_text())
    assert not report["passed"]


def test_config_errors_carry_field_paths():
    with pytest.raises(ConfigError) as err:
        ExperimentConfig.from_dict({"source": {"probs": [0.5, 0.5]}, "partition": {"blocks": [[0]]}})
    assert err.value.field_path.startswith("partition")
    with pytest.raises(ConfigError) as err:
        ExperimentConfig.from_dict({"source": {"probs": [0.5, 0.5]}, "codec": {"n": 0}})
    assert err.value.field_path == "codec.n"
    with pytest.raises(ConfigError) as err:
        ExperimentConfig.from_dict({"source": {"probs": [0.5, 0.5]}, "sweep": {"slopes": [1.0]}})
    assert err.value.field_path == "sweep.slopes[0]"


def test_runner_rejects_unknown_command(config_file):
    cfg = ExperimentConfig.load(config_file)
    with pytest.raises(ValueError):
        ExperimentRunner.run("plot", cfg)


def test_suites_subcommand_writes_residuals(config_file, tmp_path):
    out = tmp_path / "suites"
    assert main(["suites", str(config_file), "--out-dir", str(out), "-q"]) == EXIT_OK
    report = json.loads((out / "suites.json").read_text())
    assert report["instances"] == 50 and report["seed"] == 0
    assert all(c["passed"] and c["instances"] in (50, 5) for c in report["checks"])
    assert not any(c["name"].startswith("matches_exhaustive_search") for c in report["checks"])


def test_battery_section_validation():
    base = {"source": {"probs": [0.5, 0.5]}}
    for section, path in [
        ({"instances": 0}, "battery.instances"),
        ({"oracle_points": [[0.1]]}, "battery.oracle_points[0]"),
        ({"oracle_points": [[0.1, -1.0]]}, "battery.oracle_points[0]"),
        ({"rounds": 3}, "battery.rounds"),
    ]:
        with pytest.raises(ConfigError) as err:
            ExperimentConfig.from_dict({**base, "battery": section})
        assert err.value.field_path == path
    cfg = ExperimentConfig.from_dict(base)
    assert cfg.battery.instances == 1000 and len(cfg.battery.oracle_points) == 4


def test_lagrangian_grid_lands_on_surface(tmp_path):
    path = write_config(tmp_path, {
        "source": {"probs": [0.5, 0.5]},
        "solver": {"lagrange_grid": [[4.0, 0.0], [2.0, 1.0]]},
        "sweep": {"d_targets": [0.1], "p_targets": [0.05, float("inf")]},
    })
    out = tmp_path / "lagr"
    assert main(["rdp-surface", str(path), "--out-dir", str(out), "--format", "json", "-q"]) == EXIT_OK
    rows = json.loads((out / "rdp_lagrangian.json").read_text())
    assert [(r["lambda_d"], r["lambda_p"]) for r in rows] == [(4.0, 0.0), (2.0, 1.0)]
    # slope -4 bits on the binary curve sits at D = 1/17
    assert rows[0]["achieved_d"] == pytest.approx(1 / 17, abs=1e-3)
    assert rows[0]["rate"] == pytest.approx(0.677243, abs=1e-4)
    for r in rows:
        assert abs(r["rate"] - r["surface_rate"]) <= 1e-3


def test_codec_run_reads_symbol_file(tmp_path):
    (tmp_path / "symbols.txt").write_text("0\n2\n1\n\n2\n0\n")
    path = write_config(tmp_path, {
        "source": {"probs": [0.5, 0.25, 0.25]},
        "partition": {"blocks": [[0, 1], [2]]},
        "codec": {"symbols_path": "symbols.txt", "seed": 3},
    })
    out = tmp_path / "file_codec"
    assert main(["codec-run", str(path), "--out-dir", str(out), "-q"]) == EXIT_OK
    recon = [int(s) for s in (out / "reconstruction.txt").read_text().split()]
    assert len(recon) == 5
    assert recon[1] == 2 and recon[3] == 2
    assert set(recon[i] for i in (0, 2, 4)) <= {0, 1}
    assert json.loads((out / "codec_run.json").read_text())["n"] == 5


def test_symbol_file_errors_are_config_errors(tmp_path, capsys):
    (tmp_path / "bad.txt").write_text("0\n7\n")
    path = write_config(tmp_path, {
        "source": {"probs": [0.5, 0.25, 0.25]},
        "codec": {"symbols_path": "bad.txt"},
    })
    assert main(["codec-run", str(path), "--out-dir", str(tmp_path / "x"), "-q"]) == EXIT_CONFIG
    assert "codec.symbols_path" in capsys.readouterr().err
    with pytest.raises(ConfigError) as err:
        ExperimentConfig.from_dict({"source": {"probs": [0.5, 0.5]}, "codec": {"symbols_path": "missing.txt"}},
                                   base_dir=tmp_path)
    assert err.value.field_path == "codec.symbols_path"


def test_unconverged_rd_points_fail_the_run(tmp_path, capsys):
    path = write_config(tmp_path, {
        "source": {"probs": [0.5, 0.3, 0.2]},
        "solver": {"max_iters": 1},
        "sweep": {"slopes": [-3.0]},
    })
    out = tmp_path / "rd"
    assert main(["rd-curve", str(path), "--out-dir", str(out), "--format", "json", "-q"]) == EXIT_ASSERTION
    assert "rd_points_converged" in capsys.readouterr().err
    rows = json.loads((out / "rd_curve.json").read_text())
    assert rows[0]["converged"] is False
