"""End-to-end tests: settings, experiment configs, monitoring, orchestration and the CLI."""

import json
from pathlib import Path

import pytest
import yaml
from click.testing import CliRunner
from pydantic import ValidationError

from src.benchmark import evaluate_estimator, noise_sweep, run_benchmark, run_coercivity
from src.config import Settings, get_settings, settings
from src.core.errors import ConfigError
from src.core.io import read_estimator, read_results, write_results
from src.main import cli, main
from src.models import CellStatus, ExperimentConfig, load_config
from src.monitoring import MetricsCollector, StageMonitor

CONFIG_DIR = Path(__file__).parent / "configs"


def tiny_config(**learning):
    """Opinion dynamics small enough to run every stage in a few seconds."""
    config = {
        "name": "tiny-opinion",
        "seed": 7,
        "system": {
            "d": 1,
            "type_sizes": [4],
            "kernels": [[{"name": "opinion"}]],
            "sampler": [{"kind": "uniform_interval", "lo": 0.0, "hi": 2.0}],
            "t_start": 0.0,
            "t_end": 0.1,
            "t_final": 0.2,
            "L": 3,
        },
        "learning": {
            "degree": 0,
            "regularity": 1.0,
            "multiplier": 2.0,
            "R": 3.0,
            "M": [4, 8, 16],
            "trials": 1,
            "velocity": "exact",
            "noise": "additive",
            "sigma": 0.0,
            **learning,
        },
        "measure": {"M_rho": 32, "bins": 50},
        "prediction": {"ics": 2, "nodes": 10, "large_n_factor": 2},
        "coercivity": {"M": 64, "partitions": [2, 3]},
    }
    return config


@pytest.fixture
def config_file(tmp_path):
    path = tmp_path / "tiny.json"
    path.write_text(json.dumps(tiny_config()), encoding="utf-8")
    return path


# Settings and configuration


def test_settings_defaults_and_environment(monkeypatch):
    assert get_settings() is settings
    assert settings.chunk_size & (settings.chunk_size - 1) == 0
    monkeypatch.setenv("KLEARN_THREADS", "3")
    assert Settings().threads == 3
    with pytest.raises(ValidationError):
        Settings(chunk_size=3)


def test_bundled_configs_load():
    names = set()
    for path in sorted(CONFIG_DIR.glob("*.json")):
        config = load_config(path)
        spec = config.system.build_spec()
        assert spec.K == config.system.K
        names.add(config.name)
    assert len(names) == 4


def test_ci_profile_scales_down():
    config = load_config(CONFIG_DIR / "opinion.json", profile="ci")
    assert config.learning.M == [16, 32, 64, 128, 256]
    assert config.learning.trials == 3
    assert config.measure.M_rho == 10000
    assert config.coercivity.M == 10000
    assert config.prediction.ics == 4
    full = load_config(CONFIG_DIR / "opinion.json", profile="full")
    assert full.learning.M[-1] == 8192


def test_yaml_config(tmp_path):
    path = tmp_path / "tiny.yaml"
    path.write_text(yaml.safe_dump(tiny_config()), encoding="utf-8")
    assert load_config(path).name == "tiny-opinion"


@pytest.mark.parametrize(
    "mutate",
    [
        lambda c: c["system"]["kernels"][0][0].update(name="no-such-kernel"),
        lambda c: c["system"]["kernels"][0][0].update(name="power", params={"c0": 1.0}),
        lambda c: c["learning"].update(M=[8, 4]),
        lambda c: c["learning"].update(M=[1, 4]),
        lambda c: c["learning"].update(velocity="finite_difference"),
        lambda c: c["system"].update(type_sizes=[2, 2]),
        lambda c: c["system"].update(t_final=0.05),
        lambda c: c["system"]["sampler"][0].update(lo=3.0),
    ],
)
def test_invalid_configs_are_rejected(mutate):
    raw = tiny_config()
    mutate(raw)
    with pytest.raises(ValidationError):
        ExperimentConfig.model_validate(raw)


def test_load_config_errors(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.json")
    broken = tmp_path / "broken.json"
    broken.write_text("{not json", encoding="utf-8")
    with pytest.raises(ConfigError):
        load_config(broken)


# Monitoring


def test_stage_monitor_records_outcomes():
    collector = MetricsCollector()
    with StageMonitor(collector, "measure") as monitor:
        pass
    assert monitor.status == "completed"
    with pytest.raises(ValueError):
        with StageMonitor(collector, "solve"):
            raise ValueError("boom")
    summary = collector.get_stage_summary()
    assert summary["measure"]["failed"] == 0
    assert summary["solve"]["count"] == 1
    assert summary["solve"]["failed"] == 1

    collector.record_trajectories("train", 16, failures=2)
    collector.record_cell("demo", "completed")
    text = collector.export_prometheus_metrics()
    assert 'klearn_errors_total{error_type="ValueError"} 1.0' in text
    assert 'klearn_trajectories_simulated_total{batch="train"} 16.0' in text
    assert 'klearn_integration_failures_total{batch="train"} 2.0' in text
    assert "klearn_stage_duration_seconds" in text


# Orchestration


def test_benchmark_bundle_is_reproducible(tmp_path):
    config = ExperimentConfig.model_validate(tiny_config())
    first = run_benchmark(config, tmp_path / "a")
    second = run_benchmark(config, tmp_path / "b")

    assert len(first.cells) == 3
    assert all(cell.status == CellStatus.COMPLETED for cell in first.cells)
    for name in ["config.json", "results.csv", "figure_data.csv", "measure.csv", "rates.json", "metrics.prom", "manifest.json"]:
        assert (tmp_path / "a" / name).exists()
        assert name in first.files
    assert (tmp_path / "a" / "estimators" / "M16_trial0.json").exists()
    assert (tmp_path / "a" / "estimators" / "M16_mean.json").exists()
    assert (tmp_path / "a" / "results.csv").read_bytes() == (tmp_path / "b" / "results.csv").read_bytes()

    frame = read_results(tmp_path / "a" / "results.csv")
    metrics = set(frame["metric"])
    assert {"kernel_error", "kernel_error_raw", "empirical_error", "partitions", "jensen_ratio"} <= metrics
    assert {"tm_error_training", "tm_error_random", "tm_error_large_n", "tm_bound_violations"} <= metrics
    assert set(frame.loc[frame["metric"] == "tm_error_random", "window"]) == {"train", "future"}
    assert "kernel_error" in first.rates

    rates = json.loads((tmp_path / "a" / "rates.json").read_text())
    assert rates["theoretical_rate"] == pytest.approx(1.0 / 3.0)


def test_failed_cells_are_recorded(tmp_path):
    config = ExperimentConfig.model_validate(tiny_config(R=0.05))
    summary = run_benchmark(config, tmp_path)
    assert [cell.status for cell in summary.cells] == [CellStatus.FAILED] * 3
    assert all("outside hypothesis interval" in cell.error for cell in summary.cells)
    frame = read_results(tmp_path / "results.csv")
    assert set(frame["metric"]) == {"cell_failed"}
    assert summary.rates == {}


def test_evaluate_stored_estimator(tmp_path):
    config = ExperimentConfig.model_validate(tiny_config())
    run_benchmark(config, tmp_path)
    est = read_estimator(tmp_path / "estimators" / "M16_trial0.json")
    report = evaluate_estimator(config, est)
    assert report["kernel_error"] > 0
    assert report["kernel_error_pairs"][0][0] == pytest.approx(report["kernel_error"])
    assert set(report["prediction"]["summary"]) == {"training", "random", "large_n"}


def test_coercivity_run(tmp_path):
    config = ExperimentConfig.model_validate(tiny_config())
    estimates = run_coercivity(config, out_dir=tmp_path)
    assert [e.partitions for e in estimates] == [2, 3]
    assert all(e.gram_residual <= 1e-8 for e in estimates)
    assert all(e.lambda_min >= -1e-12 for e in estimates)
    saved = json.loads((tmp_path / "coercivity.json").read_text())
    assert saved["homogeneous_bound"] == pytest.approx(3 / 16)
    assert len(saved["estimates"]) == 2

    with pytest.raises(ConfigError):
        run_coercivity(config, partitions=[0])


def test_noise_sweep(tmp_path):
    config = ExperimentConfig.model_validate(tiny_config())
    sweep = noise_sweep(config, [0.0, 0.01], tmp_path)
    assert set(sweep) == {"0", "0.01"}
    assert "kernel_error" in sweep["0"]
    saved = json.loads((tmp_path / "noise_sweep.json").read_text())
    assert saved["noise"] == "additive"
    frame = read_results(tmp_path / "results.csv")
    assert set(frame["experiment"]) == {"tiny-opinion@sigma=0", "tiny-opinion@sigma=0.01"}

    quiet = ExperimentConfig.model_validate(tiny_config(noise="none"))
    with pytest.raises(ConfigError):
        noise_sweep(quiet, [0.1], tmp_path)


# Command line


def test_cli_schema_and_version():
    runner = CliRunner()
    result = runner.invoke(cli, ["schema"])
    assert result.exit_code == 0
    assert json.loads(result.output)["title"] == "ExperimentConfig"
    assert "klearn" in runner.invoke(cli, ["--version"]).output


def test_cli_rate(tmp_path):
    rows = [
        {"experiment": "demo", "M": M, "trial": 0, "metric": "kernel_error", "value": 2.0 * M ** -0.5}
        for M in (16, 64, 256)
    ]
    path = write_results(rows, tmp_path / "results.csv")
    result = CliRunner().invoke(cli, ["rate", "--in", str(path)])
    assert result.exit_code == 0
    assert json.loads(result.output)["rate"] == pytest.approx(0.5)


def test_cli_generate_learn_and_exit_codes(tmp_path, config_file):
    traj = tmp_path / "traj.csv"
    out = str(tmp_path / "out")
    assert main(["--out-dir", out, "generate", "--config", str(config_file), "--out", str(traj), "--M", "8"]) == 0
    assert traj.exists()

    assert main(["--out-dir", out, "learn", "--traj", str(traj)]) == 0
    est = read_estimator(Path(out) / "estimator.json")
    assert est.space.partitions == 3

    assert main(["learn", "--traj", str(tmp_path / "missing.csv"), "--partitions", "2"]) == 1
    assert main(["--out-dir", out, "learn", "--traj", str(traj), "--partitions", "2", "--R", "0.01"]) == 2
