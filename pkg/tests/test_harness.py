import json
import os

import numpy as np
import pytest

from advtrace import cli, harness
from advtrace.errors import ConfigError, StageInputError

MINI_TOML = """\
[dataset]
kind = "blobs"
k = 4
dim = 16
n_train = 600
n_test = 200
seed = 11

[classifier]
hidden = [32, 32]
epochs = 100
batch_size = 16
learning_rate = 2e-3
augment_noise = 0.03
seed = 22

[tracers]
count = 2
mode = "noise_sensitive"
epochs = 200
batch_size = 64
learning_rate = 1e-3
noise_hi = 0.03
subset_size = 300
subset_seed = 33
seeds = [44, 55]
converge_threshold = 0.9
max_retrains = 1

[attack]
alphas = [0.0, 0.15]
attacks = ["surfree"]
records_per_cell = 4
query_budget = 600
source_copy = 0
seed = 66

[trace]
trials = 2000
max_copies = 5
seed = 77

[output]
dir = "PLACEHOLDER"
"""


@pytest.fixture(scope="module")
def mini_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("mini")
    cfg_path = root / "config.toml"
    out = root / "out"
    cfg_path.write_text(MINI_TOML.replace("PLACEHOLDER", str(out)))
    cfg = harness.load_config(str(cfg_path))
    harness.cmd_all(cfg)
    return cfg, str(out), str(cfg_path)


def test_default_config_parses(tmp_path):
    p = tmp_path / "default.toml"
    p.write_text(harness.DEFAULT_CONFIG_TOML)
    cfg = harness.load_config(str(p))
    assert cfg.tracers["count"] == 2
    assert cfg.attack["records_per_cell"] == 100


def test_config_missing_field_names_field(tmp_path):
    p = tmp_path / "bad.toml"
    p.write_text(MINI_TOML.replace('kind = "blobs"\n', "").replace(
        "PLACEHOLDER", str(tmp_path)))
    with pytest.raises(ConfigError, match=r"\[dataset\].kind"):
        harness.load_config(str(p))


def test_config_seed_count_mismatch(tmp_path):
    p = tmp_path / "bad.toml"
    p.write_text(MINI_TOML.replace("seeds = [44, 55]", "seeds = [44]").replace(
        "PLACEHOLDER", str(tmp_path)))
    with pytest.raises(ConfigError, match="seeds"):
        harness.load_config(str(p))


def test_config_rejects_unknown_attack(tmp_path):
    p = tmp_path / "bad.toml"
    p.write_text(MINI_TOML.replace('"surfree"', '"qeba"').replace(
        "PLACEHOLDER", str(tmp_path)))
    with pytest.raises(ConfigError, match="qeba"):
        harness.load_config(str(p))


def test_stage_outputs_exist(mini_run):
    _, out, _ = mini_run
    for rel in ("classifier.dnet", "classifier.dnet.json",
                "classifier_metrics.json", "alpha_accuracy.json",
                "copies/copy00/manifest.json", "copies/copy01/tracer.dnet",
                "attacks/surfree_a0.15/results.csv",
                "attacks/skipped.json",
                "trace/surfree_a0.15/dol.csv",
                "report.json", "table1_alpha_accuracy.csv",
                "table2_tracing.csv", "table3_modes.csv",
                "table4_transferability.csv", "fig5_multicopy.csv",
                "dol_histogram.csv", "timings.json"):
        assert os.path.exists(os.path.join(out, rel)), rel


def test_alpha_zero_cells_skipped(mini_run):
    _, out, _ = mini_run
    with open(os.path.join(out, "attacks", "skipped.json")) as f:
        skipped = json.load(f)
    assert "surfree_a0" in skipped["skipped_alpha_zero"]
    with open(os.path.join(out, "report.json")) as f:
        report = json.load(f)
    assert any("alpha=0" in note for note in report["notes"])
    assert "surfree_a0" not in report["cells"]


def test_report_contains_table_analogs(mini_run):
    _, out, _ = mini_run
    with open(os.path.join(out, "report.json")) as f:
        report = json.load(f)
    assert "alpha_accuracy" in report          # table 1 analog
    cell = report["cells"]["surfree_a0.15"]    # table 2 analog
    assert 0.0 <= cell["tracing_accuracy"] <= 1.0
    assert "transferability" in cell           # table 4 analog
    assert report["tracer_mode"] == "noise_sensitive"  # table 3 key
    curve = cell["multicopy_estimate"]         # fig 5 analog
    assert list(curve) == [str(n) for n in range(2, 6)]
    vals = [curve[str(n)] for n in range(2, 6)]
    assert all(a >= b - 0.05 for a, b in zip(vals, vals[1:]))


def test_histogram_counts_match_records(mini_run):
    import csv
    _, out, _ = mini_run
    counts = {}
    with open(os.path.join(out, "dol_histogram.csv"), newline="") as f:
        for row in csv.DictReader(f):
            key = (row["cell"], row["role"])
            counts[key] = counts.get(key, 0) + int(row["count"])
    assert counts[("surfree_a0.15", "source")] == 4
    assert counts[("surfree_a0.15", "victim")] == 4


def test_rerun_report_is_identical(mini_run):
    cfg, out, _ = mini_run
    with open(os.path.join(out, "report.json"), "rb") as f:
        before = f.read()
    harness.cmd_report(cfg)
    with open(os.path.join(out, "report.json"), "rb") as f:
        after = f.read()
    assert before == after


def test_stage_isolation_missing_inputs(tmp_path):
    p = tmp_path / "c.toml"
    p.write_text(MINI_TOML.replace("PLACEHOLDER", str(tmp_path / "fresh")))
    cfg = harness.load_config(str(p))
    with pytest.raises(StageInputError):
        harness.cmd_train_tracers(cfg)
    with pytest.raises(StageInputError):
        harness.cmd_attack(cfg)
    with pytest.raises(StageInputError):
        harness.cmd_trace(cfg)


def test_report_with_gaps(tmp_path):
    p = tmp_path / "c.toml"
    out = tmp_path / "partial"
    p.write_text(MINI_TOML.replace("PLACEHOLDER", str(out)))
    cfg = harness.load_config(str(p))
    os.makedirs(out, exist_ok=True)
    harness.cmd_report(cfg)
    with open(os.path.join(out, "report.json")) as f:
        report = json.load(f)
    assert "classifier_metrics.json" in report["gaps"]
    assert "trace/summary.json" in report["gaps"]


def test_cli_exit_codes(tmp_path, mini_run):
    _, _, cfg_path = mini_run
    assert cli.main(["report", "--config", cfg_path]) == 0
    missing = tmp_path / "missing.toml"
    assert cli.main(["report", "--config", str(missing)]) == 2
    bad = tmp_path / "bad.toml"
    bad.write_text("[dataset]\nkind = 3\n")
    assert cli.main(["report", "--config", str(bad)]) == 2
    fresh = tmp_path / "fresh.toml"
    fresh.write_text(MINI_TOML.replace("PLACEHOLDER", str(tmp_path / "void")))
    assert cli.main(["attack", "--config", str(fresh)]) == 3


def test_cli_init_config(tmp_path):
    path = tmp_path / "gen.toml"
    assert cli.main(["init-config", str(path)]) == 0
    assert harness.load_config(str(path)).dataset["kind"] == "blobs"


def test_master_seed_override(tmp_path):
    p = tmp_path / "c.toml"
    p.write_text(MINI_TOML.replace("PLACEHOLDER", str(tmp_path)))
    a = harness.load_config(str(p), master_seed=99)
    b = harness.load_config(str(p), master_seed=99)
    c = harness.load_config(str(p), master_seed=100)
    assert a.dataset["seed"] == b.dataset["seed"]
    assert a.dataset["seed"] != c.dataset["seed"]
    assert len(a.tracers["seeds"]) == a.tracers["count"]


def test_classifier_metrics_logged(mini_run):
    _, out, _ = mini_run
    with open(os.path.join(out, "classifier_metrics.json")) as f:
        metrics = json.load(f)
    assert metrics["test_accuracy"] >= 0.9
