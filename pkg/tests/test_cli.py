"""Command-line interface tests through click's test runner."""
import csv
import json
import os

import numpy as np
import pytest
from click.testing import CliRunner
from scipy import stats

from mesorisk.cli import main

from helpers import planted_panel, write_spread_csv, write_meta_csv


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("clidata")
    panel, labels = planted_panel(seed=21, n_groups=3, per_group=8, t=800)
    issuers = write_spread_csv(root / "spreads.csv", panel.returns)
    write_meta_csv(root / "meta.csv", issuers)
    rng = np.random.default_rng(33)
    write_spread_csv(root / "noise.csv", rng.standard_normal((600, 20)))
    groups = {issuers[j]: int(g) for j, g in enumerate(labels)}
    return {"root": root, "issuers": issuers, "groups": groups}


def run_cli(args):
    result = CliRunner().invoke(main, [str(a) for a in args])
    return result


def base_args(data_dir, out, *extra):
    return [
        "--input", data_dir["root"] / "spreads.csv",
        "--meta", data_dir["root"] / "meta.csv",
        "--resolution", "1d",
        "--out-dir", out,
        "--restarts", 5,
        *extra,
    ]


def read_json(path):
    with open(path) as handle:
        return json.load(handle)


def test_version_flag():
    result = run_cli(["--version"])
    assert result.exit_code == 0
    assert "mesorisk" in result.output


def test_spectrum_writes_summary_and_artifacts(data_dir, tmp_path):
    out = tmp_path / "spec"
    result = run_cli(["spectrum", *base_args(data_dir, out)])
    assert result.exit_code == 0, result.output
    for name in (
        "returns_panel.csv",
        "eigenvalues.csv",
        "density.csv",
        "shuffle_eigenvalues.csv",
        "spectrum_summary.json",
        "manifest_spectrum.json",
    ):
        assert (out / name).is_file()
    summary = read_json(out / "spectrum_summary.json")
    assert summary["schema"] == "mesorisk/spectrum/1"
    assert summary["n_series"] == 24
    assert summary["n_obs"] == 800
    assert 0.0 < summary["lambda_minus"] < 1.0 < summary["lambda_plus"]
    assert summary["eigenvalue_classes"]["group"] >= 2
    assert summary["shuffle_bulk_fraction"] >= 0.99
    manifest = read_json(out / "manifest_spectrum.json")
    assert manifest["command"] == "spectrum"
    assert "out_dir" not in manifest["config"]
    assert set(manifest["outputs"]) >= {"returns_panel.csv", "spectrum_summary.json"}


def test_detect_recovers_planted_communities(data_dir, tmp_path):
    out = tmp_path / "det"
    result = run_cli(["detect", *base_args(data_dir, out)])
    assert result.exit_code == 0, result.output
    document = read_json(out / "detection.json")
    assert document["status"] == "ok"
    assert document["n_communities"] == 3
    # communities reproduce the planted blocks exactly, up to naming
    found = {frozenset(node["members"]) for node in document["communities"]}
    expected = {
        frozenset(i for i, g in data_dir["groups"].items() if g == k)
        for k in range(3)
    }
    assert found == expected
    assert set(document["label_paths"]) == set(data_dir["issuers"])
    assert (out / "composition_sector.csv").is_file()
    assert (out / "composition_region.csv").is_file()


def test_detect_reports_no_structure_on_noise(data_dir, tmp_path):
    out = tmp_path / "noise"
    result = run_cli(
        [
            "detect",
            "--input", data_dir["root"] / "noise.csv",
            "--resolution", "1d",
            "--out-dir", out,
            "--restarts", 3,
        ]
    )
    assert result.exit_code == 0, result.output
    document = read_json(out / "detection.json")
    assert document["status"] == "no mesoscopic structure"
    assert "no mesoscopic structure" in result.output


def test_detect_reuses_spectrum_artifact(data_dir, tmp_path):
    out = tmp_path / "chain"
    first = run_cli(["spectrum", *base_args(data_dir, out)])
    assert first.exit_code == 0, first.output
    second = run_cli(["detect", *base_args(data_dir, out)])
    assert second.exit_code == 0, second.output
    assert "reusing returns panel artifact" in second.output


def test_detect_without_meta_notes_omission(data_dir, tmp_path):
    out = tmp_path / "nometa"
    result = run_cli(
        [
            "detect",
            "--input", data_dir["root"] / "spreads.csv",
            "--resolution", "1d",
            "--out-dir", out,
            "--restarts", 3,
        ]
    )
    assert result.exit_code == 0, result.output
    assert "metadata absent" in result.output
    assert not (out / "composition_sector.csv").exists()


def test_stability_multiresolution_outputs(data_dir, tmp_path):
    out = tmp_path / "stab"
    result = run_cli(
        [
            "stability",
            *base_args(data_dir, out),
            "--mode", "multiresolution",
            "--resolutions", "1d,2d,1w",
        ]
    )
    assert result.exit_code == 0, result.output
    summary = read_json(out / "stability_summary.json")
    assert summary["labels"] == ["1d", "2d", "1w"]
    assert summary["n_partitions"] == 3
    assert summary["max_pairwise_vi"] <= 0.5  # strong planted structure
    with open(out / "vi_matrix.csv", newline="") as handle:
        rows = list(csv.reader(handle))
    assert len(rows) == 4  # header plus one row per partition
    with open(out / "partitions.csv", newline="") as handle:
        rows = list(csv.reader(handle))
    assert rows[0] == ["issuer_id", "1d", "2d", "1w"]
    assert len(rows) == 1 + 24


def test_calibrate_metadata_variants(data_dir, tmp_path):
    out = tmp_path / "cal"
    result = run_cli(
        ["calibrate", *base_args(data_dir, out), "--variant", "M1,M2,M3,M4"]
    )
    assert result.exit_code == 0, result.output
    for name in (
        "calibration_M1_global.json",
        "calibration_M2_global_industry.json",
        "calibration_M3_global_region.json",
        "calibration_M4_global_region_industry.json",
        "r2_summary.csv",
        "correlation_error_summary.csv",
        "factor_diagnostics.csv",
        "manifest_calibrate.json",
    ):
        assert (out / name).is_file()
    document = read_json(out / "calibration_M2_global_industry.json")
    assert document["schema"] == "mesorisk/calibration/1"
    assert document["variant"] == "M2_global_industry"
    betas = [record["beta"] for record in document["issuers"]]
    assert all(0.0 <= b <= 1.0 for b in betas)
    assert len(betas) == 24


def test_calibrate_community_variants_from_detection(data_dir, tmp_path):
    det_out = tmp_path / "det"
    assert run_cli(["detect", *base_args(data_dir, det_out)]).exit_code == 0
    out = tmp_path / "cal56"
    result = run_cli(
        [
            "calibrate",
            *base_args(data_dir, out),
            "--variant", "M5,M6",
            "--detection", det_out / "detection.json",
        ]
    )
    assert result.exit_code == 0, result.output
    m5 = read_json(out / "calibration_M5_global_community.json")
    communities = {
        name for name in m5["factor_names"] if name.startswith("community:")
    }
    assert len(communities) == 3
    assert (out / "calibration_M6_global_subcommunity.json").is_file()
    # the detection file participates in the manifest input hashes
    manifest = read_json(out / "manifest_calibrate.json")
    assert str(det_out / "detection.json") in manifest["inputs"]


def test_calibrate_m5_without_detection_exits_2(data_dir, tmp_path):
    result = run_cli(
        [
            "calibrate",
            *base_args(data_dir, tmp_path / "x"),
            "--variant", "M5",
        ]
    )
    assert result.exit_code == 2
    assert "--detection" in result.output


def test_simulate_portfolio_csv_without_panel(tmp_path):
    m, pd_value, paths = 40, 0.05, 20_000
    book = tmp_path / "book.csv"
    with open(book, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["issuer_id", "exposure", "lgd", "rating_or_pd", "class"])
        for j in range(m):
            writer.writerow([f"X{j:03d}", repr(1.0 / m), "1.0", repr(pd_value), "corporate"])
    out = tmp_path / "sim"
    result = run_cli(
        [
            "simulate",
            "--portfolio", book,
            "--paths", paths,
            "--alphas", "0.9,0.99,0.999",
            "--seed", 5,
            "--out-dir", out,
        ]
    )
    assert result.exit_code == 0, result.output
    assert "independent defaults" in result.output
    with open(out / "var_report_book.csv", newline="") as handle:
        rows = list(csv.reader(handle))
    assert rows[0] == ["variant", "var_0.9", "var_0.99", "var_0.999", "tail_ratio_999_99"]
    values = [float(cell) for cell in rows[1][1:4]]
    # independent defaults follow the binomial law
    for alpha, got in zip((0.9, 0.99, 0.999), values):
        assert got == pytest.approx(
            float(stats.binom.ppf(alpha, m, pd_value)) / m, abs=1e-12
        )
    summary = read_json(out / "simulate_summary.json")
    assert summary["portfolios"][str(book)]["kind"] == "long_only"


def test_simulate_schematic_with_calibrated_model(data_dir, tmp_path):
    out = tmp_path / "sim"
    result = run_cli(
        [
            "simulate",
            *base_args(data_dir, out),
            "--variant", "M2",
            "--portfolio", "A,D",
            "--paths", 20_000,
            "--alphas", "0.99,0.999",
        ]
    )
    assert result.exit_code == 0, result.output
    assert (out / "var_report_A.csv").is_file()
    assert (out / "var_report_D.csv").is_file()
    summary = read_json(out / "simulate_summary.json")
    assert summary["portfolios"]["A"]["kind"] == "long_only"
    assert summary["portfolios"]["A"]["n_positions"] == 36
    assert summary["portfolios"]["A"]["exposure_sum"] == pytest.approx(1.0, abs=1e-12)
    assert summary["portfolios"]["D"]["kind"] == "long_short"
    assert summary["portfolios"]["D"]["exposure_sum"] == pytest.approx(0.0, abs=1e-12)
    entry = summary["portfolios"]["A"]["variants"]["M2_global_industry"]
    if entry["var"]["0.99"] > 0:
        assert entry["tail_ratio"] == pytest.approx(
            entry["var"]["0.999"] / entry["var"]["0.99"]
        )


def test_config_file_supplies_defaults_cli_wins(data_dir, tmp_path):
    out = tmp_path / "conf"
    config = tmp_path / "run.cfg"
    config.write_text(
        "# stability settings\nresolution = 1w\nseed = 9\nrestarts = 4\n"
    )
    result = run_cli(
        [
            "spectrum",
            "--config", config,
            "--input", data_dir["root"] / "spreads.csv",
            "--resolution", "1d",
            "--out-dir", out,
        ]
    )
    assert result.exit_code == 0, result.output
    manifest = read_json(out / "manifest_spectrum.json")
    assert manifest["config"]["resolution"] == "1d"  # CLI beats file
    assert manifest["config"]["seed"] == 9
    assert manifest["config"]["restarts"] == 4


def test_unknown_config_key_exits_2(data_dir, tmp_path):
    config = tmp_path / "bad.cfg"
    config.write_text("granularity = 1d\n")
    result = run_cli(
        [
            "spectrum",
            "--config", config,
            "--input", data_dir["root"] / "spreads.csv",
            "--out-dir", tmp_path / "x",
        ]
    )
    assert result.exit_code == 2
    assert "unknown config key" in result.output


def test_missing_input_exits_2(tmp_path):
    missing = tmp_path / "absent.csv"
    result = run_cli(
        ["detect", "--input", missing, "--out-dir", tmp_path / "x"]
    )
    assert result.exit_code == 2
    assert str(missing) in result.output


def test_invalid_resolution_exits_2(data_dir, tmp_path):
    result = run_cli(
        [
            "spectrum",
            "--input", data_dir["root"] / "spreads.csv",
            "--resolution", "3d",
            "--out-dir", tmp_path / "x",
        ]
    )
    assert result.exit_code == 2


def test_invalid_variant_exits_2(data_dir, tmp_path):
    result = run_cli(
        [
            "calibrate",
            *base_args(data_dir, tmp_path / "x"),
            "--variant", "M9",
        ]
    )
    assert result.exit_code == 2
    assert "variant" in result.output


def test_pipeline_runs_every_stage(data_dir, tmp_path):
    out = tmp_path / "pipe"
    result = run_cli(
        [
            "pipeline",
            *base_args(data_dir, out),
            "--variant", "M1,M5",
            "--portfolio", "A",
            "--paths", 5_000,
        ]
    )
    assert result.exit_code == 0, result.output
    manifest = read_json(out / "manifest_pipeline.json")
    assert manifest["stages"] == [
        "spectrum",
        "detect",
        "stability",
        "calibrate",
        "simulate",
    ]
    for stage in manifest["stages"]:
        assert (out / f"manifest_{stage}.json").is_file()
    assert (out / "var_report_A.csv").is_file()


def test_detect_replay_is_byte_identical(data_dir, tmp_path):
    outs = [tmp_path / "r1", tmp_path / "r2"]
    for out in outs:
        result = run_cli(["detect", *base_args(data_dir, out)])
        assert result.exit_code == 0, result.output
    for name in ("detection.json", "manifest_detect.json"):
        first = (outs[0] / name).read_bytes()
        second = (outs[1] / name).read_bytes()
        assert first == second
