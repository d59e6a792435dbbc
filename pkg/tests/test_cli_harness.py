import json
from datetime import datetime, timezone
from pathlib import Path

import pytest
from freezegun import freeze_time
from pytest_mock import MockerFixture
from ulid import ULID

from miragelab import cli_harness
from miragelab.cli_harness import (
    ACCEPTANCE_SCALES,
    BUGGY_UNIFORMITY_SAMPLES,
    AcceptanceCheck,
    AcceptanceRun,
    RunManifest,
    main,
)
from miragelab.errors import ExitCode
from miragelab.rand_cipher import IndexMode, UniformityReport
from miragelab.settings import ExperimentConfig
from miragelab.utils import read_csv


@pytest.fixture
def small_config_path(tmp_path: Path) -> Path:
    path = tmp_path / "small.json"
    path.write_text(
        json.dumps(
            {
                "sets_per_skew": 1024,
                "prime_count": 400,
                "low_accesses": 40,
                "high_accesses": 400,
                "calibration_trials": 4,
                "template_accesses": [40, 400],
                "template_trials": 4,
                "trials": 6,
                "baseline_sets": 1024,
                "master_seed": 17,
            }
        ),
        encoding="utf-8",
    )
    return path


def _manifest(out: Path) -> RunManifest:
    return RunManifest.model_validate_json((out / cli_harness.MANIFEST_NAME).read_text(encoding="utf-8"))


def test_cipher_test_passes_bundled_vectors(tmp_path: Path, capsys: pytest.CaptureFixture[str]) -> None:
    assert main(["cipher-test", "--out", str(tmp_path)]) == ExitCode.SUCCESS
    assert "9/9 test vectors passed" in capsys.readouterr().out
    meta, rows = read_csv(tmp_path / "cipher_test.csv")
    assert set(meta) == {"config_hash", "master_seed"}
    assert all(row["passed"] == "1" for row in rows)
    manifest = _manifest(tmp_path)
    assert manifest.command == "cipher-test"
    assert list(manifest.files) == ["cipher_test.csv"]


def test_manifest_records_run(tmp_path: Path, mocker: MockerFixture) -> None:
    mocker.patch("miragelab.core.ulid.new", return_value=ULID(b"\x01\x8e.\t\xa9\x06=\x9b\x0fK\xaa\xdc'\x01\xe0;"))
    with freeze_time(datetime(2024, 3, 14, 18, 52, 43, tzinfo=timezone.utc)):
        main(["cipher-test", "--out", str(tmp_path), "--seed", "5"])
    manifest = _manifest(tmp_path)
    assert str(manifest.run_id) == "01HRQ0KA867PDGYJXAVGKG3R1V"
    assert manifest.created_at.isoformat() == "2024-03-14T18:52:43+00:00"
    assert manifest.master_seed == 5
    assert manifest.version == cli_harness.__version__
    assert len(manifest.files["cipher_test.csv"]) == 64


def test_failing_vectors_exit_nonzero(tmp_path: Path) -> None:
    vectors = tmp_path / "vectors.csv"
    vectors.write_text(
        "# algorithm,key_hex,plaintext_hex,ciphertext_hex\n"
        "present80,00000000000000000000,0000000000000000,0000000000000000\n",
        encoding="utf-8",
    )
    assert main(["cipher-test", "--vectors", str(vectors), "--out", str(tmp_path)]) == ExitCode.ACCEPTANCE_FAILURE


@pytest.mark.parametrize(
    "argv",
    [
        ["cipher-test", "--config", "does-not-exist.json"],
        ["cipher-test", "--seed", "-1"],
        ["cipher-test", "--jobs", "0"],
    ],
)
def test_configuration_errors_exit_2(argv: list[str], tmp_path: Path) -> None:
    assert main(argv + ["--out", str(tmp_path)]) == ExitCode.CONFIGURATION_ERROR


def test_malformed_key_exits_2(tmp_path: Path) -> None:
    config = tmp_path / "bad.json"
    config.write_text(json.dumps({"key1": "0x12", "key2": "0x34"}), encoding="utf-8")
    assert main(["cipher-test", "--config", str(config), "--out", str(tmp_path)]) == ExitCode.CONFIGURATION_ERROR


def test_misspelled_config_key_exits_2(tmp_path: Path) -> None:
    config = tmp_path / "typo.json"
    config.write_text(json.dumps({"master_sed": 3}), encoding="utf-8")
    assert main(["cipher-test", "--config", str(config), "--out", str(tmp_path)]) == ExitCode.CONFIGURATION_ERROR


def test_analytic_birthday(tmp_path: Path, capsys: pytest.CaptureFixture[str]) -> None:
    assert main(["analytic", "--birthday", "--bits", "8", "--out", str(tmp_path)]) == ExitCode.SUCCESS
    out = capsys.readouterr().out
    assert "birthday_closed_form [bits=8 p=0.5]: 19" in out
    assert "birthday_exact [bits=8 p=0.5]: 20" in out
    meta, rows = read_csv(tmp_path / "analytic.csv")
    assert meta["lambda"] == "balls/buckets"
    assert [row["quantity"] for row in rows] == ["birthday_rule_of_thumb", "birthday_closed_form", "birthday_exact"]


def test_analytic_everything(tmp_path: Path) -> None:
    assert main(["analytic", "--out", str(tmp_path)]) == ExitCode.SUCCESS
    _, rows = read_csv(tmp_path / "analytic.csv")
    quantities = [row["quantity"] for row in rows]
    assert quantities[0] == "birth_death_step"
    assert "m_way_expected_buckets" in quantities
    assert "birthday_exact" in quantities


def test_sim_replays_trace(
    tmp_path: Path, trace_path: str, settings_env_path: str, capsys: pytest.CaptureFixture[str]
) -> None:
    argv = ["sim", "--config", settings_env_path, "--trace", trace_path, "--out", str(tmp_path)]
    assert main(argv) == ExitCode.SUCCESS
    _, rows = read_csv(tmp_path / "sim_stats.csv")
    assert (rows[0]["accesses"], rows[0]["hits"], rows[0]["misses"]) == ("4", "1", "3")
    assert capsys.readouterr().out.startswith("accesses,hits,misses")


def test_sim_sae_sweep(tmp_path: Path, small_config_path: Path) -> None:
    argv = ["sim", "--config", str(small_config_path), "--installs", "2000", "--sae-sweep", "--out", str(tmp_path)]
    assert main(argv) == ExitCode.SUCCESS
    _, rows = read_csv(tmp_path / "sae_sweep.csv")
    assert [row["extra_ways"] for row in rows] == [str(w) for w in range(7)]
    assert (tmp_path / "sae_sweep.svg").is_file()
    assert set(_manifest(tmp_path).files) == {"sim_stats.csv", "sae_sweep.csv", "sae_sweep.svg"}


def test_missing_trace_exits_3(tmp_path: Path) -> None:
    assert main(["sim", "--trace", str(tmp_path / "none.txt"), "--out", str(tmp_path)]) == ExitCode.RUNTIME_ERROR


def test_bucket_ball_sweep(tmp_path: Path) -> None:
    argv = ["bucket-ball", "--balls", "8", "16", "--buckets", "16", "--threshold", "3", "--seeds", "2"]
    assert main(argv + ["--max-throws", "500", "--out", str(tmp_path), "--no-plot"]) == ExitCode.SUCCESS
    meta, rows = read_csv(tmp_path / "bucket_ball.csv")
    assert meta["lambda"] == "balls/buckets"
    assert len(rows) == 8
    assert not (tmp_path / "bucket_ball.svg").exists()


def test_template_build_then_classify(
    tmp_path: Path, small_config_path: Path, capsys: pytest.CaptureFixture[str]
) -> None:
    common = ["--config", str(small_config_path), "--out", str(tmp_path)]
    assert main(["template", "build"] + common) == ExitCode.SUCCESS
    assert (tmp_path / "templates.csv").is_file()
    assert (tmp_path / "templates_summary.svg").is_file()
    capsys.readouterr()

    _, summary = read_csv(tmp_path / "templates_summary.csv")
    observed = [str(round(float(row["mean"]))) for row in summary]
    assert main(["template", "classify", "--observed", *observed] + common) == ExitCode.SUCCESS
    _, rows = read_csv(tmp_path / "classify.csv")
    assert [row["label"] for row in rows] == ["40", "400"]
    assert _manifest(tmp_path).command == "template classify"


def test_classify_without_store_exits_3(tmp_path: Path) -> None:
    argv = ["template", "classify", "--observed", "5", "--store", str(tmp_path / "nowhere"), "--out", str(tmp_path)]
    assert main(argv) == ExitCode.RUNTIME_ERROR


def test_covert(tmp_path: Path, small_config_path: Path, capsys: pytest.CaptureFixture[str]) -> None:
    assert main(["covert", "--config", str(small_config_path), "--out", str(tmp_path)]) == ExitCode.SUCCESS
    _, rows = read_csv(tmp_path / "covert.csv")
    assert len(rows) == 6
    assert "bit-error rate" in capsys.readouterr().out


def test_compare_baseline(tmp_path: Path, small_config_path: Path) -> None:
    argv = ["compare-baseline", "--config", str(small_config_path), "--trials", "2", "--out", str(tmp_path)]
    assert main(argv + ["--large-fraction", "0.95"]) == ExitCode.SUCCESS
    _, rows = read_csv(tmp_path / "baseline_summary.csv")
    assert [row["cache"] for row in rows] == [
        "mirage-default",
        "baseline-default",
        "mirage-prime0.95",
        "baseline-prime0.95",
    ]


def test_plot_subcommand(tmp_path: Path) -> None:
    source = tmp_path / "covert.csv"
    source.write_text("trial,bit_sent,miss_count,bit_decoded\n0,0,10,0\n1,1,30,1\n", encoding="utf-8")
    argv = ["plot", str(source), "--kind", "histogram_overlay", "--output", str(tmp_path / "c.svg")]
    assert main(argv + ["--out", str(tmp_path)]) == ExitCode.SUCCESS
    assert (tmp_path / "c.svg").is_file()
    assert list(_manifest(tmp_path).files) == ["c.svg"]


def test_plot_schema_error_exits_3(tmp_path: Path) -> None:
    source = tmp_path / "odd.csv"
    source.write_text("x,y\n1,2\n", encoding="utf-8")
    assert main(["plot", str(source), "--kind", "line_sweep", "--out", str(tmp_path)]) == ExitCode.RUNTIME_ERROR


def test_acceptance_failure_exits_4(tmp_path: Path, mocker: MockerFixture) -> None:
    checks = [
        AcceptanceCheck(name="cipher", passed=True, detail="9/9"),
        AcceptanceCheck(name="prime", passed=False, detail="evictions 12"),
    ]
    run_acceptance = mocker.patch("miragelab.cli_harness.run_acceptance", return_value=checks)
    assert main(["acceptance", "--out", str(tmp_path)]) == ExitCode.ACCEPTANCE_FAILURE
    run_acceptance.assert_called_once()
    assert run_acceptance.call_args.args[1] == ACCEPTANCE_SCALES["quick"]
    _, rows = read_csv(tmp_path / "acceptance.csv")
    assert [row["passed"] for row in rows] == ["1", "0"]


def test_acceptance_success(tmp_path: Path, mocker: MockerFixture) -> None:
    mocker.patch(
        "miragelab.cli_harness.run_acceptance",
        return_value=[AcceptanceCheck(name="cipher", passed=True, detail="9/9")],
    )
    assert main(["acceptance", "--scale", "full", "--out", str(tmp_path)]) == ExitCode.SUCCESS


def test_config_overrides_drop_unset_flags() -> None:
    args = cli_harness.build_parser().parse_args(["covert", "--seed", "3", "--cipher", "prince"])
    assert cli_harness.config_overrides(args) == {"master_seed": 3, "cipher": "prince"}


def test_version(capsys: pytest.CaptureFixture[str]) -> None:
    with pytest.raises(SystemExit) as excinfo:
        main(["--version"])
    assert excinfo.value.code == 0
    assert cli_harness.__version__ in capsys.readouterr().out


@pytest.mark.slow
def test_quick_acceptance_passes(tmp_path: Path) -> None:
    assert main(["acceptance", "--scale", "quick", "--out", str(tmp_path), "--no-plot"]) == ExitCode.SUCCESS


def test_quick_acceptance_judges_buggy_uniformity_at_reference_samples(mocker: MockerFixture) -> None:
    report = UniformityReport(
        sample_count=1,
        bins=16384,
        mode=IndexMode.CORRECT,
        chi_square=(16384.0, 16384.0),
        p_value=(0.5, 0.5),
        band=(15000.0, 17000.0),
    )
    uniformity_report = mocker.patch("miragelab.cli_harness.uniformity_report", return_value=report)
    run = AcceptanceRun(ExperimentConfig(), ACCEPTANCE_SCALES["quick"])
    run.uniformity()
    samples = [c.args[2] for c in uniformity_report.call_args_list]
    assert samples == [ACCEPTANCE_SCALES["quick"].uniformity_samples, BUGGY_UNIFORMITY_SAMPLES]
    assert BUGGY_UNIFORMITY_SAMPLES == 2**21
    assert [c.passed for c in run.checks] == [True, False]
