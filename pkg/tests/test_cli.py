import csv
import json

import numpy as np
import pytest

from rotprune import cli, pipeline, tensor


@pytest.fixture
def generated(tmp_path):
    out = tmp_path / "data"
    assert cli.main(["gen", "--seed", "7", "--dims", "10", "--depth", "3", "--n-calib", "60", "--n-eval", "40", "--out", str(out)]) == 0
    return out


def payloads(directory):
    return {p.name: p.read_bytes() for p in sorted(directory.glob("*.rcpu"))}


class TestGen:
    def test_same_seed_byte_identical(self, tmp_path):
        for name in ("a", "b"):
            cli.main(["gen", "--seed", "3", "--dims", "6", "--out", str(tmp_path / name)])
        files_a = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
        files_b = sorted(p.relative_to(tmp_path / "b") for p in (tmp_path / "b").rglob("*") if p.is_file())
        assert files_a == files_b
        for rel in files_a:
            assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes()

    def test_depth_one(self, tmp_path):
        cli.main(["gen", "--depth", "1", "--dims", "5", "--out", str(tmp_path)])
        model = pipeline.load_model(tmp_path / "model")
        assert len(model.prunable()) == 1

    def test_calibration_shape(self, generated):
        calib = tensor.read_tensor(generated / "calib.rcpu")
        assert calib.shape == (10, 60) and np.all(np.isfinite(calib))
        assert tensor.read_tensor(generated / "eval.rcpu").shape == (10, 40)

    def test_seed_recorded(self, generated):
        assert pipeline.load_model(generated / "model").metadata["seed"] == "7"

    def test_bad_dims_usage_error(self, tmp_path):
        assert cli.main(["gen", "--dims", "4,5", "--depth", "3", "--out", str(tmp_path)]) == 2


class TestPrune:
    def test_identity_payloads(self, generated, tmp_path, capsys):
        out = tmp_path / "pruned"
        code = cli.main([
            "prune", "--model", str(generated / "model"), "--calib", str(generated / "calib.rcpu"),
            "--out", str(out), "--ratio", "0", "--compensation-variant", "none",
        ])
        assert code == 0
        assert payloads(out) == payloads(generated / "model")

    def test_unknown_variant_exit_2(self, generated, tmp_path):
        with pytest.raises(SystemExit) as exc:
            cli.main([
                "prune", "--model", str(generated / "model"), "--calib", str(generated / "calib.rcpu"),
                "--out", str(tmp_path / "x"), "--compensation-variant", "shear",
            ])
        assert exc.value.code == 2

    def test_report_rows(self, generated, tmp_path, capsys):
        out = tmp_path / "pruned"
        cli.main([
            "prune", "--model", str(generated / "model"), "--calib", str(generated / "calib.rcpu"),
            "--out", str(out), "--ratio", "0.2",
        ])
        printed = [json.loads(line) for line in capsys.readouterr().out.splitlines()]
        stored = [json.loads(line) for line in (out / "report.jsonl").read_text().splitlines()]
        assert len(printed) == len(stored) == 3
        assert set(stored[0]) == {"layer", "ratio", "kept", "residual_before", "residual_after", "variant", "seconds"}
        assert all(r["kept"] == 8 for r in stored)

    def test_config_file_and_override(self, generated, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"ratio": 0.5, "compensation_variant": "ls"}))
        out = tmp_path / "pruned"
        cli.main([
            "prune", "--model", str(generated / "model"), "--calib", str(generated / "calib.rcpu"),
            "--out", str(out), "--config", str(cfg), "--ratio", "0.3",
        ])
        rows = [json.loads(line) for line in (out / "report.jsonl").read_text().splitlines()]
        assert all(r["ratio"] == 0.3 and r["variant"] == "ls" for r in rows)

    def test_bad_config_key(self, generated, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"ratio": 0.5, "bogus": 1}))
        code = cli.main([
            "prune", "--model", str(generated / "model"), "--calib", str(generated / "calib.rcpu"),
            "--out", str(tmp_path / "p"), "--config", str(cfg),
        ])
        assert code == 2

    def test_bad_ratio_usage_error(self, generated, tmp_path):
        code = cli.main([
            "prune", "--model", str(generated / "model"), "--calib", str(generated / "calib.rcpu"),
            "--out", str(tmp_path / "p"), "--ratio", "1.5",
        ])
        assert code == 2

    def test_shape_mismatch_exit_1(self, generated, tmp_path):
        tensor.write_tensor(tmp_path / "bad.rcpu", np.ones((3, 4)))
        code = cli.main([
            "prune", "--model", str(generated / "model"), "--calib", str(tmp_path / "bad.rcpu"), "--out", str(tmp_path / "p"),
        ])
        assert code == 1


class TestEval:
    def test_self_prints_zero(self, generated, capsys):
        m = str(generated / "model")
        assert cli.main(["eval", "--model", m, "--reference", m, "--eval-inputs", str(generated / "eval.rcpu")]) == 0
        assert json.loads(capsys.readouterr().out)["rel_error"] == 0.0

    def test_missing_file(self, generated, tmp_path):
        code = cli.main([
            "eval", "--model", str(tmp_path / "nope"), "--reference", str(generated / "model"),
            "--eval-inputs", str(generated / "eval.rcpu"),
        ])
        assert code == 1

    def test_matches_library(self, generated, tmp_path, capsys):
        out = tmp_path / "pruned"
        cli.main(["prune", "--model", str(generated / "model"), "--calib", str(generated / "calib.rcpu"), "--out", str(out)])
        capsys.readouterr()
        cli.main(["eval", "--model", str(out), "--reference", str(generated / "model"), "--eval-inputs", str(generated / "eval.rcpu")])
        printed = json.loads(capsys.readouterr().out)
        direct = pipeline.evaluate(
            pipeline.load_model(out), tensor.read_tensor(generated / "eval.rcpu"), pipeline.load_model(generated / "model")
        )
        assert printed["rel_error"] == direct.rel_error


def sweep_args(generated, out, *extra):
    return [
        "sweep", "--model", str(generated / "model"), "--calib", str(generated / "calib.rcpu"),
        "--eval", str(generated / "eval.rcpu"), "--out", str(out), *extra,
    ]


class TestSweep:
    def test_single_cell(self, generated, tmp_path):
        out = tmp_path / "s"
        cli.main(sweep_args(generated, out, "--ratios", "0.2", "--score-variants", "wanda_sp", "--compensation-variants", "rot"))
        with open(out / "table.csv") as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 1
        assert list(rows[0]) == list(cli.SWEEP_COLUMNS)
        assert rows[0]["variant"] == "rot" and float(rows[0]["heldout_rel_error"]) > 0

    def test_default_cross_product(self, generated, tmp_path):
        out = tmp_path / "s"
        cli.main(sweep_args(generated, out))
        with open(out / "table.csv") as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 30
        assert {(r["ratio"], r["score"], r["variant"]) for r in rows}.__len__() == 30

    def test_manifest_rerun_identical(self, generated, tmp_path):
        first = tmp_path / "s1"
        cli.main(sweep_args(generated, first, "--ratios", "0.1,0.3", "--seeds", "0,1", "--n-calib", "5,60", "--omit-timing"))
        second = tmp_path / "s2"
        assert cli.main(["sweep", "--manifest", str(first / "manifest.json"), "--out", str(second)]) == 0
        assert (first / "table.csv").read_bytes() == (second / "table.csv").read_bytes()
        manifest = json.loads((first / "manifest.json").read_text())
        assert manifest["spec"]["n_calib"] == [5, 60] and len(manifest["digests"]["calib"]) == 64

    def test_small_calibration_subsample(self, generated, tmp_path):
        out = tmp_path / "s"
        cli.main(sweep_args(generated, out, "--ratios", "0.2", "--compensation-variants", "ls", "--n-calib", "4", "--seeds", "0,1"))
        with open(out / "table.csv") as fh:
            rows = list(csv.DictReader(fh))
        assert [r["n_calib"] for r in rows] == ["4"] * 4

    def test_missing_inputs_usage(self, tmp_path):
        assert cli.main(["sweep", "--out", str(tmp_path)]) == 2

    def test_invalid_list_usage(self, generated, tmp_path):
        with pytest.raises(SystemExit) as exc:
            cli.main(sweep_args(generated, tmp_path / "s", "--compensation-variants", "rot,shear"))
        assert exc.value.code == 2
