import json
from pathlib import Path

import numpy as np
import pytest

from smot import cli

TARGET_1D = {"kind": "gaussian", "mean": [6.0], "cov": [[1.0]]}


def write_config(tmp_path: Path, doc: dict) -> str:
    path = tmp_path / "config.json"
    path.write_text(json.dumps(doc))
    return str(path)


def primal_doc(out_dir: str, epochs=1, dump_paths=False) -> dict:
    return {
        "mode": "primal_bank",
        "seed": 7,
        "out_dir": out_dir,
        "primal_bank": {
            "d": 1, "x0": [5.0], "n_steps": 3, "n_paths": 256,
            "hidden": [8], "cost": {"kind": "drift_norm_sq"},
            "penalty": {"kind": "wasserstein2", "lam": 1.0},
            "target": TARGET_1D,
            "epochs": epochs, "batch_size": 128, "lr": 1e-3,
            "dump_paths": dump_paths,
        },
    }


class TestConfigErrors:
    def test_unparseable_json(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text("{not json")
        assert cli.run(str(path)) == 2

    def test_missing_file_is_io_error(self, tmp_path):
        assert cli.run(str(tmp_path / "absent.json")) == 4

    def test_unknown_mode(self, tmp_path):
        doc = primal_doc(str(tmp_path / "out"))
        doc["mode"] = "wat"
        assert cli.run(write_config(tmp_path, doc)) == 2

    def test_mode_flag_must_match(self, tmp_path):
        doc = primal_doc(str(tmp_path / "out"))
        assert cli.run(write_config(tmp_path, doc), mode="dual") == 2

    def test_block_must_match_mode(self, tmp_path):
        doc = primal_doc(str(tmp_path / "out"))
        doc["dual"] = doc.pop("primal_bank")
        assert cli.run(write_config(tmp_path, doc)) == 2

    def test_seed_required(self, tmp_path):
        doc = primal_doc(str(tmp_path / "out"))
        del doc["seed"]
        assert cli.run(write_config(tmp_path, doc)) == 2

    def test_missing_field(self, tmp_path):
        doc = primal_doc(str(tmp_path / "out"))
        del doc["primal_bank"]["target"]
        assert cli.run(write_config(tmp_path, doc)) == 2


class TestPrimalRun:
    def test_zero_epochs_writes_all_outputs(self, tmp_path):
        out = tmp_path / "out"
        doc = primal_doc(str(out), epochs=0)
        assert cli.run(write_config(tmp_path, doc)) == 0
        for name in ("config_resolved.json", "report.json", "loss.csv",
                     "samples.csv", "density_grid.csv", "ckpt_net_000.json"):
            assert (out / name).exists(), name
        assert (out / "loss.csv").read_text().strip() == "epoch,cost_part,penalty_part,total"
        report = json.loads((out / "report.json").read_text())
        assert report["mode"] == "primal_bank" and report["epochs_completed"] == 0

    def test_dump_paths(self, tmp_path):
        out = tmp_path / "out"
        doc = primal_doc(str(out), epochs=0, dump_paths=True)
        assert cli.run(write_config(tmp_path, doc)) == 0
        lines = (out / "paths.csv").read_text().strip().splitlines()
        assert lines[0] == "path,step,x_1"
        assert len(lines) == 1 + 256 * 4  # header + (N+1) rows per path

    def test_reruns_byte_identical(self, tmp_path):
        out1, out2 = tmp_path / "a", tmp_path / "b"
        doc = primal_doc("ignored", epochs=2)
        cfg = write_config(tmp_path, doc)
        assert cli.run(cfg, out_dir=str(out1)) == 0
        assert cli.run(cfg, out_dir=str(out2)) == 0
        for name in ("loss.csv", "samples.csv", "density_grid.csv"):
            assert (out1 / name).read_bytes() == (out2 / name).read_bytes()
        reports = []
        for out in (out1, out2):
            doc = json.loads((out / "report.json").read_text())
            doc.pop("wall_time_s")
            doc.pop("out_dir", None)
            reports.append(json.dumps(doc, sort_keys=True))
        assert reports[0] == reports[1]

    def test_seed_override_changes_outputs(self, tmp_path):
        out1, out2 = tmp_path / "a", tmp_path / "b"
        cfg = write_config(tmp_path, primal_doc("ignored", epochs=1))
        assert cli.run(cfg, out_dir=str(out1)) == 0
        assert cli.run(cfg, out_dir=str(out2), seed=8) == 0
        assert (out1 / "samples.csv").read_bytes() != (out2 / "samples.csv").read_bytes()

    def test_divergence_exit_code(self, tmp_path):
        doc = primal_doc(str(tmp_path / "out"), epochs=1)
        doc["primal_bank"]["x0"] = [1e308]
        with np.errstate(over="ignore", invalid="ignore"):
            assert cli.run(write_config(tmp_path, doc)) == 3


class TestDualRun:
    def test_outputs(self, tmp_path):
        out = tmp_path / "out"
        doc = {
            "mode": "dual", "seed": 3, "out_dir": str(out),
            "dual": {
                "d": 1, "x0": [5.0], "n_steps": 3, "n_paths": 128,
                "ab_hidden": [8], "phi_hidden": [8],
                "cost": {"kind": "diffusion_target", "a0": 0.1},
                "target": TARGET_1D, "epochs": 2, "batch_size": 64,
                "target_points": 128,
            },
        }
        assert cli.run(write_config(tmp_path, doc)) == 0
        for name in ("loss_dual.csv", "samples.csv", "ckpt_ab.json", "ckpt_phi.json"):
            assert (out / name).exists(), name
        lines = (out / "loss_dual.csv").read_text().strip().splitlines()
        assert lines[0] == "epoch,l1,l2" and len(lines) == 3


class TestPortfolioRun:
    def test_outputs(self, tmp_path):
        out = tmp_path / "out"
        doc = {
            "mode": "portfolio", "seed": 4, "out_dir": str(out),
            "portfolio": {
                "x0": [5.0], "n_steps": 4, "n_paths": 256, "hidden": [8],
                "mu": [0.2], "cov": [[0.04]], "box": 5.0,
                "penalty": {"kind": "squared_l2", "lam": 100.0},
                "target": TARGET_1D, "epochs": 1, "batch_size": 128,
            },
        }
        assert cli.run(write_config(tmp_path, doc)) == 0
        assert (out / "alpha.csv").exists()
        report = json.loads((out / "report.json").read_text())
        assert report["constraint_violation"] <= 1e-8
        assert "negative_wealth_fraction" in report

    def test_time_varying_market(self, tmp_path):
        out = tmp_path / "out"
        doc = {
            "mode": "portfolio", "seed": 4, "out_dir": str(out),
            "portfolio": {
                "x0": [5.0], "n_steps": 4, "n_paths": 128, "hidden": [8],
                "mu": {"times": [0.0, 0.5], "values": [[0.1], [0.3]]},
                "cov": {"times": [0.0, 0.5], "values": [[[0.04]], [[0.09]]]},
                "penalty": {"kind": "wasserstein2", "lam": 1.0},
                "target": TARGET_1D, "epochs": 1, "batch_size": 64,
            },
        }
        assert cli.run(write_config(tmp_path, doc)) == 0


class TestValidateRun:
    def test_metrics_from_fixture(self, tmp_path):
        samples = np.random.default_rng(0).normal(6.0, 1.0, size=(2000, 1))
        fixture = tmp_path / "samples.csv"
        fixture.write_text("x_1\n" + "\n".join(repr(float(v)) for v in samples[:, 0]))
        out = tmp_path / "out"
        doc = {
            "mode": "validate", "seed": 5, "out_dir": str(out),
            "validate": {
                "samples_csv": str(fixture),
                "target": TARGET_1D,
                "directions": 50,
            },
        }
        assert cli.run(write_config(tmp_path, doc)) == 0
        metrics = json.loads((out / "metrics.json").read_text())
        assert abs(metrics["mean"][0] - 6.0) < 0.1
        assert (out / "wasserstein_hist.csv").exists()
        assert (out / "qq_margin_1.csv").exists()
