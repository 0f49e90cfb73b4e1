import json
import os

import numpy as np
import pytest

from spinkernel import storage
from spinkernel.cli import (
    EXIT_INPUT,
    EXIT_OK,
    ExperimentConfig,
    cmd_diagnostics,
    cmd_encode,
    cmd_kernel_report,
    cmd_preprocess,
    cmd_train_eval,
    main,
)


def base_config(tmp_path, **overrides):
    cfg = {
        "dataset": {"kind": "synthetic", "n_per_class": 30, "separation": 4.0, "seed": 5},
        "classes": [3, 6, 8],
        "n_train": 45,
        "n_test": 21,
        "n_sites": 2,
        "n_pulses": 4,
        "gammas": [0.05, 1.0],
        "lambda_grid": [1e-8, 1e-3, 1.0],
        "disorder_seeds": [0, 1],
        "master_seed": 77,
        "out_dir": str(tmp_path / "run"),
        "batch_size": 16,
    }
    cfg.update(overrides)
    return cfg


def write_config(tmp_path, cfg, name="config.json"):
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return str(path)


@pytest.fixture(scope="module")
def completed_run(tmp_path_factory):
    tmp_path = tmp_path_factory.mktemp("cli_run")
    cfg = ExperimentConfig(**base_config(tmp_path))
    cmd_preprocess(cfg)
    cmd_encode(cfg)
    summary = cmd_train_eval(cfg, bootstrap_seed=3)
    cmd_kernel_report(cfg)
    return cfg, summary


class TestConfig:
    def test_lambda_grid_spec(self, tmp_path):
        cfg = ExperimentConfig(
            **base_config(tmp_path, lambda_grid={"min": 1e-10, "max": 1e2, "points": 25})
        )
        lams = cfg.lambdas
        assert len(lams) == 25
        assert lams[0] == pytest.approx(1e-10)
        assert lams[-1] == pytest.approx(1e2)

    def test_extended_feature_count(self, tmp_path):
        cfg = ExperimentConfig(
            **base_config(tmp_path, encoding="extended", n_pulses=3, n_sites=2)
        )
        assert cfg.m_features == 6

    def test_unknown_key_rejected(self, tmp_path):
        path = write_config(tmp_path, {**base_config(tmp_path), "bogus": 1})
        with pytest.raises(ValueError, match="unknown config keys"):
            ExperimentConfig.from_file(path)

    def test_validation(self, tmp_path):
        with pytest.raises(ValueError):
            ExperimentConfig(**base_config(tmp_path, gammas=[-1.0]))
        with pytest.raises(ValueError):
            ExperimentConfig(**base_config(tmp_path, disorder_seeds=[]))


class TestPreprocess:
    def test_cache_hit(self, tmp_path, capsys):
        cfg = ExperimentConfig(**base_config(tmp_path))
        cmd_preprocess(cfg)
        capsys.readouterr()
        cmd_preprocess(cfg)
        assert "cache hit" in capsys.readouterr().out

    def test_split_is_disjoint_and_sized(self, tmp_path):
        cfg = ExperimentConfig(**base_config(tmp_path))
        base = cmd_preprocess(cfg)
        train_idx, _ = storage.load_array(base + "_train_idx")
        test_idx, _ = storage.load_array(base + "_test_idx")
        assert len(train_idx) == 45 and len(test_idx) == 21
        assert not set(train_idx.astype(int)) & set(test_idx.astype(int))

    def test_missing_idx_exits_2(self, tmp_path):
        cfg = base_config(
            tmp_path,
            dataset={"kind": "idx", "images": "/nonexistent.idx", "labels": "/n.idx"},
        )
        path = write_config(tmp_path, cfg)
        assert main(["preprocess", "--config", path]) == EXIT_INPUT

    def test_bad_config_exits_2(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text("{not json")
        assert main(["preprocess", "--config", str(path)]) == EXIT_INPUT


class TestEncode:
    def test_feature_files_layout(self, completed_run):
        cfg, _ = completed_run
        feats, sidecar = storage.load_array(
            os.path.join(cfg.out_dir, "features", "s0_g0.05_train")
        )
        assert feats.shape == (45, 4**2)
        np.testing.assert_array_equal(feats[:, 0], 1.0)
        meta = sidecar["meta"]
        assert meta["layout"] == "tomography"
        assert 0 < meta["mean_state_purity"] <= meta["mean_purity"] <= 1.0

    def test_dephasing_lowers_purity(self, completed_run):
        cfg, _ = completed_run
        purities = {}
        for gamma in cfg.gammas:
            base = os.path.join(cfg.out_dir, "features", f"s0_g{gamma:g}_train")
            purities[gamma] = storage.sidecar_meta(base)["mean_purity"]
        assert purities[1.0] < purities[0.05]

    def test_worker_count_does_not_change_bytes(self, tmp_path):
        cfg1 = ExperimentConfig(**base_config(tmp_path, out_dir=str(tmp_path / "w1")))
        cfg1.gammas, cfg1.disorder_seeds = [0.05], [0]
        cmd_preprocess(cfg1)
        cmd_encode(cfg1, workers=1)
        cfg2 = ExperimentConfig(**base_config(tmp_path, out_dir=str(tmp_path / "w2")))
        cfg2.gammas, cfg2.disorder_seeds = [0.05], [0]
        cmd_preprocess(cfg2)
        cmd_encode(cfg2, workers=2)
        for split in ("train", "test"):
            a = open(
                os.path.join(cfg1.out_dir, "features", f"s0_g0.05_{split}.bin"), "rb"
            ).read()
            b = open(
                os.path.join(cfg2.out_dir, "features", f"s0_g0.05_{split}.bin"), "rb"
            ).read()
            assert a == b

    def test_manifest_lists_artifacts_with_hashes(self, completed_run):
        cfg, _ = completed_run
        with open(os.path.join(cfg.out_dir, "manifest_encode.json")) as f:
            manifest = json.load(f)
        assert manifest["artifacts"]
        for rel, digest in manifest["artifacts"].items():
            assert len(digest) == 64


class TestTrainEval:
    def test_metrics_schema(self, completed_run):
        cfg, _ = completed_run
        with open(os.path.join(cfg.out_dir, "metrics.csv")) as f:
            header = f.readline().strip().split(",")
        assert header == [
            "seed", "gamma", "lambda", "train_risk", "test_risk", "margin_risk",
            "reff", "bound",
        ]

    def test_row_counts(self, completed_run):
        cfg, _ = completed_run
        rows = open(os.path.join(cfg.out_dir, "metrics.csv")).read().strip().splitlines()
        assert len(rows) - 1 == len(cfg.disorder_seeds) * len(cfg.gammas) * 3
        summary = open(os.path.join(cfg.out_dir, "summary.csv")).read().strip().splitlines()
        assert len(summary) - 1 == len(cfg.disorder_seeds) * len(cfg.gammas)

    def test_summary_is_min_over_grid(self, completed_run):
        cfg, summary = completed_run
        import csv as csvmod

        with open(os.path.join(cfg.out_dir, "metrics.csv")) as f:
            rows = list(csvmod.DictReader(f))
        for s in summary:
            cell = [
                float(r["test_risk"])
                for r in rows
                if int(r["seed"]) == s["seed"] and float(r["gamma"]) == s["gamma"]
            ]
            assert s["test_risk"] == pytest.approx(min(cell))

    def test_single_lambda_grid(self, tmp_path):
        cfg = ExperimentConfig(
            **base_config(tmp_path, lambda_grid=[1e-4], gammas=[0.05],
                          out_dir=str(tmp_path / "one"))
        )
        cfg.disorder_seeds = [0]
        cmd_preprocess(cfg)
        cmd_encode(cfg)
        summary = cmd_train_eval(cfg)
        assert len(summary) == 1
        assert summary[0]["lambda"] == pytest.approx(1e-4)

    def test_bootstrap_file(self, completed_run):
        cfg, _ = completed_run
        with open(os.path.join(cfg.out_dir, "bootstrap.csv")) as f:
            lines = f.read().strip().splitlines()
        assert lines[0].startswith("gamma,mean_min_test_risk,bootstrap_std")
        assert len(lines) - 1 == len(cfg.gammas)

    def test_best_model_persisted(self, completed_run):
        cfg, summary = completed_run
        from spinkernel.train import TrainedModel

        path = os.path.join(cfg.out_dir, "models", "model_s0_g0.05.json")
        with open(path) as f:
            payload = json.load(f)
        assert payload["classes"] == [3, 6, 8]
        row = next(r for r in summary if r["seed"] == 0 and r["gamma"] == 0.05)
        assert payload["lambda"] == pytest.approx(row["lambda"])
        model = TrainedModel.from_json(json.dumps(payload["models"]["3"]))
        assert model.weights.shape == (4**cfg.n_sites,)


class TestKernelReport:
    def test_report_contents(self, completed_run):
        cfg, _ = completed_run
        path = os.path.join(cfg.out_dir, "kernel", "report_s0_g0.05.json")
        with open(path) as f:
            report = json.load(f)
        assert report["purity_identity_residual"] <= 1e-10
        assert report["effective_rank"] >= 1.0
        assert len(report["eigenvalues"]) == 45
        assert set(report["alignments"]) == {"3", "6", "8", "mean"}
        assert report["bound_value"] > 0

    def test_spectrum_rows_equal_n_train(self, completed_run):
        cfg, _ = completed_run
        path = os.path.join(cfg.out_dir, "kernel", "spectrum_s0_g0.05.csv")
        rows = open(path).read().strip().splitlines()
        assert len(rows) - 1 == cfg.n_train

    def test_dephasing_lowers_reff(self, completed_run):
        cfg, _ = completed_run
        reffs = {}
        for gamma in cfg.gammas:
            path = os.path.join(cfg.out_dir, "kernel", f"report_s0_g{gamma:g}.json")
            with open(path) as f:
                reffs[gamma] = json.load(f)["effective_rank"]
        assert reffs[1.0] < reffs[0.05]


class TestTimeMultiplexPath:
    def test_sweep_with_local_measurements(self, tmp_path):
        cfg = ExperimentConfig(
            **base_config(
                tmp_path,
                gammas=[0.1],
                decoding={"kind": "time_multiplex", "dt_m": 0.5, "n_rep": 2},
                measurement_noise=1e-3,
                lambda_grid=[1e-6, 1e-2],
                out_dir=str(tmp_path / "tm"),
            )
        )
        cfg.disorder_seeds = [0]
        cmd_preprocess(cfg)
        cmd_encode(cfg)
        feats, sidecar = storage.load_array(
            os.path.join(cfg.out_dir, "features", "s0_g0.1_train")
        )
        assert feats.shape == (45, 1 + 3 * cfg.n_sites * 2)
        assert sidecar["meta"]["layout"] == "time_multiplex"
        summary = cmd_train_eval(cfg)
        assert len(summary) == 1
        cmd_kernel_report(cfg)
        with open(os.path.join(cfg.out_dir, "kernel", "report_s0_g0.1.json")) as f:
            report = json.load(f)
        # purity identity applies to tomography features only
        assert report["purity_identity_residual"] is None
        assert report["layout"] == "time_multiplex"


class TestDiagnostics:
    def test_time_series(self, tmp_path):
        cfg = ExperimentConfig(
            **base_config(
                tmp_path,
                gammas=[0.0],
                out_dir=str(tmp_path / "diag"),
                diagnostics={"n_inputs": 2, "sample_interval": 0.8},
                step_scale=0.5,
            )
        )
        cfg.disorder_seeds = [0]
        cmd_preprocess(cfg)
        rows = cmd_diagnostics(cfg)
        assert rows[0]["t"] == 0.0
        assert rows[0]["mean_entropy"] == pytest.approx(0.0, abs=1e-12)
        assert rows[0]["mean_negativity"] == pytest.approx(0.0, abs=1e-10)
        # unitary evolution of a pure state keeps entropy at numerical zero
        assert max(r["mean_entropy"] for r in rows) <= 1e-8

    def test_size_guard(self, tmp_path):
        cfg = ExperimentConfig(**base_config(tmp_path, n_sites=6))
        with pytest.raises(ValueError, match="n_sites <= 5"):
            cmd_diagnostics(cfg)


class TestMainEntry:
    def test_numerical_failure_exits_3(self, tmp_path):
        # absurdly coarse steps blow up the integrator -> exit code 3
        cfg = base_config(
            tmp_path,
            n_sites=2,
            n_pulses=3,
            gammas=[0.0],
            step_scale=200.0,
            out_dir=str(tmp_path / "blowup"),
        )
        cfg["disorder_seeds"] = [0]
        cfg["dataset"]["n_per_class"] = 6
        cfg["n_train"], cfg["n_test"] = 9, 3
        path = write_config(tmp_path, cfg)
        assert main(["preprocess", "--config", path]) == EXIT_OK
        from spinkernel.cli import EXIT_NUMERICAL

        assert main(["encode", "--config", path]) == EXIT_NUMERICAL

    def test_full_sweep_exit_zero(self, tmp_path):
        cfg = base_config(
            tmp_path,
            gammas=[0.1],
            lambda_grid=[1e-4, 1e-1],
            out_dir=str(tmp_path / "sweep"),
        )
        cfg["disorder_seeds"] = [0]
        path = write_config(tmp_path, cfg)
        assert main(["sweep", "--config", path, "--workers", "1"]) == EXIT_OK
        assert os.path.exists(tmp_path / "sweep" / "summary.csv")

    def test_out_and_seed_overrides(self, tmp_path):
        cfg = base_config(tmp_path)
        path = write_config(tmp_path, cfg)
        out = str(tmp_path / "override")
        assert main(["preprocess", "--config", path, "--out", out, "--seed", "9"]) == EXIT_OK
        assert os.path.exists(os.path.join(out, "dataset", "projected.bin"))
