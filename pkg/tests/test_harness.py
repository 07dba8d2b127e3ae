import json

import numpy as np
import pytest

from coxgp.config import ExperimentConfig
from coxgp.harness import fit, load_dataset, load_summary, run_fit, run_rate_study, run_simulate, simulate
from coxgp.inference import PosteriorSummary


def small(**kw):
    base = dict(n_grid=[16, 32, 64], replicates=3, iterations=1500, burn_in=500, thinning=5,
                cube_cells_per_axis=16, master_seed=99)
    base.update(kw)
    return ExperimentConfig(**base)


class TestSimulate:
    def test_byte_identical_manifests(self, tmp_path):
        a = run_simulate(small(), 32, tmp_path / "a")
        b = run_simulate(small(), 32, tmp_path / "b")
        assert a.read_bytes() == b.read_bytes()
        for name in ("covariates.cvf", "points.csv"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_seed_changes_output(self, tmp_path):
        a = run_simulate(small(), 32, tmp_path / "a")
        b = run_simulate(small(master_seed=100), 32, tmp_path / "b")
        assert a.read_bytes() != b.read_bytes()

    @pytest.mark.parametrize("n", [16.0, 50.0, 128.0])
    def test_volume_is_n(self, tmp_path, n):
        m = json.loads(run_simulate(small(), n, tmp_path).read_text())
        assert m["volume"] == pytest.approx(n, rel=1e-12)
        assert m["n"] == n

    def test_zero_stub_empty(self, tmp_path):
        m = json.loads(run_simulate(small(ground_truth="zero"), 64, tmp_path).read_text())
        assert m["point_count"] == 0
        assert load_dataset(tmp_path).pattern.count == 0

    def test_hashes_match_files(self, tmp_path):
        import hashlib

        m = json.loads(run_simulate(small(), 16, tmp_path).read_text())
        for name, digest in m["files"].items():
            assert hashlib.sha256((tmp_path / name).read_bytes()).hexdigest() == digest

    def test_dataset_roundtrip(self, tmp_path):
        cfg = small()
        run_simulate(cfg, 32, tmp_path, replicate=2)
        d0 = simulate(cfg, 32, 2)
        d1 = load_dataset(tmp_path)
        assert np.array_equal(d0.covariates.values, d1.covariates.values)
        assert np.array_equal(d0.pattern.points, d1.pattern.points)
        assert d1.truth == d0.truth and d1.replicate == 2


class TestFit:
    def test_summary_roundtrip(self, tmp_path):
        cfg = small()
        run_simulate(cfg, 32, tmp_path / "ds")
        s = run_fit(cfg, tmp_path / "ds", tmp_path / "fit")
        back = load_summary(tmp_path / "fit" / "summary.json")
        assert back.to_dict() == s.to_dict()
        assert (tmp_path / "fit" / "trace.csv").exists()
        assert isinstance(back, PosteriorSummary)

    def test_l1_iff_truth(self):
        cfg = small()
        data = simulate(cfg, 32)
        with_truth, _, _ = fit(cfg, data)
        assert with_truth.l1_error_of_mean is not None
        data.truth = None
        without, _, _ = fit(cfg, data)
        assert without.l1_error_of_mean is None
        assert "l1_error_of_mean" not in without.to_dict()

    def test_rerun_bit_identical(self, tmp_path):
        cfg = small()
        run_simulate(cfg, 32, tmp_path / "ds")
        run_fit(cfg, tmp_path / "ds", tmp_path / "f1")
        run_fit(cfg, tmp_path / "ds", tmp_path / "f2")
        for name in ("summary.json", "trace.csv", "fit_manifest.json"):
            assert (tmp_path / "f1" / name).read_bytes() == (tmp_path / "f2" / name).read_bytes()


class TestRateStudy:
    def test_outputs_and_determinism(self, tmp_path):
        cfg = small()
        r1 = run_rate_study(cfg, tmp_path / "a")
        r2 = run_rate_study(cfg, tmp_path / "b", workers=2)
        assert r1.theoretical_slope == -1 / 3
        for name in ("report.csv", "manifest.json", "rate.svg"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
        m = json.loads((tmp_path / "a" / "manifest.json").read_text())
        assert m["distinct_seed_streams"] == 9 * 3
        assert len(list((tmp_path / "a" / "tasks").glob("*.json"))) == 9
        assert r2.fitted_slope == r1.fitted_slope

    def test_resume_reuses_tasks(self, tmp_path):
        cfg = small()
        run_rate_study(cfg, tmp_path)
        before = (tmp_path / "report.csv").read_bytes()
        task = tmp_path / "tasks" / "n16_r0.json"
        data = json.loads(task.read_text())
        data["l1_error"] = 123.0
        task.write_text(json.dumps(data))
        rep = run_rate_study(cfg, tmp_path, resume=True)
        assert max(rep.errors[0]) == 123.0
        run_rate_study(cfg, tmp_path)
        assert (tmp_path / "report.csv").read_bytes() == before

    def test_failure_threshold(self, tmp_path):
        cfg = small(replicates=3)
        run_rate_study(cfg, tmp_path)
        for r in (0, 1):
            p = tmp_path / "tasks" / f"n32_r{r}.json"
            p.write_text(json.dumps({"n": 32.0, "replicate": r, "ok": False, "error": "injected"}))
        with pytest.raises(RuntimeError, match="n=32"):
            run_rate_study(cfg, tmp_path, resume=True)

    def test_preconditions(self, tmp_path):
        with pytest.raises(ValueError):
            run_rate_study(small(n_grid=[16, 32]), tmp_path)
        with pytest.raises(ValueError):
            run_rate_study(small(replicates=2), tmp_path)
