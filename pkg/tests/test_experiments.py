import csv
import json
import math

import pytest

from jumptrunc import experiments as ex
from jumptrunc.analysis import ExactGeometric, strong_error
from jumptrunc.errors import ConfigurationError
from jumptrunc.model import geometric_problem
from jumptrunc.scheme import SchemeConfig, SchemeKind


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


class TestConvergence:
    def test_example_5_1_small(self, tmp_path):
        res = ex.run_example_5_1(seed=7, out=tmp_path, n_paths=20, levels=[4, 5, 6], reference_level=8, plot=False)
        assert res.summary["theory_rate"] == pytest.approx(1 / 12, abs=1e-15)
        rows = read_csv(tmp_path / "example-5.1" / "errors.csv")
        assert rows[0] == ["delta", "n_paths", "raw_moment", "norm_error", "std_error"]
        assert len(rows) == 4
        assert [float(r[0]) for r in rows[1:]] == [4 * 2.0**-4, 4 * 2.0**-5, 4 * 2.0**-6]
        summary = json.loads((tmp_path / "example-5.1" / "summary.json").read_text())
        assert summary["warning"].startswith("acceptance thresholds assume")
        assert "plain_em_blowups_at_step_2^-3" in summary

    def test_byte_identical_reruns(self, tmp_path):
        kw = dict(n_paths=12, levels=[3, 4, 5], reference_level=7)
        ex.run_example_5_1(seed=3, out=tmp_path / "a", **kw)
        ex.run_example_5_1(seed=3, out=tmp_path / "b", workers=2, **kw)
        for name in ("errors.csv", "summary.json", "plot.svg"):
            a = (tmp_path / "a" / "example-5.1" / name).read_bytes()
            b = (tmp_path / "b" / "example-5.1" / name).read_bytes()
            assert a == b, name

    def test_custom_inline_problem(self):
        problem = {"drift": "poly:0,-1", "diffusion": "poly:0,0.1", "jump": "poly:0,0", "intensity": 0.0, "x0": 1.0}
        res = ex.run_convergence(ex.ExperimentSpec("c", "custom", kind="plain", problem=problem, n_paths=10))
        assert res.table.rows[0].level == 5 and len(res.table.rows) == 5
        with pytest.raises(ConfigurationError):
            ex.run_convergence(ex.ExperimentSpec("c", "custom", problem={"drift": "poly:1"}))

    def test_unknown_preset(self):
        with pytest.raises(ConfigurationError):
            ex.ExperimentSpec("x", "example-9")

    def test_eps_domain(self):
        with pytest.raises(ConfigurationError):
            ex.ExperimentSpec("x", "custom", policy={"phi_eps": 0.3})


class TestSeries:
    def test_example_5_2_small(self, tmp_path):
        res = ex.run_example_5_2(seed=1, out=tmp_path, n_paths=40, horizon=4.0)
        s = res.summary
        assert s["theory_exponent"] == pytest.approx(0.375, abs=1e-15)
        assert s["theory_rate"] == pytest.approx(0.15, abs=1e-12)
        series = read_csv(tmp_path / "example-5.2" / "series.csv")
        assert series[0] == ["t", "mean_square", "std_error"]
        assert len(series) == 1 + 4 * 128 + 1
        paths = read_csv(tmp_path / "example-5.2" / "paths.csv")
        assert len(paths) == len(series) and float(paths[1][1]) == 0.5
        assert (tmp_path / "example-5.2" / "plot.svg").exists()

    def test_example_5_3_small(self, tmp_path):
        res = ex.run_example_5_3(seed=1, out=tmp_path, n_paths=40, horizon=10.0, burn_in=5.0, plot=False)
        s = res.summary
        assert s["theory_bound"] == pytest.approx(22 / 3, abs=1e-12)
        assert s["continuous_bound"] == pytest.approx(6.1 / 1.3, abs=1e-12)
        assert s["theory_rate"] == pytest.approx(1 / 3 - 2 / 50, abs=1e-12)
        assert not (tmp_path / "example-5.3" / "plot.svg").exists()


class TestOracle:
    def test_small_run_and_truncation_inert(self, tmp_path):
        res = ex.run_oracle_benchmark(seed=5, out=tmp_path, n_paths=300)
        assert res.summary["truncated_matches_plain"]
        rows = read_csv(tmp_path / "geometric-jump" / "errors.csv")
        assert len(rows) == 7
        assert read_csv(tmp_path / "geometric-jump" / "errors_truncated.csv") == rows

    def test_zero_noise_matches_euler_recursion(self):
        a, x0, T = 0.05, 1.0, 1.0
        problem = geometric_problem(a, 0.0, 0.5, 0.0, x0)
        tab = strong_error(problem, SchemeConfig(SchemeKind.PLAIN, 0), [4, 5, 6, 7], 2.0, 3, 0, T,
                           reference=ExactGeometric(a, 0.0, 0.5))
        for row in tab.rows:
            n = 2**row.level
            euler = x0
            for _ in range(n):
                euler += a * euler * (T / n)
            err = (x0 * math.exp(a * T) - euler) ** 2
            assert row.raw_moment == pytest.approx(err, rel=1e-12, abs=1e-30)

    def test_wrong_preset(self):
        with pytest.raises(ConfigurationError):
            ex.run_oracle(ex.ExperimentSpec("o", "example-5.1"))


@pytest.mark.parametrize("preset", sorted(ex.PRESET_INFO))
def test_check_assumptions(preset, tmp_path):
    res = ex.run_check_assumptions(ex.ExperimentSpec("check", preset, out=tmp_path))
    assert res.passed
    data = json.loads((tmp_path / preset / "assumptions.json").read_text())
    assert all(data["pass"].values()) and data["checks"]


@pytest.mark.slow
def test_example_5_1_golden(tmp_path):
    res = ex.run_example_5_1(seed=42, out=tmp_path, plot=False)
    # frozen from the build-time golden run
    assert res.fit.slope == pytest.approx(0.22320933521355035, abs=1e-12)
    assert res.summary["plain_em_blowups_at_step_2^-3"] == 66
    assert len(res.table.rows) == 5
