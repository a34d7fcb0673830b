import json
import re

import pytest

from fpo import cli, harness
from fpo.harness import (ConfigError, aggregate, config_from_dict, load_config,
                         nearest_rank_quartiles, parse_method, read_history, run)

TINY = {
    "iterations": 3,
    "seeds": [0, 1],
    "environment": {"name": "cliff_walker", "horizon": 20},
    "polgrad": {"batch_size": 100},
    "quadrature": {"max_subdivisions": 1, "trajs_per_node": 1},
}


def tiny(tmp_path, method="naive", name=None, **over):
    raw = {**TINY, "method": method, "output_dir": str(tmp_path / (name or method)), **over}
    if name:
        raw["name"] = name
    return config_from_dict(raw)


def write_toml(path, text):
    path.write_text(text)
    return str(path)


TOML = """
method = "naive"
iterations = 2
seeds = [0, 1]
output_dir = "out"

[environment]
name = "cliff_walker"
horizon = 20

[polgrad]
batch_size = 100

[quadrature]
max_subdivisions = 1
trajs_per_node = 1
"""


class TestConfig:
    def test_parse_method(self):
        assert parse_method("epopt(0.2)") == ("epopt", [0.2])
        assert parse_method("fixed(2,1)") == ("fixed", [2.0, 1.0])
        assert parse_method("FPO-UCB-S") == ("fpo-ucb-s", [])

    @pytest.mark.parametrize("bad", ["sgd", "epopt(x)", "fixed(", ""])
    def test_bad_methods(self, bad):
        with pytest.raises(ConfigError):
            parse_method(bad)

    def test_enum_on_continuous_rejected(self, tmp_path):
        with pytest.raises(ConfigError, match="discrete"):
            tiny(tmp_path, "enum")

    def test_enum_on_toy_accepted(self, tmp_path):
        tiny(tmp_path, "enum", environment={"name": "toy_velocity"})

    def test_unknown_keys(self, tmp_path):
        with pytest.raises(ConfigError):
            tiny(tmp_path, polgrad={"batchsize": 10})
        with pytest.raises(ConfigError):
            tiny(tmp_path, colour="red")

    def test_fixed_needs_valid_psi(self, tmp_path):
        with pytest.raises(ConfigError):
            tiny(tmp_path, "fixed")
        with pytest.raises(ConfigError):
            tiny(tmp_path, "fixed(50,1)")
        assert tiny(tmp_path, "fixed(2,1)").to_dict()["method_params"]["psi"] == [2.0, 1.0]

    def test_resolution_is_total(self, tmp_path):
        d = tiny(tmp_path, "epopt").to_dict()
        assert d["method_params"] == {"epsilon": 0.2, "rejection_start_iter": 50, "upper_tail": False}
        assert d["environment"]["fall_reward"] == -5000.0
        assert d["polgrad"]["kl_limit"] == 0.01
        assert d["acquisition"]["kappa"] == 2.0

    def test_load_toml(self, tmp_path):
        cfg = load_config(write_toml(tmp_path / "c.toml", TOML))
        assert cfg.iterations == 2 and cfg.environment == "cliff_walker"

    def test_malformed_toml(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config(write_toml(tmp_path / "c.toml", "method = "))
        with pytest.raises(ConfigError):
            load_config(str(tmp_path / "missing.toml"))


class TestRun:
    def test_files_and_rows(self, tmp_path):
        out = run(tiny(tmp_path))
        hists = sorted(p.name for p in out.glob("history_seed*.csv"))
        assert hists == ["history_seed0.csv", "history_seed1.csv"]
        for h in hists:
            cols = read_history(out / h)
            assert list(cols) == ["iteration", "psi_0", "psi_1", "J", "fp_mean_0", "fp_std_0", "kl"]
            assert cols["iteration"].tolist() == [1.0, 2.0, 3.0]
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["config"]["iterations"] == 3
        assert "code_version" in manifest

    def test_rerun_byte_identical(self, tmp_path):
        a = run(tiny(tmp_path, "fpo-ucb-s", name="a"))
        b = run(tiny(tmp_path, "fpo-ucb-s", name="b"))
        for seed in (0, 1):
            assert (a / f"history_seed{seed}.csv").read_bytes() == \
                (b / f"history_seed{seed}.csv").read_bytes()

    def test_output_root_env(self, tmp_path, monkeypatch):
        monkeypatch.setenv(harness.OUTPUT_ROOT_ENV, str(tmp_path / "root"))
        cfg = config_from_dict({**TINY, "method": "naive", "seeds": [0], "iterations": 1,
                                "output_dir": "rel"})
        assert run(cfg) == tmp_path / "root" / "rel"


class TestAggregate:
    def test_nearest_rank(self):
        assert nearest_rank_quartiles([5, 3, 1, 4, 2]) == (2.0, 3.0, 4.0)
        assert nearest_rank_quartiles([7.5]) == (7.5, 7.5, 7.5)
        with pytest.raises(ValueError):
            nearest_rank_quartiles([])

    def test_summary(self, tmp_path):
        d1 = run(tiny(tmp_path, "naive"))
        d2 = run(tiny(tmp_path, "random"))
        s = aggregate([d1, d2])
        assert set(s["methods"]) == {"naive", "random"}
        e = s["methods"]["naive"]
        assert len(e["final_J"]) == 2 and len(e["curve"]["median"]) == 3
        assert e["q1"] <= e["median"] <= e["q3"]
        assert e["final_J"][0] == read_history(d1 / "history_seed0.csv")["J"][-1]

    def test_empty(self):
        with pytest.raises(ValueError):
            aggregate([])

    def test_incomplete_run(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            aggregate([tmp_path])


@pytest.fixture(scope="module")
def summary(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("plot")
    return aggregate([run(tiny(tmp, "naive")), run(tiny(tmp, "fpo-ucb-s"))])


class TestPlot:
    def test_two_series(self, summary, tmp_path):
        curves, psi = harness.plot(summary, tmp_path)
        text = curves.read_text()
        assert len(set(re.findall(r'id="series-([^"]+)"', text))) == 2
        # only FPO runs appear in the psi schedule, plus the reference line
        assert set(re.findall(r'id="series-([^"]+)"', psi.read_text())) == {"fpo-ucb-s"}

    def test_deterministic(self, summary, tmp_path):
        a = [p.read_bytes() for p in harness.plot(summary, tmp_path / "a")]
        b = [p.read_bytes() for p in harness.plot(summary, tmp_path / "b")]
        assert a == b

    def test_psi_mean_is_beta_mean(self, summary):
        e = summary["methods"]["fpo-ucb-s"]
        assert all(0.0 < m < 1.0 for m in e["psi_mean_median"])


class TestCli:
    def test_validate(self, tmp_path, capsys):
        assert cli.main(["validate", write_toml(tmp_path / "c.toml", TOML)]) == 0
        assert json.loads(capsys.readouterr().out)["iterations"] == 2

    def test_invalid_exit_code(self, tmp_path, capsys):
        bad = write_toml(tmp_path / "c.toml", TOML.replace('"naive"', '"enum"'))
        assert cli.main(["validate", bad]) == 2
        assert "discrete" in capsys.readouterr().err

    def test_run_aggregate_plot(self, tmp_path, monkeypatch, capsys):
        monkeypatch.chdir(tmp_path)
        cfg = write_toml(tmp_path / "c.toml", TOML)
        assert cli.main(["run", cfg, "--seeds", "3"]) == 0
        assert (tmp_path / "out" / "history_seed3.csv").exists()
        assert cli.main(["aggregate", "out", "-o", "s.json"]) == 0
        assert cli.main(["plot", "s.json", "-o", "figs"]) == 0
        assert (tmp_path / "figs" / "learning_curves.svg").exists()

    def test_missing_summary(self, tmp_path):
        assert cli.main(["aggregate", str(tmp_path / "nope")]) == 2
