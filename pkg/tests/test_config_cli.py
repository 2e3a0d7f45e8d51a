import csv
import os

import numpy as np
import pytest

from sfpe import __version__
from sfpe.cli import main
from sfpe.config import DEFAULT_BUDGET, ConfigError, custom_problem, parse_config, parse_sections
from sfpe.verification import pde_residual

MINIMAL = """
[problem]
name = "heat"
d = 2
[run]
command = "value"
t = 0.0
x = [0.5, -0.3]
seed = 1
"""


def _write(tmp_path, text, name="run.cfg"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def _read_csv(path):
    with open(path) as fh:
        lines = fh.read().splitlines()
    assert lines[0].startswith("# sfpe ")
    return list(csv.reader(lines[1:]))


HEAT_VALUE = """
[problem]
name = "heat"
[run]
command = "value"
t = 0
x = [0, 0]
seed = 42
[mc]
n_paths = 10000
"""


class TestParser:
    def test_heat_value_example(self):
        cfg = parse_config(HEAT_VALUE)
        assert (cfg.t, cfg.x, cfg.n_paths, cfg.seed) == (0.0, (0.0, 0.0), 10_000, 42)

    def test_minimal_config(self):
        cfg = parse_config(MINIMAL)
        assert (cfg.problem, cfg.command, cfg.t, cfg.x, cfg.seed) == ("heat", "value", 0.0,
                                                                      (0.5, -0.3), 1)
        assert cfg.n_paths == 10_000
        assert cfg.budget == DEFAULT_BUDGET
        assert cfg.build_problem().d == 2

    def test_values_and_comments(self):
        sections = parse_sections("[mc]\n# comment\nantithetic = true  # inline\n"
                                  "n_paths = 4000\n")
        assert sections["mc"] == {"antithetic": (True, 3), "n_paths": (4000, 4)}

    def test_time_beyond_horizon_names_the_key(self):
        with pytest.raises(ConfigError) as info:
            parse_config(MINIMAL.replace("t = 0.0", "t = 1.1"))
        assert info.value.key == "t"
        assert "'t'" in str(info.value)

    def test_unknown_key_reports_line(self):
        with pytest.raises(ConfigError) as info:
            parse_config(MINIMAL + "foo = 3\n")
        assert info.value.key == "foo"
        assert info.value.line == len(MINIMAL.splitlines()) + 1

    @pytest.mark.parametrize("text", ["[nope]\n", "[mc]\nn_paths = \"many\"\n",
                                      "[mc]\nn_paths = 10\nn_paths = 20\n", "x = 1\n",
                                      "[mc]\nn_paths 10\n"])
    def test_malformed(self, text):
        with pytest.raises(ConfigError):
            parse_sections(text)

    @pytest.mark.parametrize("old,new,key", [("d = 2", "d = 3", "x"),
                                             ('"value"', '"plot"', "command"),
                                             ('"heat"', '"nowhere"', "name")])
    def test_semantic_errors(self, old, new, key):
        with pytest.raises(ConfigError) as info:
            parse_config(MINIMAL.replace(old, new))
        assert info.value.key == key

    def test_terminal_time_allowed_only_for_solve(self):
        with pytest.raises(ConfigError):
            parse_config(MINIMAL.replace("t = 0.0", "t = 1.0"))
        cfg = parse_config(MINIMAL.replace("t = 0.0", "t = 1.0").replace('"value"', '"solve"'))
        assert cfg.t == 1.0

    def test_digest_ignores_output(self):
        a = parse_config(MINIMAL)
        assert a.digest() == a.with_overrides(output="/elsewhere").digest()
        assert a.digest() != a.with_overrides(seed=2).digest()

    def test_problem_file(self, tmp_path):
        _write(tmp_path, '[problem]\nmodel = "linear"\nrate = -0.5\nvol = 1.0\nd = 2\n',
               "model.cfg")
        cfg = parse_config(MINIMAL.replace('"heat"', '"model.cfg"'), base_dir=str(tmp_path))
        spec = cfg.build_problem()
        assert spec.d == 2 and spec.solution is not None


class TestCustomProblem:
    def test_linear_gaussian_solution_solves_the_pde(self):
        spec = custom_problem({"model": "linear", "rate": -1.0, "vol": 0.7}, 2)
        assert pde_residual(spec, spec.solution, [(0.2, [0.3, -0.1]), (0.6, [1.0, 0.5])]).all_passed
        assert custom_problem({"discount": 0.1}).solution is None

    def test_gbm_call_is_black_scholes(self):
        spec = custom_problem({"model": "gbm", "rate": 0.05, "vol": 0.2, "payoff": "call",
                               "discount": 0.05})
        out = spec.solution(np.array([0.0]), np.array([[1.0]]))[0]
        np.testing.assert_allclose(out[0], 0.10450583572185565, rtol=1e-10)

    @pytest.mark.parametrize("keys", [{"model": "cubic"}, {"vol": -1.0},
                                      {"model": "gbm", "d": 2}, {"payoff": "digital"},
                                      {"model": "trig", "payoff": "call"}])
    def test_rejections(self, keys):
        with pytest.raises(ConfigError):
            custom_problem(keys)


class TestCli:
    def test_value_run_writes_results(self, tmp_path, capsys):
        cfg = _write(tmp_path, MINIMAL + "output = \"out\"\n[mc]\nn_paths = 2000\n")
        assert main(["--config", cfg]) == 0
        rows = _read_csv(tmp_path / "out" / "results.csv")
        assert rows[0] == ["t", "x", "component", "mean", "stderr", "n_samples", "exact"]
        assert len(rows) == 2
        assert (tmp_path / "out" / "timing.csv").exists()
        assert "value" in capsys.readouterr().out

    def test_heat_value_twice_is_identical(self, tmp_path):
        cfg = _write(tmp_path, HEAT_VALUE)
        for name in ("a", "b"):
            assert main(["--config", cfg, "--output", str(tmp_path / name)]) == 0
        assert (open(tmp_path / "a" / "results.csv", "rb").read()
                == open(tmp_path / "b" / "results.csv", "rb").read())

    def test_byte_identical_reruns(self, tmp_path):
        cfg = _write(tmp_path, MINIMAL.replace('"value"', '"gradient"') + "[mc]\nn_paths = 5000\n")
        outs = [str(tmp_path / name) for name in ("a", "b")]
        assert main(["--config", cfg, "--output", outs[0]]) == 0
        assert main(["--config", cfg, "--output", outs[1], "--threads", "3"]) == 0
        texts = [open(os.path.join(o, "results.csv")).read() for o in outs]
        assert texts[0] == texts[1]
        assert texts[0].startswith(f"# sfpe {__version__} seed=1 config_hash=")

    def test_seed_override_changes_results(self, tmp_path):
        cfg = _write(tmp_path, MINIMAL + "[mc]\nn_paths = 1000\n")
        main(["--config", cfg, "--output", str(tmp_path / "a")])
        main(["--config", cfg, "--output", str(tmp_path / "b"), "--seed", "9"])
        assert (open(tmp_path / "a" / "results.csv").read()
                != open(tmp_path / "b" / "results.csv").read())

    def test_budget_refusal_exits_three(self, tmp_path, capsys):
        text = MINIMAL.replace('"heat"', '"manufactured-d2"').replace('"value"', '"solve"')
        cfg = _write(tmp_path, text + "[picard]\ndepth = 3\nsamples_per_level = [10, 10, 10000]\n")
        assert main(["--config", cfg, "--output", str(tmp_path / "o"), "--budget", "1000"]) == 3
        assert "budget" in capsys.readouterr().err
        assert not (tmp_path / "o" / "results.csv").exists()

    def test_solve_at_terminal_time(self, tmp_path):
        text = MINIMAL.replace('"value"', '"solve"').replace("t = 0.0", "t = 1.0")
        cfg = _write(tmp_path, text)
        assert main(["--config", cfg, "--output", str(tmp_path / "o")]) == 0
        rows = _read_csv(tmp_path / "o" / "results.csv")
        assert rows[2][3] == "nan"

    def test_verify_manufactured_passes(self, tmp_path):
        text = (MINIMAL.replace('"heat"', '"manufactured-d2"').replace('"value"', '"verify"')
                .replace("t = 0.0", "t = 0.1") + "[mc]\nn_paths = 20000\n")
        cfg = _write(tmp_path, text)
        assert main(["--config", cfg, "--output", str(tmp_path / "o")]) == 0
        rows = _read_csv(tmp_path / "o" / "results.csv")
        assert rows[0] == ["check", "where", "statistic", "threshold", "pass"]
        assert all(r[-1] == "true" for r in rows[1:])

    @pytest.mark.parametrize("extra", ["[run]\n", "[mc]\nn_paths = 1\n"])
    def test_config_errors_exit_two(self, tmp_path, capsys, extra):
        cfg = _write(tmp_path, MINIMAL + extra)
        assert main(["--config", cfg, "--output", str(tmp_path / "o")]) == 2
        assert "config error" in capsys.readouterr().err

    def test_missing_config_file(self, tmp_path):
        assert main(["--config", str(tmp_path / "absent.cfg")]) == 2

    def test_invalid_threads(self, tmp_path):
        cfg = _write(tmp_path, MINIMAL)
        assert main(["--config", cfg, "--threads", "0"]) == 2

    @pytest.mark.parametrize("command,extra,n_rows", [
        ("converge", "axis = \"n_paths\"\nvalues = [500, 2000]\n[picard]\ndepth = 1\n", 6),
        ("moments", "horizons = [0.5, 1.0]\n", 2)])
    def test_other_commands(self, tmp_path, command, extra, n_rows):
        cfg = _write(tmp_path, MINIMAL.replace('"value"', f'"{command}"') + extra)
        assert main(["--config", cfg, "--output", str(tmp_path / "o")]) == 0
        assert len(_read_csv(tmp_path / "o" / "results.csv")) == n_rows + 1
