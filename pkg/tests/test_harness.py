import json
import os

import numpy as np
import pytest
from click.testing import CliRunner

from slopeflow.cli import main
from slopeflow.func_model import eval_expr
from slopeflow.harness import (
    CORPUS,
    corpus,
    corpus_names,
    load_config,
    run_experiment,
)


def _write(path, text):
    path.write_text(text)
    return str(path)


class TestCorpus:
    def test_names(self):
        assert corpus_names() == [
            "fig31", "example_near_vs_steepest", "abs1d",
            "maxaffine", "quad", "diamond",
        ]

    def test_fig31_entry(self):
        e = corpus("fig31")
        assert e.n == 2 and e.region == ((-2.0, 2.0), (-2.0, 2.0))
        assert eval_expr(e.expr(), np.zeros(2)) == 100.0

    def test_quad_text(self):
        assert corpus("quad").text == "x1^2 + x2^2"

    def test_maxaffine_deterministic(self):
        assert corpus("maxaffine").text == CORPUS["maxaffine"].text
        assert corpus("maxaffine").text.count("x3") == 5

    def test_unknown_name(self):
        with pytest.raises(KeyError):
            corpus("nope")


class TestConfig:
    def test_load(self, tmp_path):
        cfg = load_config(_write(tmp_path / "c.ini", (
            "[experiment]\nfunction = quad\nmode = flow\nseed = 3\nout = o\n"
            "start = 1.0, 0.5\n\n[flow]\nh = 0.005\n"
        )))
        assert cfg.function == "quad" and cfg.mode == "flow"
        assert cfg.seed == 3 and cfg.start == (1.0, 0.5)
        assert cfg.flow["h"] == "0.005"

    def test_bad_mode(self, tmp_path):
        with pytest.raises(ValueError):
            load_config(_write(tmp_path / "c.ini",
                "[experiment]\nfunction = quad\nmode = dance\nseed = 0\n"))


class TestRunExperiment:
    def test_flow_mode(self, tmp_path):
        cfg = _write(tmp_path / "c.ini", (
            "[experiment]\nfunction = quad\nmode = flow\nseed = 0\n"
            f"out = {tmp_path / 'out'}\nstart = 1.0 0.0\n"
        ))
        assert run_experiment(cfg) == 0
        m = json.loads((tmp_path / "out" / "manifest.json").read_text())
        assert m["stop_reason"] == "slope"
        assert (tmp_path / "out" / "flow.csv").exists()
        assert (tmp_path / "out" / "plot.svg").exists()

    def test_verify_mode_records_discrimination(self, tmp_path):
        cfg = _write(tmp_path / "c.ini", (
            "[experiment]\nfunction = example_near_vs_steepest\nmode = verify\n"
            f"seed = 0\nout = {tmp_path / 'out'}\nstart = 0.0 0.0\n\n"
            "[descent]\neta = 0.4\nk = 64\nrestarts = 1\n"
        ))
        assert run_experiment(cfg) == 0
        m = json.loads((tmp_path / "out" / "manifest.json").read_text())
        assert m["near_steepest"]["verdict"] == "pass"
        assert m["steepest"]["verdict"] == "fail"

    def test_malformed_dsl_exit_one(self, tmp_path):
        cfg = _write(tmp_path / "c.ini", (
            "[experiment]\nfunction = max(x1,,)\nn = 2\nmode = flow\nseed = 0\n"
            f"out = {tmp_path / 'out'}\n"
        ))
        assert run_experiment(cfg) == 1
        m = json.loads((tmp_path / "out" / "manifest.json").read_text())
        assert "error" in m

    def test_certify_mode(self, tmp_path):
        cfg = _write(tmp_path / "c.ini", (
            "[experiment]\nfunction = abs1d\nmode = certify\nseed = 0\n"
            f"out = {tmp_path / 'out'}\n\n[certify]\ndraws = 5\n"
        ))
        assert run_experiment(cfg) == 0
        m = json.loads((tmp_path / "out" / "manifest.json").read_text())
        assert m["failures"] == 0 and len(m["certificates"]) >= 1

    def test_determinism(self, tmp_path):
        text = (
            "[experiment]\nfunction = diamond\nmode = flow\nseed = 7\n"
            "out = PLACEHOLDER\nstart = 1.0 0.5\n"
        )
        outs = []
        for tag in ("a", "b"):
            out = tmp_path / tag
            cfg = _write(tmp_path / f"{tag}.ini", text.replace("PLACEHOLDER", str(out)))
            assert run_experiment(cfg) == 0
            outs.append(out)
        for name in ("manifest.json", "flow.csv"):
            assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()


class TestCli:
    def test_corpus_list(self):
        res = CliRunner().invoke(main, ["corpus", "--list"])
        assert res.exit_code == 0
        assert res.output.split() == corpus_names()

    def test_verify_command(self, tmp_path):
        # build a small flow trace, then verify it from disk
        cfg = _write(tmp_path / "c.ini", (
            "[experiment]\nfunction = quad\nmode = flow\nseed = 0\n"
            f"out = {tmp_path / 'out'}\nstart = 1.0 0.0\n"
        ))
        assert run_experiment(cfg) == 0
        res = CliRunner().invoke(main, [
            "verify", str(tmp_path / "out" / "flow.csv"),
            "--function", "x1^2 + x2^2", "--n", "2",
            "--property", "near_max_slope",
        ])
        assert res.exit_code == 0, res.output
        rep = json.loads(res.output)
        assert rep["verdict"] == "pass"

    def test_verify_parse_error(self, tmp_path):
        p = tmp_path / "c.csv"
        p.write_text("t,x1,f,limiting_slope,speed\n0.0,1.0,1.0,2.0,1.0\n1.0,0.0,0.0,0.0,1.0\n")
        res = CliRunner().invoke(main, [
            "verify", str(p), "--function", "x1^", "--n", "1",
            "--property", "near_steepest",
        ])
        assert res.exit_code == 1

    def test_run_overrides_out(self, tmp_path):
        cfg = _write(tmp_path / "c.ini", (
            "[experiment]\nfunction = quad\nmode = flow\nseed = 0\n"
            "out = ignored\nstart = 1.0 0.0\n"
        ))
        out = tmp_path / "cli_out"
        res = CliRunner().invoke(main, ["run", cfg, "--out", str(out)])
        assert res.exit_code == 0
        assert (out / "manifest.json").exists()
        assert not (tmp_path / "ignored").exists()
