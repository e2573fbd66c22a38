import json

import pytest

from msa_control.cli import EXIT_CONFIG, EXIT_OK, main


def write_config(tmp_path, name="cfg.json", **overrides):
    cfg = {"problem": "lq-scalar", "M": 200, "G": 4, "m_max": 3}
    cfg.update(overrides)
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return path


def strip_wall_time(csv_text):
    rows = [line.split(",") for line in csv_text.strip().splitlines()]
    return [row[:-1] for row in rows]


class TestSolve:
    def test_writes_outputs(self, tmp_path):
        cfg = write_config(tmp_path)
        out = tmp_path / "out"
        rc = main(["solve", "--config", str(cfg), "--out", str(out)])
        assert rc == EXIT_OK
        for name in ("iterations.csv", "iterations.json", "final_control.bin", "summary.json"):
            assert (out / name).exists(), name
        summary = json.loads((out / "summary.json").read_text())
        assert summary["J_final"] <= summary["J_initial"]

    def test_zero_budget(self, tmp_path):
        cfg = write_config(tmp_path, m_max=0)
        out = tmp_path / "out"
        rc = main(["solve", "--config", str(cfg), "--out", str(out)])
        assert rc == EXIT_OK
        summary = json.loads((out / "summary.json").read_text())
        assert summary["iterations"] == 0

    def test_missing_config(self, tmp_path, capsys):
        out = tmp_path / "out"
        rc = main(["solve", "--config", str(tmp_path / "nope.json"), "--out", str(out)])
        assert rc == EXIT_CONFIG
        assert not out.exists()  # no partial outputs
        assert "error" in capsys.readouterr().err

    def test_bad_json_reports_position(self, tmp_path, capsys):
        path = tmp_path / "bad.json"
        path.write_text('{"problem": "lq-scalar",\n  "M": }\n')
        rc = main(["solve", "--config", str(path), "--out", str(tmp_path / "out")])
        assert rc == EXIT_CONFIG
        err = capsys.readouterr().err
        assert "line 2" in err and "column" in err

    def test_unknown_problem(self, tmp_path, capsys):
        cfg = write_config(tmp_path, problem="no-such-problem")
        rc = main(["solve", "--config", str(cfg), "--out", str(tmp_path / "out")])
        assert rc == EXIT_CONFIG

    def test_inline_lq_problem(self, tmp_path):
        cfg = write_config(
            tmp_path,
            problem={
                "type": "lq",
                "n": 1, "d": 1, "k": 1, "T": 1.0,
                "x0": [1.0],
                "b1": [[-0.5]],
                "G": [[1.0]],
                "Gamma": [[1.0]],
                "sigma0": [[0.3]],
                "sigma_u": [[[0.5]]],
                "g_quad": [[0.2]],
                "domain": [[-1.0], [0.0], [1.0]],
            },
        )
        out = tmp_path / "out"
        rc = main(["solve", "--config", str(cfg), "--out", str(out)])
        assert rc == EXIT_OK
        assert (out / "summary.json").exists()

    def test_deterministic_csvs(self, tmp_path):
        cfg = write_config(tmp_path)
        outs = []
        for i, threads in enumerate((1, 4)):
            out = tmp_path / f"out{i}"
            rc = main(
                ["solve", "--config", str(cfg), "--out", str(out), "--threads", str(threads)]
            )
            assert rc == EXIT_OK
            outs.append(strip_wall_time((out / "iterations.csv").read_text()))
        assert outs[0] == outs[1]

    def test_seed_override_changes_run(self, tmp_path):
        cfg = write_config(tmp_path)
        texts = []
        for i, seed in enumerate((7, 8)):
            out = tmp_path / f"seed{i}"
            main(["solve", "--config", str(cfg), "--out", str(out), "--seed", str(seed)])
            texts.append(strip_wall_time((out / "iterations.csv").read_text()))
        assert texts[0] != texts[1]


class TestValidate:
    def test_sequence(self, tmp_path):
        out = tmp_path / "seq"
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"m_max": 1000}))
        rc = main(["validate", "sequence", "--config", str(cfg), "--out", str(out)])
        assert rc == EXIT_OK
        text = (out / "sequence.csv").read_text()
        assert text.splitlines()[0] == "a1,A,max_b,bound,ok"
        assert len(text.strip().splitlines()) == 1 + 4 * 3

    def test_unknown_experiment_rejected(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["validate", "frobnicate", "--out", "/tmp/x"])
        assert exc.value.code == 2


class TestParser:
    def test_unknown_subcommand(self):
        with pytest.raises(SystemExit) as exc:
            main(["frobnicate"])
        assert exc.value.code == 2

    def test_missing_required_out(self):
        with pytest.raises(SystemExit) as exc:
            main(["solve", "--config", "x.json"])
        assert exc.value.code == 2
