import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from ldtlab import cli
from ldtlab.config import ExperimentConfig, json_schema, load_config


def _write(tmp_path, cfg, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(cfg))
    return p


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


CHAIN = {"kind": "finite_chain", "matrix": [[0.7, 0.3], [0.1, 0.9]]}


def test_bound_tent(tmp_path, capsys):
    cfg = {"system": {"kind": "tent"}, "grid": {"n": [110592], "eps": [1.0]},
           "bound": {"family": "tent_corollary"}}
    assert cli.main(["bound", "--config", str(_write(tmp_path, cfg)), "--out", str(tmp_path / "t")]) == 0
    (row,) = _rows(tmp_path / "t_bound.csv")
    assert float(row["raw_value"]) == pytest.approx(4 * np.exp(-2), rel=1e-14)
    assert row["valid"] == "true"


def test_bound_unbounded_metadata(tmp_path):
    cfg = {"system": {"kind": "tent"}, "grid": {"n": [1000], "eps": [0.5]},
           "bound": {"family": "unbounded_ldt", "constants": {"alpha": 1, "C_burk": 1, "norm_phi2_L2": 1}}}
    assert cli.main(["bound", "--config", str(_write(tmp_path, cfg)), "--out", str(tmp_path / "u")]) == 0
    (row,) = _rows(tmp_path / "u_bound.csv")
    assert float(row["M"]) > 0 and float(row["addend1"]) > 0 and float(row["addend2"]) > 0


def test_verify_finite_chain_exact(tmp_path, capsys):
    cfg = {"system": CHAIN, "observable": {"kind": "tabular", "values": [1, -1]},
           "grid": {"n": [10, 50, 200], "eps": [0.5, 1.0]},
           "bound": {"family": "bounded_ldt"}}
    code = cli.main(["verify", "--config", str(_write(tmp_path, cfg)), "--out", str(tmp_path / "v")])
    assert code == 0
    rows = _rows(tmp_path / "v_verify.csv")
    assert len(rows) == 6
    assert all(r["exact"] != "" and r["p_hat"] == "" for r in rows)
    assert "FAIL=0" in capsys.readouterr().out


def test_verify_falsified_bound_exits_1(tmp_path):
    # iid signs: sup psi = 1, so the inflated exponent at n=200, eps=0.2 is about 11
    cfg = {"system": {"kind": "finite_chain", "matrix": [[0.5, 0.5], [0.5, 0.5]]},
           "observable": {"kind": "tabular", "values": [1, -1]},
           "grid": {"n": [50, 100, 200], "eps": [0.2, 0.5]},
           "bound": {"family": "bounded_ldt", "c_scale": 100}}
    assert cli.main(["verify", "--config", str(_write(tmp_path, cfg)), "--out", str(tmp_path / "v")]) == 1


def test_simulate_and_seed_override(tmp_path):
    cfg = {"system": {"kind": "tent"}, "observable": {"kind": "log"},
           "grid": {"n": [16], "eps": [0.5]}, "trials": 500, "event": {"about": -1.0}}
    p = _write(tmp_path, cfg)
    cli.main(["simulate", "--config", str(p), "--out", str(tmp_path / "a")])
    cli.main(["simulate", "--config", str(p), "--out", str(tmp_path / "b"), "--threads", "4"])
    cli.main(["simulate", "--config", str(p), "--out", str(tmp_path / "c"), "--seed", "7"])
    a, b = (tmp_path / "a_simulate.csv").read_bytes(), (tmp_path / "b_simulate.csv").read_bytes()
    assert a == b
    assert _rows(tmp_path / "c_simulate.csv")[0]["master_seed"] == "7"


def test_ulam_export(tmp_path):
    cfg = {"system": {"kind": "tent"}, "ulam": {"n_cells": 4}}
    assert cli.main(["ulam", "--config", str(_write(tmp_path, cfg)), "--out", str(tmp_path / "q")]) == 0
    m = np.loadtxt(tmp_path / "q_ulam.csv", delimiter=",")
    np.testing.assert_array_equal(m, [[.5, .5, 0, 0], [0, 0, .5, .5], [0, 0, .5, .5], [.5, .5, 0, 0]])


def test_psi_two_state(tmp_path):
    cfg = {"system": CHAIN, "observable": {"kind": "tabular", "values": [1.5, -0.5]},
           "mixing": {"n_max": 10}}
    assert cli.main(["psi", "--config", str(_write(tmp_path, cfg)), "--out", str(tmp_path / "p")]) == 0
    rows = _rows(tmp_path / "p_psi.csv")
    np.testing.assert_allclose([float(r["psi"]) for r in rows], [3.75, -1.25], atol=1e-11)
    mix = _rows(tmp_path / "p_mixing.csv")
    assert float(mix[0]["rate"]) == pytest.approx(0.6)


def test_tails_tent(tmp_path):
    cfg = {"system": {"kind": "tent"}, "observable": {"kind": "log_distance", "z": 0.5},
           "tails": {"samples": 100000, "control_n_max": 30}, "ulam": {"n_cells": 64}}
    assert cli.main(["tails", "--config", str(_write(tmp_path, cfg)), "--out", str(tmp_path / "t")]) == 0
    (fit,) = _rows(tmp_path / "t_tails.csv")
    assert float(fit["alpha"]) == pytest.approx(1.0, rel=0.05)
    mom = _rows(tmp_path / "t_tail_moments.csv")
    assert [r["M"] for r in mom] == ["0.0", "1.0", "2.0", "4.0", "8.0"]
    assert all(r["exceeds_printed"] == "true" for r in mom if float(r["M"]) >= 2)
    assert len(_rows(tmp_path / "t_tail_control.csv")) == 30


def test_unknown_field_exit_2(tmp_path, capsys):
    cfg = {"system": {"kind": "tent"}, "grid": {"n": [10], "eps": [0.5]}, "epsilon": 0.5}
    assert cli.main(["bound", "--config", str(_write(tmp_path, cfg))]) == 2
    assert "epsilon" in capsys.readouterr().err


def test_missing_bound_constant_exit_2(tmp_path, capsys):
    cfg = {"system": {"kind": "tent"}, "grid": {"n": [10], "eps": [0.5]},
           "bound": {"family": "unbounded_ldt", "constants": {"C_burk": 1, "norm_phi2_L2": 1}}}
    assert cli.main(["bound", "--config", str(_write(tmp_path, cfg))]) == 2
    assert "alpha" in capsys.readouterr().err


def test_bad_json_and_missing_file(tmp_path, capsys):
    p = tmp_path / "bad.json"
    p.write_text('{"system": {"kind": "tent"},\n "grid": }')
    assert cli.main(["bound", "--config", str(p)]) == 2
    assert "line 2" in capsys.readouterr().err
    assert cli.main(["bound", "--config", str(tmp_path / "nope.json")]) == 2


def test_missing_section_exit_2(tmp_path, capsys):
    cfg = {"system": {"kind": "tent"}}
    assert cli.main(["simulate", "--config", str(_write(tmp_path, cfg))]) == 2
    assert "observable" in capsys.readouterr().err


def test_runtime_error_exit_3(tmp_path, capsys):
    cfg = {"system": {"kind": "finite_chain", "matrix": [[1, 0], [0, 1]]},
           "observable": {"kind": "tabular", "values": [1, -1]}}
    assert cli.main(["psi", "--config", str(_write(tmp_path, cfg))]) == 3
    assert "runtime error" in capsys.readouterr().err


def test_threads_must_be_positive(tmp_path):
    cfg = {"system": {"kind": "tent"}, "ulam": {"n_cells": 4}}
    assert cli.main(["ulam", "--config", str(_write(tmp_path, cfg)), "--threads", "0"]) == 2


def test_config_roundtrip_and_schema(tmp_path):
    cfg = {"system": CHAIN, "observable": {"kind": "tabular", "values": [1, -1]},
           "grid": {"n": [10], "eps": [0.5]}, "bound": {"family": "bounded_ldt"}}
    parsed = load_config(_write(tmp_path, cfg))
    again = ExperimentConfig.model_validate_json(parsed.model_dump_json())
    assert again == parsed
    schema = json_schema()
    assert schema["additionalProperties"] is False
    assert "system" in schema["required"]


def test_module_entry_point(tmp_path):
    cfg = {"system": {"kind": "tent"}, "ulam": {"n_cells": 4}}
    p = _write(tmp_path, cfg)
    out = subprocess.run([sys.executable, "-m", "ldtlab", "ulam", "--config", str(p), "--out", str(tmp_path / "m")],
                         capture_output=True, text=True)
    assert out.returncode == 0
    assert (tmp_path / "m_ulam.csv").exists()


IID = {"kind": "finite_chain", "matrix": [[0.5, 0.5], [0.5, 0.5]]}


def test_minimal_simulate_one_row(tmp_path):
    cfg = {"system": IID, "observable": {"kind": "tabular", "values": [-0.5, 0.5]},
           "grid": {"n": [2], "eps": [0.4]}, "trials": 1000}
    assert cli.main(["simulate", "--config", str(_write(tmp_path, cfg)), "--out", str(tmp_path / "s")]) == 0
    rows = _rows(tmp_path / "s_simulate.csv")
    assert len(rows) == 1 and abs(float(rows[0]["p_hat"]) - 0.5) < 0.06


@pytest.mark.parametrize("grid", [{"n": [10], "eps": [0.0, 0.5]}, {"n": [], "eps": [0.5]}, {"n": [10], "eps": []}])
def test_bad_grid_exit_2(tmp_path, grid):
    cfg = {"system": {"kind": "tent"}, "grid": grid, "bound": {"family": "tent_corollary"}}
    assert cli.main(["bound", "--config", str(_write(tmp_path, cfg))]) == 2


def test_psi_iid(tmp_path):
    cfg = {"system": IID, "observable": {"kind": "tabular", "values": [-0.5, 0.5]}}
    assert cli.main(["psi", "--config", str(_write(tmp_path, cfg)), "--out", str(tmp_path / "p")]) == 0
    rows = _rows(tmp_path / "p_psi.csv")
    assert [float(r["psi"]) for r in rows] == [float(r["phi"]) for r in rows]
    assert all(float(r["residual"]) == 0 for r in rows)


def test_tails_log_x_million(tmp_path):
    cfg = {"system": {"kind": "tent"}, "observable": {"kind": "log_distance", "z": 0.0},
           "tails": {"samples": 10**6, "control_n_max": 10}, "ulam": {"n_cells": 16}}
    assert cli.main(["tails", "--config", str(_write(tmp_path, cfg)), "--out", str(tmp_path / "t")]) == 0
    (fit,) = _rows(tmp_path / "t_tails.csv")
    assert float(fit["alpha"]) == pytest.approx(1.0, rel=0.05)
