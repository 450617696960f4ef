import json

import pytest

from erd3ro.cli import main

from toys import cli_pipeline


def test_cli_outputs_are_byte_identical(tmp_path):
    a = cli_pipeline(tmp_path / "a")
    b = cli_pipeline(tmp_path / "b")
    assert sorted(a) == sorted(b)
    for name in a:
        assert a[name] == b[name], name
    for name in ("gen/instance.json", "gen/truth.json", "solve/solution.json", "solve/iterations.csv",
                 "solve/loocv.csv", "solve/search_trace.csv", "solve/fixed_coupling.lp", "eval/oos.csv",
                 "compare/detail.csv", "compare/summary.csv"):
        assert name in a, name
    sol = json.loads(a["solve/solution.json"])
    assert sol["xi"] in (1.0, 50.0)
    assert json.loads(a["solve_fixed/solution.json"])["xi"] == 3.0


def test_cli_seed_changes_outputs(tmp_path):
    a = cli_pipeline(tmp_path / "a", seed=1)
    b = cli_pipeline(tmp_path / "b", seed=2)
    assert a["gen/data_rep0_n15.csv"] != b["gen/data_rep0_n15.csv"]


def test_cli_rejects_bad_radius(capsys):
    assert main(["compare", "--radius", "median"]) == 2
    assert "radius" in capsys.readouterr().err
    with pytest.raises(SystemExit):
        main(["nonsense"])
