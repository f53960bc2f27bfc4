import json

import pytest

from spinesim.cli import list_experiments, main


def test_list(capsys):
    assert main(["list"]) == 0
    out = capsys.readouterr().out
    assert "kesten-stigum" in out and "budget" in out
    catalog = list_experiments()
    assert len(catalog) >= 10
    assert [e.id for e in catalog] == list(range(1, 14))


def test_validate(capsys, tmp_path):
    assert main(["validate", "12"]) == 0
    assert "ok:" in capsys.readouterr().out
    bad = tmp_path / "bad.toml"
    bad.write_text("schema_version = 1\n[experiment\nkind = 'simulate'\n")
    assert main(["validate", str(bad)]) == 1
    assert "line" in capsys.readouterr().err
    assert main(["validate", "no-such-thing"]) == 1


def test_run_writes_outputs_and_is_reproducible(tmp_path, capsys):
    args = ["run", "martingale-mean", "--replicates", "300", "--seed", "7", "--workers", "1"]
    code = main(args + ["--out", str(tmp_path / "a")])
    assert code in (0, 1, 2)
    main(args + ["--out", str(tmp_path / "b")])
    a = tmp_path / "a" / "martingale-mean"
    b = tmp_path / "b" / "martingale-mean"
    report = json.loads((a / "report.json").read_text())
    assert report["seed"] == 7 and report["replicates"] == 300
    assert (a / "report.json").read_bytes() == (b / "report.json").read_bytes()
    assert (a / "traces.csv").read_text().startswith("replicate,kind,t,value")


def test_run_kolmogorov_writes_extinction_and_svg(tmp_path):
    main(["run", "6", "--replicates", "50", "--workers", "1", "--out", str(tmp_path)])
    out = next(tmp_path.iterdir())
    assert (out / "extinction.csv").read_text().startswith("model,state,t,v_t")
    assert list(out.glob("*.svg"))


def test_exit_code_on_failure(tmp_path):
    # 40 replicates leave the negative controls without power, so the run fails
    assert main(["run", "3", "--replicates", "40", "--workers", "1", "--out", str(tmp_path)]) == 1


def test_bad_argument():
    with pytest.raises(SystemExit):
        main(["run"])
