import json
from pathlib import Path

import pytest

from phlab.cli import main
from phlab.correlation import CountAggregate, CorrelationSet

FIXTURE = Path(__file__).parent / "fixtures" / "observed_correlations.csv"
SMALL = """
[source]
p_ex = 0.1
eta_s = 0.3
eta_asv = 0.3
eta_conv = 0.43
zeta = 0.55

[rng]
seed = 3
batch_size = 65536

[io]
trials = 150000
sweep_mean_pairs = [0.05, 0.2]
"""


@pytest.fixture
def cfg_path(tmp_path):
    p = tmp_path / "run.toml"
    p.write_text(SMALL)
    return p


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def test_atomic_json_and_csv(capsys):
    code, out, _ = run(capsys, "atomic")
    d = json.loads(out)
    assert code == 0
    assert d["ratio"] == pytest.approx(4.125, abs=1e-12)
    assert d["loss"] == pytest.approx(0.195122, abs=1e-6)
    assert len(d["matrices"]) == 5
    code, out, _ = run(capsys, "atomic", "--format", "csv")
    lines = out.splitlines()
    assert lines[0] == "quantity,row,col,value"
    assert lines[1].startswith("ratio,,,4.12")
    assert len(lines) == 3 + 25 + 15 + 15 + 15 + 25


def test_predict_on_fixture(capsys, tmp_path):
    out = tmp_path / "pred.csv"
    code, _, _ = run(capsys, "predict", "--correlations", FIXTURE, "--out", out)
    assert code == 0
    lines = out.read_text().splitlines()
    assert lines[0].startswith("# config_sha256=")
    assert lines[1] == "scenario,zeta,g2_noise,g2_ss_given_ast,g2_ast_ast_given_s"
    rows = {r.split(",")[0]: [float(x) for x in r.split(",")[1:]] for r in lines[2:]}
    assert rows["baseline"][2:] == pytest.approx([0.7395, 0.6235], abs=1e-4)
    assert rows["collection_x10"][2:] == pytest.approx([0.3905, 0.4893], abs=1e-4)
    assert rows["polarization"][2:] == pytest.approx([0.6755, 0.5988], abs=1e-4)


def test_simulate_analyze_estimate(capsys, tmp_path, cfg_path):
    tt, agg_sim = tmp_path / "tags.phtt", tmp_path / "sim.csv"
    code, _, _ = run(capsys, "simulate", "--config", cfg_path, "--trials", 99_000, "--qfc", "off",
                     "--emit-timetags", tt, "--aggregate-out", agg_sim,
                     "--correlations-out", tmp_path / "c.csv")
    assert code == 0
    corr = CorrelationSet.from_csv((tmp_path / "c.csv").read_text())
    assert corr.s_asv is not None and corr.s_ast is None

    agg_file, hist = tmp_path / "ana.csv", tmp_path / "hist.csv"
    code, out, _ = run(capsys, "analyze", "--input", tt, "--windows", cfg_path,
                       "--aggregate-out", agg_file, "--histogram-out", hist)
    assert code == 0
    assert CountAggregate.from_csv(agg_file.read_text()) == CountAggregate.from_csv(agg_sim.read_text())
    assert out.startswith("# config_sha256=")
    assert hist.read_text().splitlines()[1] == "bin_start_ns,channel,count"

    code, out, _ = run(capsys, "estimate", "--input", agg_file, "--detector-qe", 0.6, "--filter-t", 0.25)
    assert code == 0
    est = json.loads(out)
    assert est["p_ex"] == pytest.approx(0.1, rel=0.2)
    assert est["collection_probability"] == pytest.approx(est["eta_asv"] / 0.15)


def test_simulate_is_seed_deterministic(capsys, cfg_path):
    a = run(capsys, "simulate", "--config", cfg_path, "--seed", 9)[1]
    b = run(capsys, "simulate", "--config", cfg_path, "--seed", 9)[1]
    c = run(capsys, "simulate", "--config", cfg_path, "--seed", 10)[1]
    assert a == b and a != c


def test_hom(capsys, cfg_path):
    code, out, _ = run(capsys, "hom", "--g2", 0.54)
    assert code == 0
    assert json.loads(out)["visibility"] == pytest.approx(0.649, abs=1e-3)
    code, out, _ = run(capsys, "hom", "--simulate", "--config", cfg_path, "--qfc", "off",
                       "--trials", 50_000)
    d = json.loads(out)
    assert code == 0 and 0 < d["visibility"] <= 1 and "config_sha256" in d


def test_report_is_byte_identical_and_tagged(capsys, tmp_path, cfg_path):
    dirs = [tmp_path / "r1", tmp_path / "r2"]
    for d in dirs:
        code, _, _ = run(capsys, "report", "--config", cfg_path, "--seed", 42, "--out-dir", d)
        assert code == 0
    names = sorted(p.name for p in dirs[0].iterdir())
    assert names == sorted(p.name for p in dirs[1].iterdir())
    for n in names:
        assert (dirs[0] / n).read_bytes() == (dirs[1] / n).read_bytes(), n
    prov = json.loads((dirs[0] / "provenance.json").read_text())
    h = prov["config_sha256"]
    assert prov["seed"] == 42 and "numpy" in prov["versions"]
    for n in names:
        data = (dirs[0] / n).read_bytes()
        if n.endswith(".phtt"):
            # binary layout has no room for it; provenance pins its digest
            assert any(o["file"] == n for o in prov["outputs"].values())
        else:
            assert h.encode() in data, n
    for n in ("summary.csv", "predictions.csv", "histograms.png", "correlations.png", "sweep.png"):
        assert n in names
    header = (dirs[0] / "summary.csv").read_text().splitlines()[1]
    assert header == "name,value,std_err,numerator_counts,model,reference"


def test_config_error_json(capsys, tmp_path):
    bad = tmp_path / "bad.toml"
    bad.write_text("[source]\np_ex = 0.1\nbogus = 1\n")
    code, _, err = run(capsys, "simulate", "--config", bad)
    assert code == 2
    e = json.loads(err)
    assert e == {"error": "ConfigError", "message": "unknown key 'bogus' in [source]",
                 "file": str(bad), "line": 3}


def test_io_error_json(capsys, tmp_path):
    code, _, err = run(capsys, "estimate", "--input", tmp_path / "missing.csv")
    assert code == 3 and json.loads(err)["error"] == "IoError"
    bad = tmp_path / "agg.csv"
    bad.write_text("# c\nevent,count\ntrials,10\ns,1,2\n")
    code, _, err = run(capsys, "estimate", "--input", bad)
    e = json.loads(err)
    assert code == 3 and e["line"] == 4 and e["file"] == str(bad)
    tags = tmp_path / "t.phtt"
    tags.write_bytes(b"PHTT0001" + bytes(20))
    code, _, err = run(capsys, "analyze", "--input", tags)
    e = json.loads(err)
    assert code == 3 and "offset 24" in e["message"]


def test_module_entry_point():
    import subprocess
    import sys

    r = subprocess.run([sys.executable, "-m", "phlab", "atomic", "--format", "json"],
                       capture_output=True, text=True, check=True)
    assert json.loads(r.stdout)["ratio"] == pytest.approx(4.125)


def test_report_with_too_few_trials_still_completes(capsys, tmp_path):
    code, _, _ = run(capsys, "report", "--trials", 3000, "--out-dir", tmp_path)
    assert code == 0
    prov = json.loads((tmp_path / "provenance.json").read_text())
    assert any("no scenario predictions" in n for n in prov["notes"])
    assert (tmp_path / "predictions.csv").read_text().splitlines()[1].startswith("scenario,")
