import csv
import json
import math
import xml.etree.ElementTree as ET
from pathlib import Path

import numpy as np
import pytest

from qnet import cli
from qnet.dynamics import Environment
from qnet.errors import ConfigError, InvalidArgument
from qnet.graphs import Graph

DATA = Path(__file__).parent / "data"
SVG_NS = "{http://www.w3.org/2000/svg}"


def run(capsys, *argv):
    code = cli.main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def error_line(err):
    lines = err.strip().splitlines()
    assert len(lines) == 1
    return json.loads(lines[0])


# -- config parsing ------------------------------------------------------------

def test_empty_document_gives_defaults():
    c = cli.parse_config("")
    assert (c.V, c.kappa, c.t_up, c.nu, c.k_bt, c.x_f, c.n_traj, c.p) == (2.0, 0.5, math.pi, 1.0, 1.0, 2.0, 100, 0.75)
    assert cli.parse_config("{}") == c


def test_negative_kappa_rejected():
    with pytest.raises(ConfigError, match="kappa"):
        cli.parse_config('{"kappa": -1}')


def test_omega_grid_document():
    c = cli.parse_config('{"omega_grid": [0, 5, 10, 20]}')
    assert c.omegas == (0.0, 5.0, 10.0, 20.0)
    assert not c.classification_requested


@pytest.mark.parametrize("doc,field", [
    ('{"colour": 1}', "colour"),
    ('{"n_traj": 2.5}', "n_traj"),
    ('{"kappa": "big"}', "kappa"),
    ('{"classify": 1}', "classify"),
    ('{"environment": "vacuum"}', "environment"),
    ('{"omega_grid": [0, "a"]}', "omega_grid"),
    ('{"omega_grid": [0, 5, 5]}', "omega_grid"),
])
def test_bad_fields_are_named(doc, field):
    with pytest.raises(ConfigError, match=field):
        cli.parse_config(doc)


def test_malformed_json():
    with pytest.raises(ConfigError):
        cli.parse_config("{not json")
    with pytest.raises(ConfigError):
        cli.parse_config("[1, 2]")


def test_inline_graph_implies_explicit_family():
    c = cli.parse_config({"graph": {"n_nodes": 3, "edges": [[1, 2], [2, 3]]}, "environment": "NOISELESS"})
    assert c.family == "explicit"
    assert c.graph == Graph.from_edges(3, [(0, 1), (1, 2)])
    assert c.environment is Environment.NOISELESS


def test_seed_precedence(tmp_path, monkeypatch):
    parser = cli.build_parser()
    cfg = tmp_path / "c.json"
    cfg.write_text('{"master_seed": 5}')
    monkeypatch.setenv(cli.SEED_ENV, "9")
    assert cli.load_config(parser.parse_args(["graph", "--config", str(cfg)])).master_seed == 5
    assert cli.load_config(parser.parse_args(["graph", "--config", str(cfg), "--seed", "7"])).master_seed == 7
    assert cli.load_config(parser.parse_args(["graph"])).master_seed == 9
    monkeypatch.delenv(cli.SEED_ENV)
    assert cli.load_config(parser.parse_args(["graph"])).master_seed == 0


def test_overrides_apply_after_file(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text('{"kappa": 0.25, "n_traj": 5}')
    args = cli.build_parser().parse_args(["graph", "--config", str(cfg), "--set", "kappa=0.75",
                                          "--set", "family=watts_strogatz"])
    c = cli.load_config(args)
    assert (c.kappa, c.n_traj, c.family) == (0.75, 5, "watts_strogatz")


# -- subcommands ---------------------------------------------------------------

def test_simulate_two_site_trace_identity(tmp_path, capsys):
    out = tmp_path / "run.csv"
    code, stdout, _ = run(capsys, "simulate", "--graph", DATA / "two_site.edgelist", "--out", out,
                          "--set", "environment=noiseless")
    assert code == 0
    summary = json.loads(stdout)
    rows = list(csv.DictReader(out.open()))
    assert len(rows) == 801
    assert abs(float(rows[-1]["trace"]) - (1 - summary["eta"])) < 1e-6
    assert summary["sink"] == 2


def test_graph_subcommand_formats(tmp_path, capsys):
    code, out, _ = run(capsys, "graph", "--seed", "3")
    assert code == 0
    g = Graph.from_edgelist(out)
    assert (g.n_nodes, g.n_edges) == (10, 30)
    code, out, _ = run(capsys, "graph", "--seed", "3", "--format", "json")
    assert Graph.from_json(out) == g


def test_sweep_and_classify(tmp_path, capsys):
    curve = tmp_path / "curve.csv"
    code, out, _ = run(capsys, "sweep", "--graph", DATA / "two_site.edgelist", "--out", curve,
                       "--set", "omega_grid=[0,5,10,15,20]", "--set", "n_traj=4")
    assert code == 0
    label = json.loads(out)["class"]
    code, out, _ = run(capsys, "classify", "--input", curve)
    assert code == 0
    assert out.splitlines() == ["realization_id,class", f"0,{label}"]


def campaign_args(out):
    return ["campaign", "--out", out, "--seed", "17", "--jobs", "1",
            "--set", "n_nodes=6", "--set", "n_removed=4", "--set", "n_realizations=3",
            "--set", "n_traj=3", "--set", "omega_grid=[0,5,10,15,20]"]


def test_campaign_rerun_is_byte_identical(tmp_path, capsys):
    assert run(capsys, *campaign_args(tmp_path / "a"))[0] == 0
    assert run(capsys, *campaign_args(tmp_path / "b"))[0] == 0
    for name in ("results.csv", "classes.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    classes = list(csv.DictReader((tmp_path / "a" / "classes.csv").open()))
    assert {r["k"] for r in classes} == {"4"}
    assert sum(int(r["count"]) for r in classes) == 3
    code, out, _ = run(capsys, "classify", "--input", tmp_path / "a" / "results.csv")
    labels = [r["class"] for r in csv.DictReader((tmp_path / "a" / "results.csv").open()) if r["class"]]
    assert [line.split(",")[1] for line in out.splitlines()[1:]] == labels


def test_metrics_single_graph_and_correlation(tmp_path, capsys):
    code, out, _ = run(capsys, "metrics", "--graph", DATA / "two_site.edgelist")
    assert code == 0
    assert out.splitlines()[0] == "node,degree,closeness,betweenness,eigenvector"
    assert len(out.splitlines()) == 3
    results = tmp_path / "camp"
    assert run(capsys, *campaign_args(results))[0] == 0
    report = tmp_path / "report.csv"
    code, out, _ = run(capsys, "metrics", "--input", results / "results.csv", "--omega", "0", "--report", report,
                       "--seed", "17", "--set", "n_nodes=6", "--set", "n_removed=4")
    assert code == 0
    assert len(out.splitlines()) == 1 + 3
    rows = list(csv.DictReader(report.open()))
    assert {r["metric"] for r in rows} >= {"mean_clustering", "sink_closeness"}


def test_kernels_subcommand(tmp_path, capsys):
    out = tmp_path / "k.csv"
    code, stdout, _ = run(capsys, "kernels", "--out", out, "--set", "dt=0.031415926535897934")
    assert code == 0
    assert 0 < json.loads(stdout)["B"] < 1
    assert len(out.read_text().splitlines()) == 1 + 101


def test_plot_three_rows(tmp_path, capsys):
    src = tmp_path / "d.csv"
    src.write_text("a,b\n1,2\n2,4\n3,5\n")
    out = tmp_path / "p.svg"
    code, _, _ = run(capsys, "plot", "--input", src, "--x", "a", "--y", "b", "--out", out)
    assert code == 0
    root = ET.parse(out).getroot()
    assert root.tag == SVG_NS + "svg"
    assert len(root.findall(f"{SVG_NS}circle")) == 3


# -- errors ----------------------------------------------------------------------

def test_config_error_exit_code(capsys):
    code, _, err = run(capsys, "graph", "--set", "kappa=-1")
    assert code == 2
    assert error_line(err)["error"] == "parse-error"
    code, _, err = run(capsys, "graph", "--set", "bogus=1")
    assert code == 2
    assert "bogus" in error_line(err)["message"]


def test_runtime_error_exit_code(tmp_path, capsys):
    code, _, err = run(capsys, "plot", "--input", tmp_path / "missing.csv", "--x", "a", "--y", "b",
                       "--out", tmp_path / "p.svg")
    assert code == 1
    assert error_line(err)["error"] == "invalid-argument"
    assert not (tmp_path / "p.svg").exists()


def test_usage_error(capsys):
    code, _, err = run(capsys, "frobnicate")
    assert code == 2
    assert json.loads(err.strip().splitlines()[-1])["error"] == "usage-error"


def test_failed_run_leaves_no_output(tmp_path, capsys):
    # a strict positivity limit makes this bath run fail part way through
    out = tmp_path / "run.csv"
    code, _, err = run(capsys, "simulate", "--out", out, "--seed", "3", "--set", "environment=bath_rtn",
                       "--set", "negativity_tol=1e-9", "--set", "n_traj=2")
    assert code == 1
    assert error_line(err)["error"] == "integration-error"
    assert list(tmp_path.iterdir()) == []


def test_atomic_path_cleans_up(tmp_path):
    target = tmp_path / "x.csv"
    with pytest.raises(RuntimeError):
        with cli.atomic_path(target) as tmp:
            Path(tmp).write_text("partial")
            raise RuntimeError("boom")
    assert list(tmp_path.iterdir()) == []
    with cli.atomic_path(target) as tmp:
        Path(tmp).write_text("done")
    assert target.read_text() == "done"


def test_scatter_svg_validates():
    with pytest.raises(InvalidArgument):
        cli.scatter_svg([1, 2], [1])
    svg = cli.scatter_svg(np.array([1.0]), np.array([1.0]), "a<b", "y")
    assert "a&lt;b" in svg
