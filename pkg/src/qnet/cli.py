"""Command-line front end: ``qnet <subcommand> [options]``.

Every subcommand reads an optional JSON config (``--config``), applies
``--set key=value`` overrides and writes its artifacts atomically: output goes
to a temporary file that replaces the target only on success, so a failed run
leaves nothing behind. Failures print one JSON line ``{"error": kind,
"message": ...}`` to stderr and exit nonzero.
"""

from __future__ import annotations

import argparse
import contextlib
import csv
import dataclasses
import json
import math
import os
import sys
import tempfile
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

from . import __version__, graphs
from .dynamics import Environment
from .ensemble import (
    CampaignConfig,
    EfficiencyCurve,
    build_graph,
    class_distribution,
    classify_curve,
    kernels_for,
    run_campaign,
    run_point,
    sweep_omega,
    write_class_distribution_csv,
    write_curve_csv,
    write_results_csv,
)
from .errors import ConfigError, InvalidArgument, QnetError, UndefinedCorrelation
from .graphs import Graph

SEED_ENV = "QNET_SEED"
SUBCOMMANDS = ("graph", "simulate", "sweep", "classify", "campaign", "metrics", "kernels", "plot")

_INT_FIELDS = {"n_nodes", "n_removed", "k", "n_realizations", "n_traj", "master_seed"}
_FLOAT_FIELDS = {"p", "V", "kappa", "t_up", "nu", "omega", "f", "x_f", "k_bt", "theta"}
_OPTIONAL_FLOAT_FIELDS = {"dt", "negativity_tol"}
_STR_FIELDS = {"family"}
_BOOL_FIELDS = {"classify"}
CONFIG_FIELDS = {f.name for f in dataclasses.fields(CampaignConfig)}


# -- config ------------------------------------------------------------------

def _is_number(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def _check_field(name: str, value):
    if name in _INT_FIELDS:
        if not isinstance(value, int) or isinstance(value, bool):
            raise ConfigError(f"field '{name}': expected an integer, got {value!r}")
        return value
    if name in _FLOAT_FIELDS:
        if not _is_number(value):
            raise ConfigError(f"field '{name}': expected a number, got {value!r}")
        return float(value)
    if name in _OPTIONAL_FLOAT_FIELDS:
        if value is None:
            return None
        if not _is_number(value):
            raise ConfigError(f"field '{name}': expected a number or null, got {value!r}")
        return float(value)
    if name in _STR_FIELDS:
        if not isinstance(value, str):
            raise ConfigError(f"field '{name}': expected a string, got {value!r}")
        return value
    if name in _BOOL_FIELDS:
        if not isinstance(value, bool):
            raise ConfigError(f"field '{name}': expected true or false, got {value!r}")
        return value
    if name == "environment":
        if not isinstance(value, str):
            raise ConfigError(f"field 'environment': expected a string, got {value!r}")
        try:
            return Environment(value.lower())
        except ValueError:
            choices = ", ".join(e.value for e in Environment)
            raise ConfigError(f"field 'environment': expected one of {choices}, got {value!r}") from None
    if name == "omega_grid":
        if value is None:
            return None
        if not isinstance(value, list) or not all(_is_number(v) for v in value):
            raise ConfigError(f"field 'omega_grid': expected a list of numbers, got {value!r}")
        return tuple(float(v) for v in value)
    if name == "graph":
        if value is None:
            return None
        try:
            if isinstance(value, str):
                return graphs.load_graph(value)
            if isinstance(value, dict):
                return Graph.from_json(json.dumps(value))
        except (OSError, KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"field 'graph': {exc}") from exc
        raise ConfigError(f"field 'graph': expected a path or a graph object, got {value!r}")
    raise ConfigError(f"unknown field '{name}'")


def parse_config(document) -> CampaignConfig:
    """Validated CampaignConfig from a JSON document (text or already-decoded dict)."""
    if isinstance(document, (str, bytes)):
        try:
            document = json.loads(document) if document.strip() else {}
        except json.JSONDecodeError as exc:
            raise ConfigError(f"malformed JSON: {exc}") from exc
    if not isinstance(document, dict):
        raise ConfigError("config must be a JSON object")
    kwargs = {}
    for name, value in document.items():
        if name not in CONFIG_FIELDS:
            raise ConfigError(f"unknown field '{name}'")
        kwargs[name] = _check_field(name, value)
    if "graph" in kwargs and kwargs["graph"] is not None and "family" not in kwargs:
        kwargs["family"] = "explicit"
    try:
        return CampaignConfig(**kwargs)
    except InvalidArgument as exc:
        raise ConfigError(f"invalid config: {exc}") from exc


def _parse_override(text: str) -> tuple[str, object]:
    key, sep, raw = text.partition("=")
    key = key.strip()
    if not sep or not key:
        raise ConfigError(f"override must look like key=value, got {text!r}")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key, value


def _parse_seed(text: str, origin: str) -> int:
    try:
        seed = int(text, 0)
    except ValueError:
        raise ConfigError(f"{origin}: seed must be an unsigned 64-bit integer, got {text!r}") from None
    if not 0 <= seed < 1 << 64:
        raise ConfigError(f"{origin}: seed must be an unsigned 64-bit integer, got {text!r}")
    return seed


def load_config(args) -> CampaignConfig:
    """Config file, then ``--set`` overrides, then the seed (flag, file, environment)."""
    doc = {}
    if args.config:
        try:
            text = Path(args.config).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
        try:
            doc = json.loads(text) if text.strip() else {}
        except json.JSONDecodeError as exc:
            raise ConfigError(f"malformed JSON in {args.config}: {exc}") from exc
        if not isinstance(doc, dict):
            raise ConfigError("config must be a JSON object")
    for item in args.overrides:
        key, value = _parse_override(item)
        doc[key] = value
    if args.seed is not None:
        doc["master_seed"] = _parse_seed(args.seed, "--seed")
    elif "master_seed" not in doc and os.environ.get(SEED_ENV):
        doc["master_seed"] = _parse_seed(os.environ[SEED_ENV], SEED_ENV)
    return parse_config(doc)


# -- atomic output -----------------------------------------------------------

@contextlib.contextmanager
def atomic_path(path):
    """Yield a temporary sibling of ``path``; move it into place only on success."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    os.close(fd)
    try:
        yield tmp
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.unlink(tmp)


def _emit_text(text: str, out) -> None:
    if out is None:
        sys.stdout.write(text)
        return
    with atomic_path(out) as tmp:
        Path(tmp).write_text(text)


# -- helpers -----------------------------------------------------------------

def _graph_for(args, config: CampaignConfig) -> Graph:
    if getattr(args, "graph", None):
        try:
            return graphs.load_graph(args.graph)
        except OSError as exc:
            raise InvalidArgument(f"cannot read graph {args.graph}: {exc}") from exc
    return build_graph(config, args.realization)


def read_csv_columns(path) -> tuple[list[str], list[dict]]:
    try:
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            rows = list(reader)
            header = list(reader.fieldnames or [])
    except OSError as exc:
        raise InvalidArgument(f"cannot read {path}: {exc}") from exc
    if not header:
        raise InvalidArgument(f"{path} has no header row")
    return header, rows


def _column(rows, name: str, path) -> np.ndarray:
    try:
        return np.array([float(r[name]) for r in rows])
    except KeyError:
        raise InvalidArgument(f"{path} has no column '{name}'") from None
    except (TypeError, ValueError) as exc:
        raise InvalidArgument(f"column '{name}' of {path} is not numeric: {exc}") from None


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


# -- SVG ---------------------------------------------------------------------

def scatter_svg(x, y, x_label: str = "x", y_label: str = "y", width: int = 480, height: int = 360) -> str:
    """Minimal SVG scatter plot: two axes, their range labels, one circle per point."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape:
        raise InvalidArgument("x and y must have the same length")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise InvalidArgument("plot data must be finite")
    left, right, top, bottom = 60, 20, 20, 50
    pw, ph = width - left - right, height - top - bottom

    def span(v):
        if v.size == 0:
            return 0.0, 1.0
        lo, hi = float(v.min()), float(v.max())
        if hi == lo:
            lo, hi = lo - 0.5, hi + 0.5
        return lo, hi

    (x0, x1), (y0, y1) = span(x), span(y)
    sx = lambda v: left + (v - x0) / (x1 - x0) * pw  # noqa: E731
    sy = lambda v: top + ph - (v - y0) / (y1 - y0) * ph  # noqa: E731
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
        f'<line x1="{left}" y1="{top + ph}" x2="{left + pw}" y2="{top + ph}" stroke="black"/>',
        f'<line x1="{left}" y1="{top}" x2="{left}" y2="{top + ph}" stroke="black"/>',
        f'<text x="{left}" y="{top + ph + 16}" font-size="11">{x0:.4g}</text>',
        f'<text x="{left + pw}" y="{top + ph + 16}" font-size="11" text-anchor="end">{x1:.4g}</text>',
        f'<text x="{left - 4}" y="{top + ph}" font-size="11" text-anchor="end">{y0:.4g}</text>',
        f'<text x="{left - 4}" y="{top + 10}" font-size="11" text-anchor="end">{y1:.4g}</text>',
        f'<text x="{left + pw / 2}" y="{height - 10}" font-size="13" text-anchor="middle">{escape(x_label)}</text>',
        f'<text x="14" y="{top + ph / 2}" font-size="13" text-anchor="middle" '
        f'transform="rotate(-90 14 {top + ph / 2})">{escape(y_label)}</text>',
    ]
    for xv, yv in zip(x, y):
        out.append(f'<circle cx="{sx(xv):.2f}" cy="{sy(yv):.2f}" r="3" fill="steelblue"/>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


# -- subcommands -------------------------------------------------------------

def cmd_graph(args, config: CampaignConfig) -> None:
    g = _graph_for(args, config)
    text = g.to_json() + "\n" if args.format == "json" else g.to_edgelist()
    _emit_text(text, args.out)


def cmd_simulate(args, config: CampaignConfig) -> None:
    g = _graph_for(args, config)
    res = run_point(config, g, config.omega, args.realization, 0)
    if res.record is None:
        raise InvalidArgument("the source node is isolated; there is no sink to trap at")
    if args.out is None:
        raise InvalidArgument("simulate needs --out")
    with atomic_path(args.out) as tmp:
        res.record.to_csv(tmp)
    print(json.dumps({"eta": res.eta, "sink": res.sink + 1, "final_trace": res.record.final_trace,
                      "min_eigenvalue": res.record.meta.get("min_eigenvalue")}))


def cmd_sweep(args, config: CampaignConfig) -> None:
    g = _graph_for(args, config)
    curve = sweep_omega(config, g, args.realization)
    if args.out is None:
        raise InvalidArgument("sweep needs --out")
    with atomic_path(args.out) as tmp:
        write_curve_csv(curve, tmp)
    print(json.dumps({"class": curve.label.value if curve.label else None}))


def cmd_classify(args, config: CampaignConfig) -> None:
    if not args.input:
        raise InvalidArgument("classify needs --input")
    header, rows = read_csv_columns(args.input)
    groups: dict = {}
    if "realization_id" in header:
        for r in rows:
            groups.setdefault(int(r["realization_id"]), []).append(r)
    else:
        groups[0] = rows
    lines = ["realization_id,class"]
    for rid, grp in groups.items():
        curve = EfficiencyCurve(_column(grp, "omega", args.input), _column(grp, "eta", args.input), rid)
        lines.append(f"{rid},{classify_curve(curve, config.theta).value}")
    _emit_text("\n".join(lines) + "\n", args.out)


def _class_key(config: CampaignConfig) -> int:
    return config.k if config.family == "watts_strogatz" else config.n_removed


def cmd_campaign(args, config: CampaignConfig) -> None:
    if args.out is None:
        raise InvalidArgument("campaign needs --out (a directory)")
    out = Path(args.out)
    result = run_campaign(config, jobs=args.jobs)
    out.mkdir(parents=True, exist_ok=True)
    with contextlib.ExitStack() as stack:
        results_tmp = stack.enter_context(atomic_path(out / "results.csv"))
        write_results_csv(result, results_tmp)
        if config.classification_requested:
            classes_tmp = stack.enter_context(atomic_path(out / "classes.csv"))
            rows = class_distribution((_class_key(config), c.label) for c in result.curves)
            write_class_distribution_csv(rows, classes_tmp)


_GRAPH_FEATURES = (
    "n_edges", "mean_degree", "mean_clustering", "transitivity", "square_clustering",
    "source_closeness", "source_betweenness", "source_eigenvector",
    "sink_closeness", "sink_betweenness", "sink_eigenvector", "source_sink_distance",
)


def graph_features(g: Graph, source: int = 0) -> dict:
    """Scalar structure measures of one graph, for correlation against efficiency."""
    m = graphs.compute_metrics(g)
    sink = graphs.select_sink(g, source)
    feats = {
        "n_edges": float(g.n_edges),
        "mean_degree": float(m.degree.mean()),
        "mean_clustering": m.mean_clustering,
        "transitivity": m.transitivity,
        "square_clustering": m.extra_clustering,
        "source_closeness": m.closeness[source],
        "source_betweenness": m.betweenness[source],
        "source_eigenvector": m.eigenvector[source],
    }
    if sink is graphs.DEGENERATE:
        feats.update(sink_closeness=math.nan, sink_betweenness=math.nan,
                     sink_eigenvector=math.nan, source_sink_distance=math.nan)
    else:
        feats.update(sink_closeness=m.closeness[sink], sink_betweenness=m.betweenness[sink],
                     sink_eigenvector=m.eigenvector[sink],
                     source_sink_distance=float(graphs.bfs_distances(g, source)[sink]))
    return feats


def cmd_metrics(args, config: CampaignConfig) -> None:
    if args.input:
        _metrics_correlation(args, config)
        return
    g = _graph_for(args, config)
    m = graphs.compute_metrics(g)
    lines = ["node,degree,closeness,betweenness,eigenvector"]
    for v in range(g.n_nodes):
        lines.append(",".join([str(v + 1)] + [_fmt(a[v]) for a in (m.degree, m.closeness, m.betweenness, m.eigenvector)]))
    _emit_text("\n".join(lines) + "\n", args.out)
    print(json.dumps({"mean_clustering": m.mean_clustering, "transitivity": m.transitivity,
                      "square_clustering": m.extra_clustering}), file=sys.stderr)


def _metrics_correlation(args, config: CampaignConfig) -> None:
    """Per-realization graph features next to efficiency, plus their correlations."""
    header, rows = read_csv_columns(args.input)
    if "realization_id" not in header:
        raise InvalidArgument(f"{args.input} has no column 'realization_id'")
    eta_by_rid: dict = {}
    for r in rows:
        if args.omega is not None:
            try:
                if float(r["omega"]) != args.omega:
                    continue
            except (KeyError, ValueError):
                raise InvalidArgument(f"{args.input} needs a numeric 'omega' column to select Omega") from None
        rid = int(r["realization_id"])
        if rid not in eta_by_rid:
            eta_by_rid[rid] = float(r[args.eta_column]) if args.eta_column in r else None
    if not eta_by_rid or any(v is None for v in eta_by_rid.values()):
        raise InvalidArgument(f"no '{args.eta_column}' values selected from {args.input}")
    rids = sorted(eta_by_rid)
    feats = [graph_features(build_graph(config, rid)) for rid in rids]
    eta = np.array([eta_by_rid[r] for r in rids])

    table = ["realization_id," + ",".join(_GRAPH_FEATURES) + ",eta"]
    for rid, f, e in zip(rids, feats, eta):
        table.append(",".join([str(rid)] + [_fmt(f[k]) for k in _GRAPH_FEATURES] + [_fmt(e)]))
    report = ["metric,pearson,spearman,n"]
    for k in _GRAPH_FEATURES:
        x = np.array([f[k] for f in feats], dtype=float)
        ok = np.isfinite(x)
        try:
            pr, sr = graphs.correlate(x[ok], eta[ok])
            report.append(f"{k},{_fmt(pr)},{_fmt(sr)},{int(ok.sum())}")
        except (UndefinedCorrelation, InvalidArgument):
            report.append(f"{k},nan,nan,{int(ok.sum())}")

    if args.report:
        with atomic_path(args.report) as rtmp:
            Path(rtmp).write_text("\n".join(report) + "\n")
            _emit_text("\n".join(table) + "\n", args.out)
    else:
        _emit_text("\n".join(table) + "\n", args.out)
        print("\n".join(report), file=sys.stderr)


def cmd_kernels(args, config: CampaignConfig) -> None:
    kern = kernels_for(dataclasses.replace(config, environment=Environment.BATH_ONLY))
    if args.out is None:
        raise InvalidArgument("kernels needs --out")
    with atomic_path(args.out) as tmp:
        kern.to_csv(tmp)
    print(json.dumps({"B": kern.B, "V_R": kern.V_R, "R": kern.R, "reorganization": kern.reorganization}))


def cmd_plot(args, config: CampaignConfig) -> None:
    if not args.input:
        raise InvalidArgument("plot needs --input")
    if args.out is None:
        raise InvalidArgument("plot needs --out")
    _, rows = read_csv_columns(args.input)
    x = _column(rows, args.x, args.input)
    y = _column(rows, args.y, args.input)
    _emit_text(scatter_svg(x, y, args.x, args.y), args.out)


COMMANDS = {
    "graph": cmd_graph,
    "simulate": cmd_simulate,
    "sweep": cmd_sweep,
    "classify": cmd_classify,
    "campaign": cmd_campaign,
    "metrics": cmd_metrics,
    "kernels": cmd_kernels,
    "plot": cmd_plot,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="JSON campaign config")
    common.add_argument("--out", metavar="PATH", help="output file (campaign: output directory)")
    common.add_argument("--seed", metavar="U64", help=f"master seed (fallback: ${SEED_ENV})")
    common.add_argument("--jobs", type=int, default=os.cpu_count() or 1, metavar="N", help="worker processes")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="override one config field (repeatable; VALUE is parsed as JSON when possible)")

    parser = argparse.ArgumentParser(prog="qnet", description="Noisy quantum transport on complex networks.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="SUBCOMMAND")

    def graph_source(p):
        p.add_argument("--graph", metavar="PATH", help="edge list or JSON graph instead of a config realization")
        p.add_argument("--realization", type=int, default=0, metavar="R", help="realization index (default 0)")

    p = sub.add_parser("graph", parents=[common], help="emit a graph realization")
    graph_source(p)
    p.add_argument("--format", choices=("edgelist", "json"), default="edgelist")

    p = sub.add_parser("simulate", parents=[common], help="one noise-averaged run record")
    graph_source(p)

    p = sub.add_parser("sweep", parents=[common], help="efficiency curve over the Omega grid")
    graph_source(p)

    p = sub.add_parser("classify", parents=[common], help="label efficiency curves from a CSV")
    p.add_argument("--input", metavar="PATH", help="CSV with omega and eta columns")

    sub.add_parser("campaign", parents=[common], help="full ensemble campaign")

    p = sub.add_parser("metrics", parents=[common], help="graph metrics and correlation with efficiency")
    graph_source(p)
    p.add_argument("--input", metavar="PATH", help="campaign results CSV to correlate against")
    p.add_argument("--eta-column", default="eta", help="efficiency column of --input (default eta)")
    p.add_argument("--omega", type=float, default=None, help="use only rows at this Omega")
    p.add_argument("--report", metavar="PATH", help="write the correlation report here")

    sub.add_parser("kernels", parents=[common], help="bath correlation kernels on the time grid")

    p = sub.add_parser("plot", parents=[common], help="SVG scatter of two CSV columns")
    p.add_argument("--input", metavar="PATH", help="CSV to plot")
    p.add_argument("--x", required=True, help="x column name")
    p.add_argument("--y", required=True, help="y column name")
    return parser


def _report_error(kind: str, message: str) -> None:
    print(json.dumps({"error": kind, "message": message}), file=sys.stderr)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        if exc.code not in (0, None):
            _report_error("usage-error", "invalid command line")
        return int(exc.code or 0)
    try:
        config = load_config(args)
        COMMANDS[args.command](args, config)
    except ConfigError as exc:
        _report_error(exc.kind, str(exc))
        return 2
    except QnetError as exc:
        _report_error(exc.kind, str(exc))
        return 1
    except (OSError, ValueError, ArithmeticError) as exc:
        _report_error(type(exc).__name__, str(exc))
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
