"""Command-line front end.

Subcommands
-----------
simulate
    Draw a two-group scenario and write ``group1.csv``, ``group2.csv`` and the
    truth bundle (``truth_dag{k}.csv``, ``truth_L{k}.csv``, ``truth_params.csv``).
fit
    Run the sampler on two group files and write edge probabilities, thresholded
    graphs, the theta trace, posterior mean partial correlations, the raw trace
    and ``timing.csv``.
effects
    Summarise interventional probabilities from a trace file.
evaluate
    Score a fit against a truth bundle, or run a simulation grid with ``--grid``.

File formats
------------
Every file starts with one comment line ``# dagprobit <version> seed=<seed>
config=<hash>``; numeric values use ``%.17g`` so they parse back to the same
doubles. Nodes are labelled from 1 in file contents and column names; node 1 is
the latent response, covariates are ``X2..Xq``.

Data files have a column header ``y,X2,...,Xq`` followed by one row per
observation. The trace file has the columns

``iter, theta, d_1..d_q, e{k}_{i}_{j}, l{k}_{i}_{j}, eff{k}_{s}``

with one edge flag and one coefficient ``L[i, j]`` per ordered pair ``i != j``
and group ``k``, and one effect column per group and target. A second comment
line records ``x_tilde``, the level at which the effects were computed. Wall
time and acceptance rates are kept in separate files so that all other outputs
are byte-identical across runs with the same seed and configuration.

Configuration files use ``configparser`` syntax with one section per
subcommand; keys are the long option names with dashes replaced by
underscores. Command-line flags take precedence over the file.

Exit codes: 0 success, 2 validation error, 3 numeric error, 4 I/O error.
"""

from __future__ import annotations

import argparse
import configparser
import hashlib
import itertools
import json
import logging
import os
import sys
import time
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .causal import bma_effects
from .errors import IngestionError, NumericError, ValidationError
from .graph import read_adjacency_csv, write_adjacency_csv
from .mcmc import ChainTrace, edge_probabilities, run_chain
from .model import GroupData, Hyperparams
from .simlab import (
    Scenario,
    Truth,
    auc_table,
    evaluate,
    generate_scenario,
    run_grid,
)

logger = logging.getLogger(__name__)

FLOAT_FMT = "%.17g"

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4

# key -> (parser, default); ``None`` defaults are resolved later
_HYPER_KEYS = {
    "iters": ("int", 5000),
    "burnin": ("int", 1000),
    "xi": ("float", 0.1),
    "edge_threshold": ("float", 0.5),
    "a": ("float", None),
    "g1": ("float", None),
    "g2": ("float", None),
    "sigma0_sq": ("float", 0.5),
    "zero_tol": ("float", 0.1),
    "exact_proposal_ratio": ("bool", True),
    "refresh_latent_after_theta": ("bool", True),
}

SETTINGS = {
    "simulate": {
        "q": ("int", 10),
        "n1": ("int", 200),
        "n2": ("int", 200),
        "xi": ("float", 0.1),
        "coef_min": ("float", 0.3),
        "coef_max": ("float", 1.0),
        "d_min": ("float", 0.5),
        "d_max": ("float", 1.5),
        "theta_min": ("float", -0.7),
        "theta_max": ("float", 0.7),
    },
    "fit": {
        "group1": ("path", "group1.csv"),
        "group2": ("path", "group2.csv"),
        "x_tilde": ("float", 1.0),
        "targets": ("intlist", None),
        "center": ("bool", True),
        **_HYPER_KEYS,
    },
    "effects": {
        "trace": ("path", None),
        "targets": ("intlist", None),
        "x_tilde": ("floatlist", None),
    },
    "evaluate": {
        "truth_dir": ("path", "."),
        "fit_dir": ("path", "."),
        "grid": ("bool", False),
        "q": ("intlist", [10]),
        "n1": ("intlist", [200]),
        "n2": ("intlist", [200]),
        "xi": ("floatlist", [0.1]),
        "replications": ("int", 5),
        "x_tilde": ("float", 1.0),
        **{k: v for k, v in _HYPER_KEYS.items() if k != "xi"},
        "prior_xi": ("float", 0.1),
    },
}
_COMMON = {"seed": ("int", 0), "threads": ("int", 1)}


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

def _parse_value(kind: str, text: str):
    text = text.strip()
    try:
        if kind == "int":
            return int(text)
        if kind == "float":
            return float(text)
        if kind == "bool":
            low = text.lower()
            if low in configparser.ConfigParser.BOOLEAN_STATES:
                return configparser.ConfigParser.BOOLEAN_STATES[low]
            raise ValueError(text)
        if kind in ("intlist", "floatlist"):
            conv = int if kind == "intlist" else float
            return [conv(t) for t in text.replace(",", " ").split()]
    except ValueError as exc:
        raise ValidationError(f"cannot parse {text!r} as {kind}") from exc
    return text


def load_settings(command: str, args: argparse.Namespace) -> dict:
    """Merge defaults, the ``--config`` file section and command-line flags."""
    schema = {**_COMMON, **SETTINGS[command]}
    settings = {k: default for k, (_, default) in schema.items()}
    if args.config is not None:
        cp = configparser.ConfigParser()
        with open(args.config) as fh:
            cp.read_file(fh)
        if cp.has_section(command):
            for key, text in cp.items(command):
                if key not in schema:
                    raise ValidationError(f"{args.config}: unknown key {key!r} in [{command}]")
                settings[key] = _parse_value(schema[key][0], text)
        else:
            for key, text in cp.defaults().items():
                if key in schema:
                    settings[key] = _parse_value(schema[key][0], text)
    for key in schema:
        val = getattr(args, key, None)
        if val is not None:
            settings[key] = val
    return settings


def config_hash(command: str, settings: dict) -> str:
    """Short digest of the settings that determine numeric output (paths excluded)."""
    schema = SETTINGS[command]
    payload = {k: v for k, v in settings.items()
               if k in ("seed",) or (k in schema and schema[k][0] != "path")}
    blob = json.dumps({"command": command, **payload}, sort_keys=True, default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def hyperparams_from(settings: dict, xi_key: str = "xi") -> Hyperparams:
    return Hyperparams(
        a=settings["a"], g1=settings["g1"], g2=settings["g2"], xi=settings[xi_key],
        sigma0_sq=settings["sigma0_sq"], T=settings["iters"], B=settings["burnin"],
        edge_threshold=settings["edge_threshold"],
        exact_proposal_ratio=settings["exact_proposal_ratio"],
        refresh_latent_after_theta=settings["refresh_latent_after_theta"],
        zero_tol=settings["zero_tol"],
    )


# ---------------------------------------------------------------------------
# file helpers
# ---------------------------------------------------------------------------

def _header(seed: int, chash: str) -> str:
    return f"dagprobit {__version__} seed={seed} config={chash}"


def write_table(path: Path, header: Sequence[str], columns: Sequence[str], data,
                fmt=FLOAT_FMT) -> None:
    """Write comment lines, a column header and rows of numbers."""
    with open(path, "w") as fh:
        for line in header:
            fh.write(f"# {line}\n")
        if columns:
            fh.write(",".join(columns) + "\n")
        data = np.asarray(data)
        if data.size:
            np.savetxt(fh, np.atleast_2d(data), fmt=fmt, delimiter=",")


def write_matrix(path: Path, header: Sequence[str], m: np.ndarray) -> None:
    write_table(path, header, (), m)


def _read_lines(path) -> tuple[list[str], list[str]]:
    with open(path) as fh:
        lines = [ln.rstrip("\n") for ln in fh]
    comments = [ln[1:].strip() for ln in lines if ln.startswith("#")]
    body = [ln for ln in lines if ln.strip() and not ln.startswith("#")]
    return comments, body


def read_table(path) -> tuple[list[str], list[str], np.ndarray]:
    """Inverse of :func:`write_table`: ``(comments, columns, data)``."""
    comments, body = _read_lines(path)
    if not body:
        raise IngestionError(f"{path}: no column header")
    columns = [c.strip() for c in body[0].split(",")]
    try:
        data = np.loadtxt(body[1:], delimiter=",", ndmin=2) if len(body) > 1 \
            else np.empty((0, len(columns)))
    except ValueError as exc:
        raise IngestionError(f"{path}: {exc}") from exc
    if data.shape[1] != len(columns):
        raise IngestionError(f"{path}: {data.shape[1]} values per row but {len(columns)} columns")
    return comments, columns, data


def read_matrix(path) -> np.ndarray:
    _, body = _read_lines(path)
    try:
        return np.loadtxt(body, delimiter=",", ndmin=2)
    except ValueError as exc:
        raise IngestionError(f"{path}: {exc}") from exc


def data_columns(q: int) -> list[str]:
    return ["y"] + [f"X{j}" for j in range(2, q + 1)]


def write_group_csv(path: Path, header: Sequence[str], y: np.ndarray, x: np.ndarray) -> None:
    q = x.shape[1] + 1
    write_table(path, header, data_columns(q), np.column_stack([y, x]),
                fmt=["%d"] + [FLOAT_FMT] * (q - 1))


def read_group_csv(path) -> tuple[list[str], np.ndarray, np.ndarray]:
    """Read a data file; returns ``(columns, y, x)``."""
    _, columns, data = read_table(path)
    if not columns or columns[0] != "y":
        raise IngestionError(f"{path}: first column must be 'y', got {columns[:1]}")
    if len(columns) < 2:
        raise IngestionError(f"{path}: no covariate columns")
    return columns, data[:, 0], data[:, 1:]


def load_groups(path1, path2, center: bool = True) -> tuple[GroupData, GroupData]:
    """Read both group files, check they share a schema and optionally centre covariates."""
    c1, y1, x1 = read_group_csv(path1)
    c2, y2, x2 = read_group_csv(path2)
    if c1 != c2:
        raise IngestionError(
            f"group files have different columns: {path1}: {','.join(c1)} vs {path2}: {','.join(c2)}")
    groups = []
    for y, x, p in ((y1, x1, path1), (y2, x2, path2)):
        if not np.all((y == 0) | (y == 1)):
            raise IngestionError(f"{p}: y must be 0/1")
        if center and x.shape[0]:
            x = x - x.mean(axis=0)
        groups.append(GroupData(y.astype(np.int8), x))
    return groups[0], groups[1]


def _pair_names(prefix: str, q: int) -> list[str]:
    return [f"{prefix}_{i + 1}_{j + 1}" for i in range(q) for j in range(q) if i != j]


def write_trace(path: Path, header: Sequence[str], trace: ChainTrace, burnin: int) -> None:
    q, R = trace.q, trace.n_records
    off = ~np.eye(q, dtype=bool)
    cols = ["iter", "theta"] + [f"d_{j + 1}" for j in range(q)]
    blocks = [np.arange(burnin, burnin + R)[:, None], trace.theta[:, None], trace.D]
    fmts = ["%d", FLOAT_FMT] + [FLOAT_FMT] * q
    for k in range(2):
        cols += _pair_names(f"e{k + 1}", q)
        blocks.append(trace.edges[:, k][:, off].astype(int))
        fmts += ["%d"] * (q * (q - 1))
    for k in range(2):
        cols += _pair_names(f"l{k + 1}", q)
        blocks.append(trace.L[:, k][:, off])
        fmts += [FLOAT_FMT] * (q * (q - 1))
    for k in range(2):
        cols += [f"eff{k + 1}_{s + 1}" for s in trace.targets]
        blocks.append(trace.effects[:, k])
        fmts += [FLOAT_FMT] * trace.targets.size
    meta = list(header) + [f"x_tilde={trace.x_tilde!r}"]
    write_table(path, meta, cols, np.hstack(blocks), fmt=fmts)


def read_trace(path) -> ChainTrace:
    """Rebuild a :class:`ChainTrace` from a trace file."""
    comments, columns, data = read_table(path)
    x_tilde = None
    for c in comments:
        if c.startswith("x_tilde="):
            x_tilde = float(c.split("=", 1)[1])
    if x_tilde is None:
        raise IngestionError(f"{path}: missing x_tilde comment line")
    idx = {c: i for i, c in enumerate(columns)}
    q = sum(c.startswith("d_") for c in columns)
    if q < 2 or "theta" not in idx:
        raise IngestionError(f"{path}: not a trace file")
    R = data.shape[0]
    off = ~np.eye(q, dtype=bool)
    try:
        D = data[:, [idx[f"d_{j + 1}"] for j in range(q)]]
        edges = np.zeros((R, 2, q, q), dtype=bool)
        L = np.tile(np.eye(q), (R, 2, 1, 1))
        for k in range(2):
            e = data[:, [idx[c] for c in _pair_names(f"e{k + 1}", q)]]
            edges[:, k][:, off] = e.astype(bool)
            L[:, k][:, off] = data[:, [idx[c] for c in _pair_names(f"l{k + 1}", q)]]
    except KeyError as exc:
        raise IngestionError(f"{path}: missing column {exc}") from exc
    targets = np.array(sorted(int(c.split("_")[1]) - 1 for c in columns if c.startswith("eff1_")),
                       dtype=int)
    effects = np.empty((R, 2, targets.size))
    for k in range(2):
        for m, s in enumerate(targets):
            effects[:, k, m] = data[:, idx[f"eff{k + 1}_{s + 1}"]]
    return ChainTrace(edges, data[:, idx["theta"]].copy(), L, D, effects, targets, x_tilde)


def write_truth(out: Path, header: Sequence[str], truth: Truth) -> None:
    q = truth.dags[0].q
    for k in range(2):
        write_adjacency_csv(out / f"truth_dag{k + 1}.csv", truth.dags[k], header)
        write_matrix(out / f"truth_L{k + 1}.csv", header, truth.L[k])
    names = ["theta"] + [f"d_{j + 1}" for j in range(q)]
    with open(out / "truth_params.csv", "w") as fh:
        for line in header:
            fh.write(f"# {line}\n")
        fh.write("name,value\n")
        for name, val in zip(names, [truth.theta, *truth.D]):
            fh.write(f"{name},{FLOAT_FMT % val}\n")


def read_truth(folder: Path) -> Truth:
    """Load the truth bundle written by ``simulate``."""
    dags = tuple(read_adjacency_csv(folder / f"truth_dag{k + 1}.csv") for k in range(2))
    Ls = tuple(read_matrix(folder / f"truth_L{k + 1}.csv") for k in range(2))
    _, body = _read_lines(folder / "truth_params.csv")
    params = {}
    for ln in body[1:]:
        name, _, val = ln.partition(",")
        try:
            params[name.strip()] = float(val)
        except ValueError as exc:
            raise IngestionError(f"truth_params.csv: bad value for {name!r}") from exc
    q = dags[0].q
    if dags[1].q != q or any(L.shape != (q, q) for L in Ls):
        raise ValidationError("truth bundle has inconsistent dimensions")
    try:
        theta = params["theta"]
        D = np.array([params[f"d_{j + 1}"] for j in range(q)])
    except KeyError as exc:
        raise IngestionError(f"truth_params.csv: missing {exc}") from exc
    sigmas = []
    for L in Ls:
        linv = np.linalg.inv(L)
        sigmas.append((linv.T * D) @ linv)
    return Truth(dags, Ls, D, theta, tuple(sigmas), (np.empty(0), np.empty(0)))


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_simulate(settings: dict, out: Path, header: list[str]) -> None:
    if settings["q"] < 2:
        raise ValidationError("q must be at least 2")
    if settings["n1"] < 1 or settings["n2"] < 1:
        raise ValidationError("n1 and n2 must be positive")
    rng = np.random.default_rng(settings["seed"])
    scen = generate_scenario(
        settings["q"], settings["n1"], settings["n2"], settings["xi"], rng,
        coef_range=(settings["coef_min"], settings["coef_max"]),
        d_range=(settings["d_min"], settings["d_max"]),
        theta_range=(settings["theta_min"], settings["theta_max"]),
        seed=settings["seed"])
    for k in range(2):
        write_group_csv(out / f"group{k + 1}.csv", header, scen.data[k].y, scen.data[k].x_obs)
    write_truth(out, header, scen.truth)
    logger.info("wrote scenario with %d and %d true edges to %s",
                scen.truth.dags[0].n_edges, scen.truth.dags[1].n_edges, out)


def _resolve_path(value, out: Path, default: str) -> Path:
    return Path(value) if value is not None else out / default


def cmd_fit(settings: dict, out: Path, header: list[str]) -> None:
    d1, d2 = load_groups(settings["group1"], settings["group2"], center=settings["center"])
    q = d1.q
    hyper = hyperparams_from(settings)
    targets = None
    if settings["targets"] is not None:
        targets = _targets_from_labels(settings["targets"], q)
    rng = np.random.default_rng(settings["seed"])
    start = time.perf_counter()
    trace = run_chain(d1, d2, hyper, rng, targets=targets, x_tilde=settings["x_tilde"])
    wall = time.perf_counter() - start

    for k in range(2):
        probs = edge_probabilities(trace, k)
        write_matrix(out / f"edge_prob{k + 1}.csv", header, probs)
        est = probs > hyper.edge_threshold
        write_adjacency_csv(out / f"dag_est{k + 1}.csv", est,
                            [header[0], f"edge_threshold={hyper.edge_threshold!r}"])
        write_matrix(out / f"partial_corr{k + 1}.csv", header,
                     trace.partial_correlations(k).mean(axis=0))
    iters = np.arange(hyper.B, hyper.T)
    write_table(out / "theta.csv", header, ["iter", "theta"],
                np.column_stack([iters, trace.theta]), fmt=["%d", FLOAT_FMT])
    write_trace(out / "trace.csv", header, trace, hyper.B)
    write_table(out / "timing.csv", header,
                ["wall_time_seconds", "dag_acceptance_1", "dag_acceptance_2", "theta_acceptance"],
                [[wall, *trace.dag_acceptance_rate, trace.theta_acceptance_rate]])
    logger.info("fit finished in %.2f s", wall)


def _targets_from_labels(labels: Sequence[int], q: int) -> np.ndarray:
    labels = list(labels)
    for s in labels:
        if s == 1:
            raise ValidationError("node 1 is the latent response and cannot be intervened on")
        if not 2 <= s <= q:
            raise ValidationError(f"intervention target {s} outside 2..{q}")
    return np.asarray(labels, dtype=int) - 1


def cmd_effects(settings: dict, out: Path, header: list[str]) -> None:
    path = _resolve_path(settings["trace"], out, "trace.csv")
    if not path.exists():
        raise FileNotFoundError(f"trace file not found: {path}")
    trace = read_trace(path)
    if trace.n_records == 0:
        raise ValidationError(f"{path}: empty trace")
    targets = (np.arange(1, trace.q) if settings["targets"] is None
               else _targets_from_labels(settings["targets"], trace.q))
    levels = settings["x_tilde"] or [trace.x_tilde]
    rows = []
    for k in range(2):
        for s in targets:
            for x in levels:
                est = bma_effects(trace, int(s), float(x), k)
                rows.append([k + 1, s + 1, x, est.mean, est.lower, est.upper])
    write_table(out / "effects.csv", header,
                ["group", "node", "x_tilde", "mean", "q2.5", "q97.5"], rows,
                fmt=["%d", "%d"] + [FLOAT_FMT] * 4)


def cmd_evaluate(settings: dict, out: Path, header: list[str]) -> None:
    if settings["grid"]:
        _evaluate_grid(settings, out, header)
        return
    truth = read_truth(Path(settings["truth_dir"]))
    fit_dir = Path(settings["fit_dir"])
    trace = read_trace(fit_dir / "trace.csv")
    if trace.q != truth.dags[0].q:
        raise ValidationError(f"truth has q={truth.dags[0].q} but the fit has q={trace.q}")
    wall = float("nan")
    timing = fit_dir / "timing.csv"
    if timing.exists():
        _, cols, data = read_table(timing)
        if "wall_time_seconds" in cols and data.shape[0]:
            wall = float(data[0, cols.index("wall_time_seconds")])
    rep = evaluate(Scenario(truth, (), {}), trace, wall, x_tilde=settings["x_tilde"])
    names = ["auc", "partial_err_mean", "partial_err_abs", "theta_true", "theta_mean",
             "theta_err", "theta_lower", "theta_upper", "theta_covered"]
    vals = [rep.auc, rep.partial_err_mean, rep.partial_err_abs, rep.theta_true, rep.theta_mean,
            rep.theta_err, rep.theta_band[0], rep.theta_band[1], float(rep.theta_covered)]
    write_table(out / "metrics.csv", header, names, [vals])
    write_table(out / "roc.csv", header, ["fpr", "tpr"], rep.roc)
    eff = [[k + 1, s + 1, err] for (k, s), err in sorted(rep.effect_err.items())]
    write_table(out / "effect_errors.csv", header, ["group", "node", "error"],
                np.array(eff).reshape(-1, 3), fmt=["%d", "%d", FLOAT_FMT])
    write_table(out / "wall_time.csv", header, ["wall_time_seconds"], [[wall]])


def _evaluate_grid(settings: dict, out: Path, header: list[str]) -> None:
    n1s, n2s = settings["n1"], settings["n2"]
    if len(n1s) != len(n2s):
        raise ValidationError("n1 and n2 lists must have the same length")
    cells = [(q, a, b, xi) for q, (a, b), xi in
             itertools.product(settings["q"], zip(n1s, n2s), settings["xi"])]
    hyper = hyperparams_from(settings, xi_key="prior_xi")
    start = time.perf_counter()
    results = run_grid(cells, settings["replications"], hyper, seed=settings["seed"],
                       threads=settings["threads"], x_tilde=settings["x_tilde"])
    logger.info("grid finished in %.1f s", time.perf_counter() - start)
    cell_cols = ["q", "n1", "n2", "xi", "replications", "failures", "auc_mean", "auc_avg_roc",
                 "partial_err_mean", "partial_err_abs", "theta_err_mean", "theta_coverage",
                 "effect_err_max_abs"]
    rows, rep_rows, wall_rows = [], [], []
    for r in results:
        effs = [abs(v) for rep in r.reports for v in rep.effect_err.values()]
        rows.append([r.q, r.n1, r.n2, r.xi, len(r.reports), len(r.failures), r.mean_auc,
                     r.averaged_roc[1], r.mean_of("partial_err_mean"), r.mean_of("partial_err_abs"),
                     r.mean_of("theta_err"),
                     float(np.mean([rep.theta_covered for rep in r.reports])) if r.reports
                     else float("nan"),
                     max(effs) if effs else float("nan")])
        for i, rep in enumerate(r.reports):
            rep_rows.append([r.q, r.n1, r.n2, r.xi, i, rep.auc, rep.partial_err_mean,
                             rep.partial_err_abs, rep.theta_err, float(rep.theta_covered)])
        walls = [rep.wall_time for rep in r.reports]
        wall_rows.append([r.q, r.n1, r.n2, r.xi, float(np.sum(walls)) if walls else float("nan"),
                          float(np.mean(walls)) if walls else float("nan")])
        if r.reports:
            write_table(out / f"roc_q{r.q}_n{r.n1}_{r.n2}_xi{r.xi!r}.csv", header, ["fpr", "tpr"],
                        r.averaged_roc[0])
    ifmt = ["%d"] * 3 + [FLOAT_FMT]
    write_table(out / "grid_cells.csv", header, cell_cols, np.array(rows, dtype=float),
                fmt=ifmt + ["%d", "%d"] + [FLOAT_FMT] * 7)
    write_table(out / "grid_replications.csv", header,
                ["q", "n1", "n2", "xi", "replication", "auc", "partial_err_mean",
                 "partial_err_abs", "theta_err", "theta_covered"],
                np.array(rep_rows, dtype=float).reshape(-1, 10), fmt=ifmt + ["%d"] + [FLOAT_FMT] * 5)
    write_table(out / "grid_wall_time.csv", header,
                ["q", "n1", "n2", "xi", "wall_time_total", "wall_time_mean"],
                np.array(wall_rows, dtype=float), fmt=ifmt + [FLOAT_FMT] * 2)
    keys, qs, table = auc_table(results, averaged=True)
    write_table(out / "auc_table.csv", header, ["n1", "n2"] + [f"q{q}" for q in qs],
                np.column_stack([np.array(keys, dtype=float).reshape(-1, 2), table]),
                fmt=["%d", "%d"] + [FLOAT_FMT] * len(qs))


COMMANDS = {
    "simulate": cmd_simulate,
    "fit": cmd_fit,
    "effects": cmd_effects,
    "evaluate": cmd_evaluate,
}


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def _add_hyper_flags(p: argparse.ArgumentParser, with_xi: bool = True) -> None:
    p.add_argument("--iters", type=int, help="total iterations T (default 5000)")
    p.add_argument("--burnin", type=int, help="burn-in B (default 1000)")
    if with_xi:
        p.add_argument("--xi", type=float, help="prior edge probability (default 0.1)")
    p.add_argument("--edge-threshold", type=float, help="posterior probability cut for graph estimates")
    p.add_argument("--a", type=float, help="Wishart shape (default q)")
    p.add_argument("--g1", type=float, help="Wishart scale of group 1 (default 1/n1)")
    p.add_argument("--g2", type=float, help="Wishart scale of group 2 (default 1/n2)")
    p.add_argument("--sigma0-sq", type=float, help="theta random-walk variance")
    p.add_argument("--zero-tol", type=float, help="threshold for the initial graph estimate")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dagprobit",
        description="Two-group Gaussian DAG-probit structure learning and causal effects.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="configuration file with one section per subcommand")
    common.add_argument("--seed", type=int, help="random seed (default 0)")
    common.add_argument("--threads", type=int, help="worker processes for grid runs (default 1)")
    common.add_argument("--out-dir", default=".", help="output directory (default: current)")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[common], help="draw a synthetic two-group data set")
    p.add_argument("--q", type=int, help="nodes including the latent response (default 10)")
    p.add_argument("--n1", type=int, help="group 1 sample size (default 200)")
    p.add_argument("--n2", type=int, help="group 2 sample size (default 200)")
    p.add_argument("--xi", type=float, help="edge probability of the true graphs (default 0.1)")

    p = sub.add_parser("fit", parents=[common], help="run the sampler on two group files")
    p.add_argument("--group1", help="group 1 data file (default group1.csv)")
    p.add_argument("--group2", help="group 2 data file (default group2.csv)")
    p.add_argument("--x-tilde", type=float, help="intervention level of recorded effects")
    p.add_argument("--targets", type=int, nargs="+", help="intervention targets (node labels >= 2)")
    p.add_argument("--no-center", dest="center", action="store_const", const=False,
                   help="use covariates as given instead of centring them")
    _add_hyper_flags(p)

    p = sub.add_parser("effects", parents=[common], help="summarise interventional probabilities")
    p.add_argument("--trace", help="trace file (default <out-dir>/trace.csv)")
    p.add_argument("--targets", type=int, nargs="+", help="node labels >= 2 (default all)")
    p.add_argument("--x-tilde", type=float, nargs="+", help="intervention levels")

    p = sub.add_parser("evaluate", parents=[common], help="score a fit or run a simulation grid")
    p.add_argument("--truth-dir", help="directory with the truth bundle")
    p.add_argument("--fit-dir", help="directory with the fit outputs")
    p.add_argument("--grid", action="store_const", const=True, help="run a simulation grid")
    p.add_argument("--q", type=int, nargs="+", help="grid values of q")
    p.add_argument("--n1", type=int, nargs="+", help="grid values of n1 (paired with n2)")
    p.add_argument("--n2", type=int, nargs="+", help="grid values of n2")
    p.add_argument("--xi", type=float, nargs="+", help="grid values of the true edge probability")
    p.add_argument("--prior-xi", type=float, help="prior edge probability used by the fits")
    p.add_argument("--replications", type=int, help="replications per grid cell (default 5)")
    p.add_argument("--x-tilde", type=float, help="intervention level for effect errors")
    _add_hyper_flags(p, with_xi=False)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        settings = load_settings(args.command, args)
        out = Path(args.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        if not os.access(out, os.W_OK):
            raise PermissionError(f"output directory is not writable: {out}")
        header = [_header(settings["seed"], config_hash(args.command, settings))]
        COMMANDS[args.command](settings, out, header)
    except ValidationError as exc:
        print(f"dagprobit: error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except NumericError as exc:
        print(f"dagprobit: numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"dagprobit: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK
