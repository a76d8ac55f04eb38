"""Command-line front end: simulation, fitting, prediction, graph tools.

One run is described by a single JSON config document.  Precedence, lowest
to highest: built-in defaults, the --config file, then individual flags
(--seed, --out, --threads).  The subcommand fixes the run mode; a "mode"
field in the config is optional and must agree with the subcommand when
present.  Every run writes a manifest (resolved config plus seed and
library versions, no timestamps) into the output directory, and a manifest
can itself be passed back to --config to reproduce the run byte for byte.

Exit codes: 0 success; 2 bad usage, config, or input file; 3 model or
sampling failure; 4 graph not decomposable; 5 invalid covariance or cross
parameters; 6 data/dimension mismatch.
"""

from __future__ import annotations

import argparse
import copy
import json
import os
import platform
import sys

import numpy as np
import scipy

from . import __version__
from .data import Dataset, VarData, choose_knots, load_dataset, save_dataset
from .errors import (
    ConfigError,
    CycleDetectedError,
    DegenerateMismatchError,
    DimensionMismatchError,
    GpStitchError,
    InvalidCrossSpecError,
    MisalignedDataError,
    MissingEdgeParameterError,
    NotDecomposableError,
    NotPositiveDefiniteError,
    ParseError,
)
from .gibbs import (
    PosteriorSamples,
    PriorSpec,
    chains_to_csv,
    gibbs_latent,
    gibbs_response,
    predict,
    summary_json,
)
from .graph_mcmc import edge_prob_csv, graph_trace_jsonl, run_graph_mcmc
from .graphs import (
    VariableGraph,
    ar_graph,
    graph_from_json,
    graph_to_json,
    is_decomposable,
    lmc_graph,
    perfect_clique_sequence,
    var_graph,
)
from .kernels import params_from_json, params_to_json
from .mle import MleConfig, fit_mle
from .stitching import KnotSet, build, realization_to_csv, simulate

__all__ = ["main", "RunConfig", "load_config", "resolve_config"]

DEFAULTS = {
    "seed": 0,
    "out": "gpstitch_run",
    "threads": 1,
    "kernel": {"nu": 0.5, "rule": "simple_ag", "delta_a": 0.0},
    "knots": {"policy": "data", "cap": None},
    "priors": {},
    "mcmc": {
        "iters": 1000,
        "burn": 500,
        "thin": 1,
        "schedule": "parallel",
        "estimate_tau2": True,
        "tau2_value": None,
        "cap": 4,
        "moves_per_sweep": None,
        "mode": "response",
        "flat": False,
        "keep_field": True,
    },
    "mle": {},
    "simulate": {
        "n_data": 0,
        "data_at_knots": False,
        "domain": [[0.0, 1.0], [0.0, 1.0]],
        "write_dataset": True,
    },
    "predict": {"run": None, "locations": None, "covariates": None, "max_draws": None},
}

_REQUIRED = {
    "simulate": ("graph", "simulate.params"),
    "fit-mle": ("data", "graph"),
    "fit-gibbs": ("data", "graph"),
    "fit-response": ("data", "graph"),
    "fit-graph": (),
    "predict": ("predict.run", "predict.locations"),
    "graph-tools": (),
}


class RunConfig:
    """Resolved run description: mode plus the merged config document."""

    def __init__(self, mode, doc):
        self.mode = mode
        self.doc = doc
        given = doc.get("mode")
        if given is not None and given != mode:
            raise ConfigError(
                "config mode %r does not match subcommand %r" % (given, mode)
            )
        missing = [
            dotted for dotted in _REQUIRED.get(mode, ()) if self._get(dotted) is None
        ]
        if missing:
            raise ConfigError(
                "mode %s needs config fields: %s" % (mode, ", ".join(missing))
            )

    def _get(self, dotted):
        node = self.doc
        for part in dotted.split("."):
            if not isinstance(node, dict) or part not in node:
                return None
            node = node[part]
        return node

    @property
    def seed(self):
        return int(self.doc["seed"])

    @property
    def out(self):
        return self.doc["out"]

    @property
    def threads(self):
        return int(self.doc["threads"])


def _deep_merge(base, override):
    out = copy.deepcopy(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _deep_merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def load_config(path):
    """Read a config document; manifests unwrap to their stored config."""
    try:
        with open(path) as fh:
            obj = json.load(fh)
    except OSError as e:
        raise ConfigError("cannot read config %s: %s" % (path, e))
    except json.JSONDecodeError as e:
        raise ParseError("config %s is not valid JSON: %s" % (path, e))
    if not isinstance(obj, dict):
        raise ConfigError("config root must be a JSON object")
    if "versions" in obj and "config" in obj:
        obj = obj["config"]
    return obj


def resolve_config(mode, args):
    """Defaults, then the config file, then explicit flags."""
    doc = copy.deepcopy(DEFAULTS)
    if getattr(args, "config", None):
        doc = _deep_merge(doc, load_config(args.config))
    for flag in ("seed", "out", "threads"):
        val = getattr(args, flag, None)
        if val is not None:
            doc[flag] = val
    return RunConfig(mode, doc)


# --------------------------------------------------------------- artifacts


def _ensure_out(cfg):
    os.makedirs(cfg.out, exist_ok=True)
    return cfg.out


def _dump_json(obj, path):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_manifest(cfg):
    doc = {
        "config": _deep_merge(cfg.doc, {"mode": cfg.mode}),
        "versions": {
            "gpstitch": __version__,
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "python": platform.python_version(),
        },
    }
    _dump_json(doc, os.path.join(cfg.out, "manifest.json"))


def _write_locs_csv(locs, path):
    dim = locs.shape[1]
    header = ["x", "y", "z"][:dim]
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in locs:
            fh.write(",".join("%.17g" % c for c in row) + "\n")


def _read_locs_csv(path):
    try:
        arr = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    except OSError as e:
        raise ConfigError("cannot read locations %s: %s" % (path, e))
    except ValueError as e:
        raise ParseError("locations %s: %s" % (path, e))
    if arr.shape[1] not in (2, 3):
        raise ParseError("locations must have 2 or 3 coordinate columns")
    return arr


# ------------------------------------------------------------ ingredients


def build_graph_from_config(spec):
    """Graph from a file, an explicit edge list, or a named builder."""
    if not isinstance(spec, dict):
        raise ConfigError("graph config must be an object")
    if "file" in spec:
        try:
            with open(spec["file"]) as fh:
                return graph_from_json(fh.read())
        except OSError as e:
            raise ConfigError("cannot read graph %s: %s" % (spec["file"], e))
    if "builder" in spec:
        name = spec["builder"]
        try:
            if name == "ar":
                return ar_graph(int(spec["T"]), int(spec["order"]))
            if name == "var":
                lags = [tuple(int(x) for x in t) for t in spec["lag_edges"]]
                return var_graph(int(spec["q"]), int(spec["T"]), lags)
            if name == "lmc":
                return lmc_graph(int(spec["q"]), int(spec["r"]))
        except KeyError as e:
            raise ConfigError("builder %s needs field %s" % (name, e))
        except ValueError as e:
            raise ConfigError(str(e))
        raise ConfigError("unknown graph builder %r" % name)
    if "q" in spec:
        edges = frozenset(
            (min(int(a), int(b)), max(int(a), int(b)))
            for a, b in spec.get("edges", [])
        )
        return VariableGraph(int(spec["q"]), edges)
    raise ConfigError("graph config needs 'file', 'builder', or 'q'")


def resolve_knots(cfg, dataset=None):
    node = cfg.doc["knots"]
    policy = node.get("policy", "data")
    if policy == "data":
        if dataset is None:
            raise ConfigError("knot policy 'data' needs a dataset")
        return choose_knots(dataset, cap=node.get("cap"))
    if policy == "file":
        if not node.get("file"):
            raise ConfigError("knot policy 'file' needs knots.file")
        return KnotSet(_read_locs_csv(node["file"]))
    if policy == "grid":
        g = int(node.get("count", 8))
        domain = node.get("domain", cfg.doc["simulate"]["domain"])
        if len(domain) != 2:
            raise ConfigError("grid knots implemented for 2-d domains")
        xs = np.linspace(domain[0][0], domain[0][1], g)
        ys = np.linspace(domain[1][0], domain[1][1], g)
        X, Y = np.meshgrid(xs, ys)
        return KnotSet(np.column_stack([X.ravel(), Y.ravel()]))
    raise ConfigError("unknown knot policy %r" % policy)


def _priors(cfg):
    node = dict(cfg.doc["priors"])
    for key in ("sigma_factor", "phi_factor", "b_box"):
        if key in node:
            node[key] = tuple(node[key])
    try:
        return PriorSpec(**node)
    except TypeError as e:
        raise ConfigError("bad priors: %s" % e)


def _mle_config(cfg):
    node = dict(cfg.doc["mle"])
    for key in ("sigma_bounds", "phi_bounds", "tau2_bounds", "b_box", "nu_bounds"):
        if key in node:
            node[key] = tuple(node[key])
    try:
        return MleConfig(**node)
    except TypeError as e:
        raise ConfigError("bad mle settings: %s" % e)


def _load_data(cfg):
    return load_dataset(cfg.doc["data"])


def _substream_rng(seed, tag):
    return np.random.Generator(
        np.random.Philox(np.random.SeedSequence(entropy=seed, spawn_key=tag))
    )


# ------------------------------------------------------------------ modes


def run_simulate(cfg):
    out = _ensure_out(cfg)
    graph = build_graph_from_config(cfg.doc["graph"])
    node = cfg.doc["simulate"]
    marginals, cross = params_from_json(node["params"])
    if len(marginals) != graph.q:
        raise ConfigError(
            "simulate.params lists %d marginals for a %d-variable graph"
            % (len(marginals), graph.q)
        )
    knots = resolve_knots(cfg)
    model = build(graph, knots, marginals, cross)

    n_data = int(node.get("n_data", 0))
    data_locs = None
    if node.get("data_at_knots"):
        n_data = knots.count
        data_locs = {
            i: knots.locations.copy() for i in range(1, graph.q + 1)
        }
    elif n_data > 0:
        domain = np.asarray(node.get("domain", [[0.0, 1.0], [0.0, 1.0]]), dtype=float)
        if domain.shape[0] != knots.dim:
            raise ConfigError("simulate.domain dimension must match the knots")
        data_locs = {}
        for i in range(1, graph.q + 1):
            r = _substream_rng(cfg.seed, (100, i))
            lo, hi = domain[:, 0], domain[:, 1]
            data_locs[i] = lo + (hi - lo) * r.uniform(size=(n_data, knots.dim))
    rea = simulate(model, _substream_rng(cfg.seed, (101,)), data_locs=data_locs)
    realization_to_csv(model, rea, os.path.join(out, "realization.csv"))

    if node.get("write_dataset", True) and data_locs is not None:
        frames = {}
        for i in range(1, graph.q + 1):
            r = _substream_rng(cfg.seed, (102, i))
            tau = marginals[i - 1].tau2
            y = rea.w_data[i] + np.sqrt(tau) * r.standard_normal(n_data)
            frames[i] = VarData(data_locs[i], y)
        save_dataset(
            Dataset(frames, graph.q, knots.dim), os.path.join(out, "dataset.csv")
        )
    write_manifest(cfg)
    n_rows = graph.q * knots.count + sum(
        len(v) for v in (data_locs or {}).values()
    )
    print("simulate: wrote %d realization rows to %s" % (n_rows, out))
    return 0


def run_fit_mle(cfg):
    out = _ensure_out(cfg)
    dataset = _load_data(cfg)
    graph = build_graph_from_config(cfg.doc["graph"])
    knots = resolve_knots(cfg, dataset)
    kern = cfg.doc["kernel"]
    res = fit_mle(
        dataset, graph, knots=knots, config=_mle_config(cfg),
        rule=kern["rule"], delta_a=kern["delta_a"], nu=kern["nu"],
    )
    doc = {
        "params": json.loads(params_to_json(res.marginals, res.cross)),
        "beta": {str(i): list(map(float, v)) for i, v in sorted(res.beta.items())},
        "loglik": res.loglik,
        "se_b": {"%d-%d" % k: v for k, v in sorted(res.se_b.items())},
        "n_iter": res.n_iter,
        "converged": bool(res.converged),
    }
    _dump_json(doc, os.path.join(out, "estimates.json"))
    write_manifest(cfg)
    print(
        "fit mle: loglik %.6f after %d sweeps (%s)"
        % (res.loglik, res.n_iter, "converged" if res.converged else "max sweeps")
    )
    return 0


def _run_fit_chain(cfg, kind):
    out = _ensure_out(cfg)
    dataset = _load_data(cfg)
    graph = build_graph_from_config(cfg.doc["graph"])
    knots = resolve_knots(cfg, dataset)
    kern = cfg.doc["kernel"]
    m = cfg.doc["mcmc"]
    common = dict(
        priors=_priors(cfg), iters=int(m["iters"]), burn=int(m["burn"]),
        thin=int(m["thin"]), seed=cfg.seed, knots=knots, nu=kern["nu"],
        rule=kern["rule"], delta_a=kern["delta_a"], threads=cfg.threads,
        schedule=m["schedule"], keep_field=bool(m["keep_field"]),
    )
    if kind == "latent":
        samples = gibbs_latent(dataset, graph, **common)
    else:
        samples = gibbs_response(
            dataset, graph, estimate_tau2=bool(m["estimate_tau2"]),
            tau2_value=m["tau2_value"], **common,
        )
    chains_to_csv(samples, os.path.join(out, "chains.csv"))
    _dump_json(summary_json(samples), os.path.join(out, "summary.json"))
    _dump_json(
        {
            "names": samples.names,
            "kind": samples.kind,
            "acceptance": samples.acceptance,
            "seed": samples.seed,
            "config": samples.config,
            "state_dimension": samples.state_dimension,
        },
        os.path.join(out, "posterior.json"),
    )
    _write_locs_csv(samples.knots, os.path.join(out, "knots.csv"))
    if samples.field_draws is not None:
        np.save(os.path.join(out, "field.npy"), samples.field_draws)
    write_manifest(cfg)
    print(
        "fit %s: %d draws, %d parameters -> %s"
        % (
            "gibbs" if kind == "latent" else "response",
            samples.n_draws,
            len(samples.names),
            out,
        )
    )
    return 0


def run_fit_graph(cfg):
    out = _ensure_out(cfg)
    m = cfg.doc["mcmc"]
    kern = cfg.doc["kernel"]
    graph = (
        build_graph_from_config(cfg.doc["graph"])
        if cfg.doc.get("graph") is not None
        else None
    )
    kwargs = dict(
        graph=graph, priors=_priors(cfg), iters=int(m["iters"]),
        burn=int(m["burn"]), thin=int(m["thin"]), seed=cfg.seed,
        cap=m["cap"], moves_per_sweep=m["moves_per_sweep"],
        threads=cfg.threads, schedule=m["schedule"],
    )
    if m.get("flat"):
        q = cfg.doc.get("q") or (graph.q if graph is not None else None)
        if q is None:
            raise ConfigError("flat graph run needs 'q' or an initial graph")
        samples = run_graph_mcmc(flat_likelihood=True, q=int(q), **kwargs)
    else:
        if cfg.doc.get("data") is None:
            raise ConfigError("fit graph needs 'data' (or mcmc.flat for a calibration run)")
        dataset = _load_data(cfg)
        knots = resolve_knots(cfg, dataset)
        samples = run_graph_mcmc(
            dataset=dataset, knots=knots, nu=kern["nu"], rule=kern["rule"],
            delta_a=kern["delta_a"], mode=m["mode"],
            estimate_tau2=bool(m["estimate_tau2"]),
            tau2_value=m["tau2_value"], **kwargs,
        )
    edge_prob_csv(samples, os.path.join(out, "edge_probs.csv"))
    graph_trace_jsonl(samples, os.path.join(out, "graph_trace.jsonl"))
    if samples.param_draws is not None:
        with open(os.path.join(out, "graph_chains.csv"), "w") as fh:
            fh.write(",".join(samples.param_names) + "\n")
            for row in samples.param_draws:
                fh.write(",".join("%.17g" % v for v in row) + "\n")
    _dump_json(
        {
            "acceptance": samples.acceptance,
            "config": samples.config,
            "n_draws": samples.n_draws,
            "top_edges": [
                {"pair": list(p), "prob": r} for p, r in samples.top_edges()
            ],
        },
        os.path.join(out, "graph_summary.json"),
    )
    write_manifest(cfg)
    best = samples.top_edges()[:3]
    print(
        "fit graph: %d draws, accept %.3f, top edges %s"
        % (
            samples.n_draws,
            samples.acceptance["graph"],
            ", ".join("%d-%d (%.2f)" % (p[0], p[1], r) for p, r in best),
        )
    )
    return 0


def _load_posterior(run_dir):
    meta_path = os.path.join(run_dir, "posterior.json")
    try:
        with open(meta_path) as fh:
            meta = json.load(fh)
    except OSError as e:
        raise ConfigError("cannot read fitted run %s: %s" % (run_dir, e))
    draws = np.loadtxt(
        os.path.join(run_dir, "chains.csv"), delimiter=",", skiprows=1, ndmin=2
    )
    knots = _read_locs_csv(os.path.join(run_dir, "knots.csv"))
    field_path = os.path.join(run_dir, "field.npy")
    field = np.load(field_path) if os.path.exists(field_path) else None
    return PosteriorSamples(
        names=list(meta["names"]),
        draws=draws,
        field_draws=field,
        kind=meta["kind"],
        acceptance=meta["acceptance"],
        seed=meta["seed"],
        config=meta["config"],
        knots=knots,
        state_dimension=meta["state_dimension"],
        init_state=None,
        final_state=None,
    )


def _read_predict_locations(path, q):
    """Either variable,x,y[,z] rows or plain x,y[,z] for every variable."""
    try:
        with open(path) as fh:
            header = fh.readline().strip().lower().split(",")
    except OSError as e:
        raise ConfigError("cannot read locations %s: %s" % (path, e))
    if header and header[0] == "variable":
        arr = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        if arr.shape[1] != len(header):
            raise ParseError("location rows do not match the header")
        out = {}
        for row in arr:
            out.setdefault(int(row[0]), []).append(row[1:])
        return {i: np.asarray(v) for i, v in out.items()}
    pts = _read_locs_csv(path)
    return {i: pts for i in range(1, q + 1)}


def _read_predict_covariates(path):
    """Rows variable,cov1..covp, aligned with the location rows per
    variable."""
    try:
        with open(path) as fh:
            header = fh.readline().strip().lower().split(",")
    except OSError as e:
        raise ConfigError("cannot read covariates %s: %s" % (path, e))
    if not header or header[0] != "variable":
        raise ParseError("covariate file needs a leading 'variable' column")
    arr = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    out = {}
    for row in arr:
        out.setdefault(int(row[0]), []).append(row[1:])
    return {i: np.asarray(v) for i, v in out.items()}


def run_predict(cfg):
    out = _ensure_out(cfg)
    node = cfg.doc["predict"]
    samples = _load_posterior(node["run"])
    q = samples.field_draws.shape[1] if samples.field_draws is not None else 0
    if q == 0:
        raise ConfigError("fitted run %s kept no field draws" % node["run"])
    new_locs = _read_predict_locations(node["locations"], q)
    X_new = None
    if node.get("covariates"):
        X_new = _read_predict_covariates(node["covariates"])
        for i, X in X_new.items():
            if i in new_locs and X.shape[0] != new_locs[i].shape[0]:
                raise DimensionMismatchError(
                    "variable %d: %d covariate rows for %d locations"
                    % (i, X.shape[0], new_locs[i].shape[0])
                )
    preds = predict(
        samples, new_locs, X_new=X_new, seed=cfg.seed,
        max_draws=node.get("max_draws"),
    )
    dim = samples.knots.shape[1]
    cols = ["variable"] + ["x", "y", "z"][:dim] + [
        "mean", "sd", "q025", "q500", "q975",
    ]
    path = os.path.join(out, "predictions.csv")
    with open(path, "w") as fh:
        fh.write(",".join(cols) + "\n")
        for i in sorted(preds):
            p = preds[i]
            for r in range(p.locations.shape[0]):
                vals = [p.mean[r], p.sd[r], p.lower[r], p.median[r], p.upper[r]]
                fh.write(
                    "%d,%s,%s\n"
                    % (
                        i,
                        ",".join("%.17g" % c for c in p.locations[r]),
                        ",".join("%.17g" % v for v in vals),
                    )
                )
    write_manifest(cfg)
    n_rows = sum(p.locations.shape[0] for p in preds.values())
    print("predict: wrote %d rows to %s" % (n_rows, path))
    return 0


def _graph_from_args(cfg, args):
    spec = {}
    if getattr(args, "file", None):
        spec["file"] = args.file
    elif getattr(args, "builder", None):
        spec["builder"] = args.builder
        for key in ("q", "T", "order", "r"):
            val = getattr(args, key, None)
            if val is not None:
                spec[key] = val
        if getattr(args, "lag_edges", None):
            spec["lag_edges"] = json.loads(args.lag_edges)
    elif getattr(args, "edges", None) is not None and getattr(args, "q", None):
        spec = {"q": args.q, "edges": json.loads(args.edges)}
    elif cfg is not None and cfg.doc.get("graph"):
        spec = cfg.doc["graph"]
    else:
        raise ConfigError("no graph given: use --file, --builder, or a config")
    return build_graph_from_config(spec)


def run_graph_check(cfg, args):
    graph = _graph_from_args(cfg, args)
    ok, _ = is_decomposable(graph)
    if not ok:
        print(
            "graph: %d vertices, %d edges: NOT decomposable"
            % (graph.q, graph.n_edges)
        )
        raise NotDecomposableError("graph fails decomposability check")
    cs = perfect_clique_sequence(graph)
    print(
        "graph: %d vertices, %d edges, decomposable; %d cliques, "
        "largest %d, max vertex load %d"
        % (graph.q, graph.n_edges, len(cs.cliques), cs.q_star, cs.p_star)
    )
    return 0


def run_graph_build(cfg, args):
    graph = _graph_from_args(cfg, args)
    text = graph_to_json(graph)
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        path = os.path.join(args.out, "graph.json")
        with open(path, "w") as fh:
            fh.write(text + "\n")
        print("graph build: %d vertices, %d edges -> %s" % (graph.q, graph.n_edges, path))
    else:
        print(text)
    return 0


# -------------------------------------------------------------- dispatch


def _add_common(p):
    p.add_argument("--config", help="JSON config or a previous manifest")
    p.add_argument("--seed", type=int, help="overrides config seed")
    p.add_argument("--out", help="output directory, overrides config")
    p.add_argument("--threads", type=int, help="worker threads, overrides config")


def _add_graph_source(p):
    p.add_argument("--file", help="graph JSON file")
    p.add_argument("--builder", choices=["ar", "var", "lmc"])
    p.add_argument("--q", type=int)
    p.add_argument("--T", type=int)
    p.add_argument("--order", type=int)
    p.add_argument("--r", type=int)
    p.add_argument("--lag-edges", dest="lag_edges", help="JSON [[src,dst,lag],...]")
    p.add_argument("--edges", help="JSON [[i,j],...] with --q")


def build_parser():
    ap = argparse.ArgumentParser(
        prog="gpstitch",
        description="Stitched graphical Gaussian process models",
    )
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="draw a realization of a stitched model")
    _add_common(p)

    fit = sub.add_parser("fit", help="fit a model to data")
    fsub = fit.add_subparsers(dest="method", required=True)
    for name in ("mle", "gibbs", "response", "graph"):
        p = fsub.add_parser(name)
        _add_common(p)

    p = sub.add_parser("predict", help="posterior prediction from a fitted run")
    _add_common(p)

    g = sub.add_parser("graph", help="graph utilities")
    gsub = g.add_subparsers(dest="tool", required=True)
    for name in ("check", "build"):
        p = gsub.add_parser(name)
        _add_common(p)
        _add_graph_source(p)
    return ap


_EXIT_CODES = (
    (ConfigError, 2),
    (ParseError, 2),
    (NotDecomposableError, 4),
    (CycleDetectedError, 4),
    (NotPositiveDefiniteError, 5),
    (InvalidCrossSpecError, 5),
    (MissingEdgeParameterError, 5),
    (MisalignedDataError, 6),
    (DimensionMismatchError, 6),
    (DegenerateMismatchError, 6),
    (GpStitchError, 3),
)


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        if args.command == "simulate":
            return run_simulate(resolve_config("simulate", args))
        if args.command == "fit":
            if args.method == "mle":
                return run_fit_mle(resolve_config("fit-mle", args))
            if args.method == "gibbs":
                return _run_fit_chain(resolve_config("fit-gibbs", args), "latent")
            if args.method == "response":
                return _run_fit_chain(
                    resolve_config("fit-response", args), "response"
                )
            return run_fit_graph(resolve_config("fit-graph", args))
        if args.command == "predict":
            return run_predict(resolve_config("predict", args))
        if args.command == "graph":
            cfg = None
            if args.config:
                cfg = resolve_config("graph-tools", args)
            if args.tool == "check":
                return run_graph_check(cfg, args)
            return run_graph_build(cfg, args)
        raise ConfigError("unknown command %r" % args.command)
    except Exception as e:  # noqa: BLE001 - map to documented exit codes
        for klass, code in _EXIT_CODES:
            if isinstance(e, klass):
                print("error: %s" % e, file=sys.stderr)
                return code
        raise


if __name__ == "__main__":
    sys.exit(main())
