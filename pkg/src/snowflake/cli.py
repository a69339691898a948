"""Command-line entry point: ``snowflake table2 | verify | latent-graph | embed``.

Configuration precedence, lowest to highest: built-in defaults, the JSON file
given with ``--config``, then explicit flags. Results go to
``<results dir>/<command>-<hash12>/`` where the results dir is ``--results-dir``,
else ``$SNOWFLAKE_RESULTS_DIR``, else ``./results``. Every file written there
carries the hash of the resolved configuration.

Exit codes: 0 success, 1 configuration error, 2 suite failure, 3 non-finite
numbers during a run.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import embedding, graphs, latent_graph, plotting, suites
from .trainer import MODEL_KINDS, ExperimentConfig, run_experiment

log = logging.getLogger("snowflake")

EXIT_OK, EXIT_CONFIG, EXIT_SUITE, EXIT_NUMERIC = 0, 1, 2, 3
RESULTS_ENV = "SNOWFLAKE_RESULTS_DIR"
SIMILARITY_ALIASES = {"snowflake": "neural_snowflake"}

TABLE2_DEFAULTS = {
    "metrics": list(graphs.METRIC_IDS),
    "models": list(MODEL_KINDS),
    "seeds": [0],
    "experiment": {},
}
LATENT_DEFAULTS = {"similarity_space": ["euclidean", "neural_snowflake"]}


class ConfigError(ValueError):
    pass


@dataclass
class RunManifest:
    command: str
    config_path: str | None
    config_hash: str
    config: dict
    seed: list
    outputs: list = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, indent=2) + "\n"


def content_hash(obj) -> str:
    """Git blob hash of the canonical JSON encoding of ``obj``."""
    data = json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


# ------------------------------------------------------------------- config

def _load_config(path) -> dict:
    if path is None:
        return {}
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("config file must hold a JSON object")
    return data


def _split_list(text: str | None):
    return None if text is None else [v.strip() for v in text.split(",") if v.strip()]


def _int_list(text: str | None):
    items = _split_list(text)
    if items is None:
        return None
    try:
        return [int(v) for v in items]
    except ValueError as exc:
        raise ConfigError(f"seeds must be integers: {text}") from exc


def resolve_table2(args) -> dict:
    data = _load_config(args.config)
    unknown = set(data) - set(TABLE2_DEFAULTS)
    if unknown:
        raise ConfigError(f"unknown table2 config keys: {sorted(unknown)}")
    cfg = {**TABLE2_DEFAULTS, **data}
    cfg["experiment"] = dict(cfg["experiment"])
    if args.metrics:
        cfg["metrics"] = _split_list(args.metrics)
    if args.models:
        cfg["models"] = _split_list(args.models)
    if args.seeds:
        cfg["seeds"] = _int_list(args.seeds)
    for key in ("train_pairs", "test_pairs", "epochs"):
        if getattr(args, key) is not None:
            cfg["experiment"][key] = getattr(args, key)
    bad = [m for m in cfg["metrics"] if m not in graphs.METRIC_IDS]
    bad += [k for k in cfg["models"] if k not in MODEL_KINDS]
    if bad or not cfg["metrics"] or not cfg["models"] or not cfg["seeds"]:
        raise ConfigError(f"invalid metrics/models/seeds selection {bad or ''}".strip())
    # keep canonical order so the grid layout does not depend on flag order
    cfg["metrics"] = [m for m in graphs.METRIC_IDS if m in cfg["metrics"]]
    cfg["models"] = [k for k in MODEL_KINDS if k in cfg["models"]]
    reserved = {"metric_id", "model_kind", "seed"} & set(cfg["experiment"])
    if reserved:
        raise ConfigError(f"set {sorted(reserved)} through metrics/models/seeds instead")
    try:
        base = ExperimentConfig.from_dict(cfg["experiment"]).to_dict()
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    for key in ("metric_id", "model_kind", "seed"):
        base.pop(key)
    base.pop("mlp_layers")
    cfg["experiment"] = {**base, **cfg["experiment"]}
    return cfg


def resolve_latent(args) -> dict:
    data = {**LATENT_DEFAULTS, **_load_config(args.config)}
    if args.similarity:
        data["similarity_space"] = _split_list(args.similarity)
    if args.seeds:
        data["seeds"] = _int_list(args.seeds)
    for key in ("epochs", "k"):
        if getattr(args, key) is not None:
            data[key] = getattr(args, key)
    spaces = data["similarity_space"]
    spaces = [spaces] if isinstance(spaces, str) else list(spaces)
    spaces = [SIMILARITY_ALIASES.get(s, s) for s in spaces]
    if not spaces:
        raise ConfigError("no similarity space selected")
    try:
        base = latent_graph.LatentGraphConfig.from_dict({**data, "similarity_space": spaces[0]}).to_dict()
        for s in spaces:
            latent_graph.LatentGraphConfig.from_dict({**base, "similarity_space": s})
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    base["similarity_space"] = spaces
    return base


# ------------------------------------------------------------------ outputs

class OutputDir:
    """Writes files under one run directory and records them for the manifest."""

    def __init__(self, root: Path, manifest: RunManifest):
        self.root = root
        self.manifest = manifest
        root.mkdir(parents=True, exist_ok=True)

    def path(self, name: str) -> Path:
        p = self.root / name
        p.parent.mkdir(parents=True, exist_ok=True)
        self.manifest.outputs.append(name)
        return p

    def write_jsonl(self, name: str, records) -> None:
        with open(self.path(name), "w", encoding="utf-8") as fh:
            for rec in records:
                fh.write(json.dumps({"manifest": self.manifest.config_hash, **rec}, sort_keys=True) + "\n")

    def write_csv(self, name: str, header, rows) -> None:
        buf = io.StringIO()
        buf.write(f"# manifest {self.manifest.config_hash}\n")
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([repr(v) if isinstance(v, float) else v for v in row])
        self.path(name).write_text(buf.getvalue(), encoding="utf-8")

    def finish(self) -> None:
        (self.root / "manifest.json").write_text(self.manifest.to_json(), encoding="utf-8")


def _results_root(args) -> Path:
    return Path(args.results_dir or os.environ.get(RESULTS_ENV) or "results")


def _open_output(args, command: str, config: dict, seeds) -> OutputDir:
    h = content_hash({"command": command, "config": config})
    manifest = RunManifest(command, args.config if hasattr(args, "config") else None, h, config, list(seeds))
    return OutputDir(_results_root(args) / f"{command}-{h[:12]}", manifest)


def _pool_map(fn, items, workers: int):
    if workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


# ----------------------------------------------------------------- commands

def _table2_task(cfg: dict) -> dict:
    rep = run_experiment(ExperimentConfig.from_dict(cfg))
    log.info("%s/%s seed %d: test MSE %.4g (%.1fs)", cfg["metric_id"], cfg["model_kind"],
             cfg["seed"], rep.test_mse, rep.wall_time)
    return rep.to_record()


def cmd_table2(args) -> int:
    cfg = resolve_table2(args)
    out = _open_output(args, "table2", cfg, cfg["seeds"])
    tasks = [{**cfg["experiment"], "metric_id": m, "model_kind": k, "seed": s}
             for m in cfg["metrics"] for k in cfg["models"] for s in cfg["seeds"]]
    records = _pool_map(_table2_task, tasks, args.workers)

    out.write_jsonl("results.jsonl", records)
    grid, traces = {}, {}
    for m in cfg["metrics"]:
        for k in cfg["models"]:
            recs = [r for r in records if r["config"]["metric_id"] == m and r["config"]["model_kind"] == k]
            grid[(m, k)] = float(np.mean([r["test_mse"] for r in recs]))
            traces[(m, k)] = recs[0]["loss_trace"]
    out.write_csv("grid.csv", ["metric"] + cfg["models"],
                  [[m] + [grid[(m, k)] for k in cfg["models"]] for m in cfg["metrics"]])
    for r in records:
        c = r["config"]
        out.write_csv(f"traces/{c['metric_id']}_{c['model_kind']}_seed{c['seed']}.csv",
                      ["epoch", "train_mse"], [[e + 1, float(v)] for e, v in enumerate(r["loss_trace"])])
    h = out.manifest.config_hash
    plotting.loss_curves(traces, out.path("loss_curves.png"), h)
    plotting.mse_grid(grid, cfg["metrics"], cfg["models"], out.path("mse_grid.png"), h)
    out.finish()
    print(out.root)
    for m in cfg["metrics"]:
        print(m, " ".join(f"{k}={grid[(m, k)]:.3g}" for k in cfg["models"]))

    finite = all(math.isfinite(r["test_mse"]) and np.all(np.isfinite(r["loss_trace"])) for r in records)
    return EXIT_OK if finite else EXIT_NUMERIC


def _latent_task(item) -> latent_graph.SplitResult:
    cfg, seed = item
    return latent_graph.run_split(latent_graph.LatentGraphConfig.from_dict(cfg), seed)


def cmd_latent_graph(args) -> int:
    cfg = resolve_latent(args)
    out = _open_output(args, "latent-graph", cfg, cfg["seeds"])
    configs = [{**cfg, "similarity_space": s} for s in cfg["similarity_space"]]
    items = [(c, int(seed)) for c in configs for seed in cfg["seeds"]]
    splits = _pool_map(_latent_task, items, args.workers)
    n = len(cfg["seeds"])
    reports = [latent_graph.report_from_splits(latent_graph.LatentGraphConfig.from_dict(c),
                                               splits[i * n:(i + 1) * n])
               for i, c in enumerate(configs)]
    records = [r.to_record() for r in reports]
    out.write_jsonl("results.jsonl", records)
    out.write_csv("accuracy.csv", ["similarity_space", "phi", "mean_accuracy", "std_accuracy"],
                  [[r.similarity_space, r.config["phi"], r.mean_accuracy, r.std_accuracy] for r in reports])
    spaces = [r.similarity_space for r in reports]
    out.write_csv("paired.csv", ["seed"] + spaces,
                  [[int(seed)] + [r.accuracies[j] for r in reports] for j, seed in enumerate(cfg["seeds"])])
    plotting.accuracy_bars(records, out.path("accuracy.png"), out.manifest.config_hash)
    out.finish()
    print(out.root)
    for r in reports:
        print(f"{r.similarity_space}: {r.mean_accuracy:.4f} +- {r.std_accuracy:.4f} (phi: {r.config['phi']})")
    finite = all(np.all(np.isfinite(s.loss_trace)) and np.all(np.isfinite(s.gl_trace)) for s in splits)
    return EXIT_OK if finite else EXIT_NUMERIC


def cmd_verify(args) -> int:
    if args.suite not in suites.SUITES:
        raise ConfigError(f"unknown suite {args.suite!r}; expected one of {sorted(suites.SUITES)}")
    checks = suites.run_suite(args.suite)
    out = _open_output(args, "verify", {"suite": args.suite}, [0])
    records = [c.to_record() for c in checks]
    out.write_jsonl("checks.jsonl", records)
    out.finish()
    for rec in records:
        print(json.dumps(rec, sort_keys=True))
    return EXIT_OK if all(c.passed for c in checks) else EXIT_SUITE


def cmd_embed(args) -> int:
    try:
        graph = graphs.WeightedGraph.from_json(Path(args.graph).read_text(encoding="utf-8"))
        D = graphs.geodesic_distances(graph)
    except (OSError, ValueError, KeyError) as exc:
        raise ConfigError(f"cannot use graph file {args.graph}: {exc}") from exc
    eps = args.epsilon if args.epsilon is not None else embedding.critical_exponent(max(D.shape[0], 2), args.tree)
    if not 0 < eps <= 1:
        raise ConfigError("epsilon must lie in (0, 1]")
    cfg = {"graph": graph.to_dict(), "epsilon": eps}
    out = _open_output(args, "embed", cfg, [])
    out.manifest.config_path = args.graph
    result = embedding.schoenberg_embed(D, eps)
    out.write_jsonl("embedding.jsonl", [result.to_dict()])
    if result:
        out.write_csv("coords.csv", ["node"] + [f"x{j}" for j in range(result.dim)],
                      [[i] + [float(v) for v in row] for i, row in enumerate(result.coords)])
        plotting.embedding_scatter(result.coords, out.path("embedding.png"), out.manifest.config_hash)
    out.finish()
    print(out.root)
    if result:
        print(f"feasible: dim {result.dim}, epsilon {eps:.6g}, residual {result.residual:.3g}")
    else:
        print(f"infeasible at epsilon {eps:.6g}: min eigenvalue {result.min_eigenvalue:.3g}")
    return EXIT_OK


# ------------------------------------------------------------------- parser

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="snowflake", description=__doc__.split("\n\n")[0])
    parser.add_argument("--results-dir", help=f"output root (default ${RESULTS_ENV} or ./results)")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t2 = sub.add_parser("table2", help="pairwise distance regression grid")
    t2.add_argument("--config", help="JSON with metrics, models, seeds and experiment overrides")
    t2.add_argument("--metrics", help="comma-separated subset of M1..M6")
    t2.add_argument("--models", help=f"comma-separated subset of {','.join(MODEL_KINDS)}")
    t2.add_argument("--seeds", help="comma-separated integer seeds")
    t2.add_argument("--train-pairs", type=int)
    t2.add_argument("--test-pairs", type=int)
    t2.add_argument("--epochs", type=int)
    t2.add_argument("--workers", type=int, default=1)
    t2.set_defaults(func=cmd_table2)

    ver = sub.add_parser("verify", help="run a named verification suite")
    ver.add_argument("suite", help=", ".join(sorted(suites.SUITES)))
    ver.set_defaults(func=cmd_verify)

    lg = sub.add_parser("latent-graph", help="latent graph inference on synthetic blobs")
    lg.add_argument("--config", help="JSON with latent graph config keys")
    lg.add_argument("--similarity", help="comma-separated similarity spaces (snowflake = neural_snowflake)")
    lg.add_argument("--seeds", help="comma-separated integer seeds")
    lg.add_argument("--epochs", type=int)
    lg.add_argument("--k", type=int)
    lg.add_argument("--workers", type=int, default=1)
    lg.set_defaults(func=cmd_latent_graph)

    emb = sub.add_parser("embed", help="Euclidean embedding of a graph's snowflaked geodesic metric")
    emb.add_argument("graph", help="graph JSON with edges, weights and n_nodes")
    emb.add_argument("--epsilon", type=float, help="snowflake power (default: critical exponent)")
    emb.add_argument("--tree", action="store_true", help="use the tree exponent 1/2")
    emb.set_defaults(func=cmd_embed)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(message)s", stream=sys.stderr)
    if getattr(args, "workers", 1) < 1:
        print("snowflake: error: --workers must be at least 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"snowflake: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FloatingPointError as exc:
        print(f"snowflake: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
