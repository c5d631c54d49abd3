"""Command-line front end: ``copygraph <subcommand> [options]``.

Every run writes ``payload.json`` (a pure function of inputs, config and
seed) and ``report.json`` (payload plus config echo, input hashes and
timing) to the output directory.

Exit status: 0 on success, 1 when ``verify`` reports a failed check,
2 for invalid configuration, 3 for runtime errors. Errors are printed to
stderr as JSON.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable

import numpy as np

from copygraph.adversarial import AttackSpec, DefenseConfig, defend_copying, dice_attack, spectral_embedding
from copygraph.config import SCHEMAS, ConfigError, RunConfig, validate_config
from copygraph.copying import (
    build_knn_embedding,
    build_label_uniform,
    copy_graph,
    identity_distribution,
    load_distribution,
    write_zeta,
)
from copygraph.datasets import normalize_features, remove_node_edges
from copygraph.gcn import EnsembleConfig, GcnConfig, LabelSplit, accuracy, bgcn_copy_classify, gcn_classify
from copygraph.graph import (
    BipartiteGraph,
    Graph,
    NodeLabels,
    largest_connected_component,
    load_edge_list,
    load_features,
    load_interactions,
    load_labels,
    write_edge_list,
    write_interactions,
)
from copygraph.recsys import (
    BprConfig,
    EnsembleSpec,
    MetricsReport,
    bpr_train,
    ebpr_evaluate,
    evaluate_scores,
    filter_interactions,
    load_bpr_model,
    save_bpr_model,
    score_matrix,
    sgbpr_train_evaluate,
    split_interactions,
)
from copygraph.rng import derive_rng, ordered_map
from copygraph.stats import mean_statistics, summarize
from copygraph.theory import (
    ERParams,
    SBMParams,
    cross_class_distribution,
    skewed_distribution,
    uniform_distribution,
    verify_er_marginal,
    verify_sbm_marginal,
    within_class_distribution,
)

logger = logging.getLogger(__name__)

EXIT_OK, EXIT_FAILED_CHECK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2, 3


@dataclass
class RunReport:
    config: dict
    input_hashes: dict[str, str]
    timing: dict[str, float]
    payload: dict

    def as_dict(self) -> dict:
        return {"config": self.config, "input_hashes": self.input_hashes, "timing": self.timing, "payload": self.payload}


def blob_hash(path: Path) -> str:
    """Git-style blob SHA-1 of a file's bytes."""
    data = Path(path).read_bytes()
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def file_sha256(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def dump_json(obj: Any, path: Path) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


class _Run:
    """Per-run context handed to subcommand handlers."""

    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self.p = cfg.params
        self.out = cfg.out
        self.artifacts: dict[str, str] = {}

    def path(self, name: str) -> Path:
        return self.out / name

    def emitted(self, name: str) -> None:
        self.artifacts[name] = file_sha256(self.path(name))


def _node_inputs(r: _Run, need_features: bool) -> tuple[Graph, NodeLabels, Any]:
    g = load_edge_list(r.p["graph"])
    labels = load_labels(r.p["labels"], n_nodes=g.n_nodes)
    x = normalize_features(load_features(r.p["features"], n_nodes=g.n_nodes)) if need_features else None
    return g, labels, x


def _write_table(path: Path, header: list[str], rows: list[list[Any]]) -> None:
    with path.open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _prob_rows(nodes: np.ndarray, table: np.ndarray) -> list[list[Any]]:
    return [[int(v)] + [repr(float(p)) for p in table[a]] for a, v in enumerate(nodes)]


# ---------------------------------------------------------------- handlers


def cmd_stats(r: _Run) -> dict:
    g = load_edge_list(r.p["graph"], directed=r.p["directed"])
    labels = load_labels(r.p["labels"], n_nodes=g.n_nodes).labels if r.p["labels"] else None
    if r.p["lcc"]:
        g, remap = largest_connected_component(g)
        if labels is not None:
            labels = labels[remap >= 0]
    return {"statistics": summarize(g, labels).as_dict()}


def _sample_distribution(r: _Run, g: Graph, labels: NodeLabels | None):
    kind = r.p["distribution"]
    if kind == "identity":
        return identity_distribution(g.n_nodes)
    if kind == "file":
        if r.p["distribution_file"] is None:
            raise ConfigError(["distribution_file: required when distribution is 'file'"])
        return load_distribution(r.p["distribution_file"], n_nodes=g.n_nodes)
    if kind == "label":
        if labels is None:
            raise ConfigError(["labels: required when distribution is 'label'"])
        return build_label_uniform(labels.labels)
    if r.p["embedding"] is not None:
        emb = np.loadtxt(r.p["embedding"], delimiter=",", ndmin=2)
    else:
        x = normalize_features(load_features(r.p["features"], n_nodes=g.n_nodes)) if r.p["features"] else None
        emb = spectral_embedding(g, min(r.p["embed_dim"], g.n_nodes - 1), x, r.p["feature_dim"])
    return build_knn_embedding(emb, r.p["k"])


def cmd_sample(r: _Run) -> dict:
    g = load_edge_list(r.p["graph"])
    labels = load_labels(r.p["labels"], n_nodes=g.n_nodes) if r.p["labels"] else None
    dist = _sample_distribution(r, g, labels)
    seed = r.cfg.seed

    def one(i: int):
        zeta = dist.draw(derive_rng(seed, "sample", i))
        return zeta, copy_graph(g, zeta)

    samples = ordered_map(one, range(r.p["n_samples"]), r.cfg.workers)
    lab = labels.labels if labels is not None and labels.is_complete else None
    stats = [summarize(gi, lab) for _, gi in samples]
    if r.p["write_samples"]:
        for i, (zeta, gi) in enumerate(samples):
            write_edge_list(gi, r.path(f"sample_{i:04d}.txt"))
            write_zeta(zeta, r.path(f"zeta_{i:04d}.csv"))
            r.emitted(f"sample_{i:04d}.txt")
            r.emitted(f"zeta_{i:04d}.csv")
    return {
        "distribution": dist.kind,
        "n_samples": len(samples),
        "observed": summarize(g, lab).as_dict(),
        "mean": mean_statistics(stats).as_dict(),
        "samples": [s.as_dict() for s in stats],
    }


def cmd_verify(r: _Run) -> dict:
    p, seed = r.p, r.cfg.seed
    common = dict(n_trials=p["trials"], samples_per_trial=p["samples_per_trial"], seed=seed, conditioned=p["conditioned"], n_cov_pairs=p["cov_pairs"], workers=r.cfg.workers)
    if p["model"] == "er":
        n = p["n"]
        choice = p["dist"]
        if choice == "cross":
            raise ConfigError(["dist: cross-class copying needs the sbm model"])
        dist = {
            "uniform": lambda: uniform_distribution(n),
            "within": lambda: uniform_distribution(n),
            "skewed": lambda: skewed_distribution(n, derive_rng(seed, "verify", "dist")),
            "identity": lambda: identity_distribution(n),
        }[choice]()
        report = verify_er_marginal(ERParams(n, p["theta"]), dist, **common)
    else:
        params = SBMParams.planted(p["sizes"], p["p_in"], p["p_out"])
        n = params.n_nodes
        dist = {
            "within": lambda: within_class_distribution(params.assignment),
            "cross": lambda: cross_class_distribution(params.assignment),
            "uniform": lambda: uniform_distribution(n),
            "skewed": lambda: skewed_distribution(n, derive_rng(seed, "verify", "dist")),
            "identity": lambda: identity_distribution(n),
        }[p["dist"]]()
        report = verify_sbm_marginal(params, dist=dist, **common)
    return report.as_dict()


def _gcn_config(p: dict) -> GcnConfig:
    return GcnConfig(p["hidden"], p["dropout"], p["epochs"], p["learning_rate"], p["weight_decay"])


def cmd_classify(r: _Run) -> dict:
    p, seed = r.p, r.cfg.seed
    g, labels, x = _node_inputs(r, True)
    split = LabelSplit.per_class(labels.labels, p["train_per_class"], derive_rng(seed, "split"), n_test=p["n_test"])
    if p["remove_test_edges"]:
        g = remove_node_edges(g, split.test)
    k = labels.n_classes
    if p["method"] == "gcn":
        table = gcn_classify(g, x, split, _gcn_config(p), seed, k)
    else:
        ens = EnsembleConfig(p["n_graphs"], p["weight_samples"], _gcn_config(p))
        table = bgcn_copy_classify(g, x, split, ens, seed, k, predict_on=p["predict_on"], workers=r.cfg.workers)
    _write_table(r.path("probabilities.csv"), ["node"] + [f"p{c}" for c in range(k)], _prob_rows(np.arange(g.n_nodes), table))
    r.emitted("probabilities.csv")
    return {
        "method": p["method"],
        "accuracy": accuracy(table, labels.labels, split.test),
        "n_g": p["n_graphs"] if p["method"] == "bgcn" else 0,
        "s": p["weight_samples"] if p["method"] == "bgcn" else 0,
        "seed": seed,
        "n_train": int(split.train.size),
        "n_test": int(split.test.size),
    }


def _read_targets(path: Path) -> np.ndarray:
    text = Path(path).read_text(encoding="utf-8")
    if text.lstrip().startswith("{"):
        return np.array([t["target"] for t in json.loads(text)["targets"]], dtype=np.int64)
    return np.array([int(tok) for tok in text.split() if not tok.startswith("#")], dtype=np.int64)


def cmd_attack(r: _Run) -> dict:
    p, seed = r.p, r.cfg.seed
    g = load_edge_list(p["graph"])
    labels = load_labels(p["labels"], n_nodes=g.n_nodes).labels
    if p["targets"] is not None:
        targets = _read_targets(p["targets"])
    else:
        train = (
            LabelSplit.per_class(labels, p["train_per_class"], derive_rng(seed, "split")).train
            if p["train_per_class"]
            else np.zeros(0, dtype=np.int64)
        )
        pool = np.setdiff1d(np.flatnonzero(labels >= 0), train)
        if pool.size < p["n_targets"]:
            raise ConfigError([f"n_targets: only {pool.size} eligible nodes"])
        targets = np.sort(derive_rng(seed, "attack", "targets").choice(pool, size=p["n_targets"], replace=False))
    res = dice_attack(g, labels, AttackSpec(targets, p["beta"], seed), derive_rng(seed, "attack", "dice"))
    write_edge_list(res.graph, r.path("attacked.txt"))
    dump_json(res.manifest(), r.path("manifest.json"))
    r.path("targets.txt").write_text("".join(f"{t}\n" for t in targets.tolist()), encoding="utf-8")
    for name in ("attacked.txt", "manifest.json", "targets.txt"):
        r.emitted(name)
    return {
        "n_targets": int(targets.size),
        "beta": p["beta"],
        "removed": sum(len(e.removed) for e in res.edits),
        "added": sum(len(e.added) for e in res.edits),
        "shortfall": sum(e.shortfall for e in res.edits),
        "n_edges": res.graph.n_edges,
    }


def cmd_defend(r: _Run) -> dict:
    p, seed = r.p, r.cfg.seed
    g, labels, x = _node_inputs(r, True)
    targets = _read_targets(p["targets"])
    masked = labels.labels.copy()
    masked[targets] = -1
    split = LabelSplit.per_class(masked, p["train_per_class"], derive_rng(seed, "split"))
    emb = np.loadtxt(p["embedding"], delimiter=",", ndmin=2) if p["embedding"] is not None else None
    cfg = DefenseConfig(p["n_graphs"], p["p_nearest"], p["embed_dim"], p["feature_dim"])
    res = defend_copying(g, x, split, targets, cfg, seed, _gcn_config(p), labels.n_classes, embedding=emb, workers=r.cfg.workers)
    k = labels.n_classes
    _write_table(r.path("defended.csv"), ["node"] + [f"p{c}" for c in range(k)], _prob_rows(targets, res.target_rows))
    r.emitted("defended.csv")
    pred = np.argmax(res.target_rows, axis=1)
    return {
        "targets": [{"node": int(v), "predicted": int(c), "softmax": [float(q) for q in row]} for v, c, row in zip(targets, pred, res.target_rows)],
        "accuracy_defended": accuracy(res.table, labels.labels, targets),
        "accuracy_attacked": accuracy(res.attacked_table, labels.labels, targets),
    }


def _bpr_config(p: dict) -> BprConfig:
    return BprConfig(p["dim"], p["lam_prop"], p["reg"], p["learning_rate"], p["epochs"], p["batch_size"])


def _metrics_payload(r: _Run, report: MetricsReport) -> dict:
    rows = report.per_user_rows()
    if rows:
        keys = list(rows[0])
        _write_table(r.path("per_user.csv"), keys, [[row[k] if k == "user" else repr(row[k]) for k in keys] for row in rows])
        r.emitted("per_user.csv")
    return {"metrics": report.summary(), "n_eval_users": int(report.users.size)}


def _load_split(r: _Run, n_users: int | None = None, n_items: int | None = None) -> tuple[BipartiteGraph, BipartiteGraph]:
    tr, tu, ti = load_interactions(r.p["train"])
    te, eu, ei = load_interactions(r.p["test"])
    nu = n_users or r.p["n_users"] or max(tu, eu)
    ni = n_items or r.p["n_items"] or max(ti, ei)
    return BipartiteGraph.from_pairs(nu, ni, tr), BipartiteGraph.from_pairs(nu, ni, te)


def cmd_recsys_train(r: _Run) -> dict:
    p, seed = r.p, r.cfg.seed
    pairs, _, _ = load_interactions(p["interactions"])
    kept, umap, imap = filter_interactions(pairs, p["threshold"])
    if not kept:
        raise ConfigError(["threshold: no interactions survive filtering"])
    full = BipartiteGraph.from_pairs(len(umap), len(imap), kept)
    train, val, test = split_interactions(full, derive_rng(seed, "recsys", "split"))
    for name, part in (("train.tsv", train), ("val.tsv", val), ("test.tsv", test)):
        write_interactions(part.pairs(), r.path(name))
        r.emitted(name)
    model = bpr_train(train, _bpr_config(p), derive_rng(seed, "recsys", "train"))
    save_bpr_model(model, r.path("model.json"))
    r.emitted("model.json")
    out = _metrics_payload(r, evaluate_scores(score_matrix(model, train), train, test))
    out.update(
        n_users=full.n_users,
        n_items=full.n_items,
        n_interactions=full.n_interactions,
        objective_first=model.objective_history[0] if model.objective_history else None,
        objective_last=model.objective_history[-1] if model.objective_history else None,
    )
    return out


def cmd_recsys_eval(r: _Run) -> dict:
    model = load_bpr_model(r.p["model"])
    train, test = _load_split(r, model.n_users, model.n_items)
    return _metrics_payload(r, evaluate_scores(score_matrix(model, train), train, test))


def cmd_recsys_ebpr(r: _Run) -> dict:
    model = load_bpr_model(r.p["model"])
    train, test = _load_split(r, model.n_users, model.n_items)
    spec = EnsembleSpec(r.p["n_graphs"], include_self=r.p["include_self"])
    report, _ = ebpr_evaluate(model, train, test, spec, r.cfg.seed, workers=r.cfg.workers)
    out = _metrics_payload(r, report)
    out["n_g"] = spec.n_graphs
    return out


def cmd_recsys_sgbpr(r: _Run) -> dict:
    p = r.p
    train, test = _load_split(r)
    spec = EnsembleSpec(p["n_graphs"], p["threshold_b"], p["include_self"], p["resample_eval"])
    res = sgbpr_train_evaluate(train, test, spec, _bpr_config(p), r.cfg.seed, workers=r.cfg.workers)
    save_bpr_model(res.model, r.path("model.json"))
    r.emitted("model.json")
    out = _metrics_payload(r, res.report)
    out.update(n_g=spec.n_graphs, b=spec.threshold, excluded_pairs=int(res.exclusion.nnz), skipped_users=res.skipped_users.tolist())
    return out


HANDLERS: dict[str, Callable[[_Run], dict]] = {
    "stats": cmd_stats,
    "sample": cmd_sample,
    "verify": cmd_verify,
    "classify": cmd_classify,
    "attack": cmd_attack,
    "defend": cmd_defend,
    "recsys.train": cmd_recsys_train,
    "recsys.eval": cmd_recsys_eval,
    "recsys.ebpr": cmd_recsys_ebpr,
    "recsys.sgbpr": cmd_recsys_sgbpr,
}


def run(subcommand: str, cfg: RunConfig) -> RunReport:
    """Execute one subcommand and write ``payload.json`` and ``report.json``."""
    cfg.out.mkdir(parents=True, exist_ok=True)
    r = _Run(cfg)
    t0 = time.perf_counter()
    payload = HANDLERS[subcommand](r)
    elapsed = time.perf_counter() - t0
    payload = {"subcommand": subcommand, "seed": cfg.seed, "result": payload, "artifacts": dict(sorted(r.artifacts.items()))}
    inputs = {k: blob_hash(v) for k, v in cfg.params.items() if isinstance(v, Path)}
    report = RunReport(cfg.echo(), inputs, {"wall_seconds": elapsed, "workers": cfg.workers}, payload)
    dump_json(payload, cfg.out / "payload.json")
    dump_json(report.as_dict(), cfg.out / "report.json")
    return report


# ---------------------------------------------------------------- parsing


def _add_params(parser: argparse.ArgumentParser, schema_name: str) -> None:
    for name, spec in SCHEMAS[schema_name].items():
        flag = "--" + name.replace("_", "-")
        kw: dict[str, Any] = {"dest": name, "default": None, "help": spec.help or None}
        if spec.kind == "bool":
            kw.update(nargs="?", const="true", metavar="BOOL")
        elif spec.kind == "choice":
            kw["choices"] = spec.choices
        parser.add_argument(flag, **kw)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="copygraph", description="Node-copying random graph toolkit.")
    parser.add_argument("--config", type=Path, help="JSON document with run parameters")
    parser.add_argument("--seed", help="master seed (unsigned 64-bit)")
    parser.add_argument("--out", help="output directory (default: copygraph-out)")
    parser.add_argument("--workers", help="worker threads (default: available cores)")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("stats", "sample", "verify", "classify", "attack", "defend"):
        _add_params(sub.add_parser(name), name)
    rec = sub.add_parser("recsys").add_subparsers(dest="recsys_command", required=True)
    for name in ("train", "ebpr", "sgbpr", "eval"):
        _add_params(rec.add_parser(name), f"recsys.{name}")
    return parser


def _int_flag(name: str, value: str, errors: list[str]) -> int | None:
    try:
        return int(value)
    except ValueError:
        errors.append(f"{name}: cannot interpret {value!r} as an integer")
        return None


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    sub = args.command if args.command != "recsys" else f"recsys.{args.recsys_command}"
    errors: list[str] = []
    raw: dict[str, Any] = {}
    if args.config is not None:
        try:
            doc = json.loads(args.config.read_text(encoding="utf-8"))
            if not isinstance(doc, dict):
                raise ValueError("top level must be an object")
            raw.update(doc)
        except (OSError, ValueError) as exc:
            errors.append(f"config: cannot read {args.config}: {exc}")
    for name in SCHEMAS[sub]:
        value = getattr(args, name, None)
        if value is not None:
            raw[name] = value
    if args.seed is not None:
        raw["seed"] = _int_flag("seed", args.seed, errors)
    if args.workers is not None:
        raw["workers"] = _int_flag("workers", args.workers, errors)
    if args.out is not None:
        raw["out"] = args.out
    try:
        if errors:
            raise ConfigError(errors)
        cfg = validate_config(raw, sub)
        report = run(sub, cfg)
    except ConfigError as exc:
        print(json.dumps({"error": "invalid configuration", "details": exc.errors}), file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - reported as a machine-readable error
        logger.debug("run failed", exc_info=True)
        print(json.dumps({"error": type(exc).__name__, "details": [str(exc)]}), file=sys.stderr)
        return EXIT_RUNTIME
    if sub == "verify" and not report.payload["result"]["pass"]:
        return EXIT_FAILED_CHECK
    return EXIT_OK
