"""Run configuration: per-subcommand schema, defaults and validation.

Precedence, lowest first: schema defaults, ``COPYGRAPH_SEED`` (seed only),
the JSON config document, command-line flags.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable

from copygraph.rng import default_seed, resolve_workers


class ConfigError(ValueError):
    def __init__(self, errors: list[str]):
        super().__init__("; ".join(errors))
        self.errors = errors


@dataclass(frozen=True)
class Param:
    kind: str  # int, float, bool, str, path, ints, choice
    default: Any = None
    required: bool = False
    choices: tuple[str, ...] = ()
    check: Callable[[Any], str | None] | None = None
    help: str = ""


def _positive(v):
    return None if v >= 1 else "must be >= 1"


def _nonneg(v):
    return None if v >= 0 else "must be >= 0"


def _prob(v):
    return None if 0 <= v <= 1 else "must lie in [0, 1]"


def _dropout(v):
    return None if 0 <= v < 1 else "must lie in [0, 1)"


def _pos_real(v):
    return None if v > 0 else "must be > 0"


GCN_PARAMS = {
    "hidden": Param("int", 16, check=_positive),
    "dropout": Param("float", 0.5, check=_dropout),
    "epochs": Param("int", 200, check=_nonneg),
    "learning_rate": Param("float", 0.01, check=_pos_real),
    "weight_decay": Param("float", 5e-4, check=_nonneg),
}

BPR_PARAMS = {
    "dim": Param("int", 32, check=_positive),
    "lam_prop": Param("float", 0.5, check=_prob),
    "reg": Param("float", 1e-4, check=_nonneg),
    "learning_rate": Param("float", 0.05, check=_pos_real),
    "epochs": Param("int", 30, check=_nonneg),
    "batch_size": Param("int", 256, check=_positive),
}

SPLIT_PARAMS = {
    "train": Param("path", required=True, help="training interactions (TSV user, item)"),
    "test": Param("path", required=True, help="test interactions (TSV user, item)"),
    "n_users": Param("int", None, check=_positive, help="user count (default: max id + 1)"),
    "n_items": Param("int", None, check=_positive, help="item count (default: max id + 1)"),
}

SCHEMAS: dict[str, dict[str, Param]] = {
    "stats": {
        "graph": Param("path", required=True),
        "labels": Param("path"),
        "directed": Param("bool", False),
        "lcc": Param("bool", False, help="restrict to the largest connected component"),
    },
    "sample": {
        "graph": Param("path", required=True),
        "distribution": Param("choice", "knn", choices=("knn", "label", "identity", "file")),
        "k": Param("int", 5, check=_positive),
        "labels": Param("path"),
        "features": Param("path"),
        "embedding": Param("path", help="dense CSV embedding; spectral when absent"),
        "embed_dim": Param("int", 16, check=_positive),
        "feature_dim": Param("int", 16, check=_nonneg),
        "distribution_file": Param("path"),
        "n_samples": Param("int", 1, check=_positive),
        "write_samples": Param("bool", True),
    },
    "verify": {
        "model": Param("choice", "er", choices=("er", "sbm")),
        "n": Param("int", 200, check=_positive),
        "theta": Param("float", 0.1, check=_prob),
        "sizes": Param("ints", [100, 100]),
        "p_in": Param("float", 0.2, check=_prob),
        "p_out": Param("float", 0.02, check=_prob),
        "dist": Param("choice", "skewed", choices=("uniform", "skewed", "within", "cross", "identity")),
        "trials": Param("int", 200, check=_positive),
        "samples_per_trial": Param("int", 1, check=_positive),
        "conditioned": Param("bool", False),
        "cov_pairs": Param("int", 2000, check=_positive),
    },
    "classify": {
        "graph": Param("path", required=True),
        "features": Param("path", required=True),
        "labels": Param("path", required=True),
        "method": Param("choice", "bgcn", choices=("gcn", "bgcn")),
        "train_per_class": Param("int", 20, check=_positive),
        "n_test": Param("int", 1000, check=_positive),
        "n_graphs": Param("int", 10, check=_positive),
        "weight_samples": Param("int", 10, check=_positive),
        "predict_on": Param("choice", "observed", choices=("observed", "sampled")),
        "remove_test_edges": Param("bool", False),
        **GCN_PARAMS,
    },
    "attack": {
        "graph": Param("path", required=True),
        "labels": Param("path", required=True),
        "targets": Param("path", help="one node id per line; random when absent"),
        "n_targets": Param("int", 40, check=_positive),
        "train_per_class": Param("int", 20, check=_nonneg),
        "beta": Param("float", 0.5, check=_prob),
    },
    "defend": {
        "graph": Param("path", required=True),
        "features": Param("path", required=True),
        "labels": Param("path", required=True),
        "targets": Param("path", required=True, help="target ids, one per line, or an attack manifest"),
        "train_per_class": Param("int", 20, check=_positive),
        "n_graphs": Param("int", 10, check=_positive),
        "p_nearest": Param("int", 20, check=_positive),
        "embed_dim": Param("int", 16, check=_positive),
        "feature_dim": Param("int", 16, check=_nonneg),
        "embedding": Param("path"),
        **GCN_PARAMS,
    },
    "recsys.train": {
        "interactions": Param("path", required=True),
        "threshold": Param("int", 1, check=_positive, help="minimum interactions per user and item"),
        **BPR_PARAMS,
    },
    "recsys.eval": {"model": Param("path", required=True), **SPLIT_PARAMS},
    "recsys.ebpr": {
        "model": Param("path", required=True),
        "n_graphs": Param("int", 10, check=_positive),
        "include_self": Param("bool", True),
        **SPLIT_PARAMS,
    },
    "recsys.sgbpr": {
        "n_graphs": Param("int", 10, check=_positive),
        "threshold_b": Param("float", 0.1, check=_pos_real),
        "include_self": Param("bool", True),
        "resample_eval": Param("bool", False),
        **SPLIT_PARAMS,
        **BPR_PARAMS,
    },
}

GLOBAL_KEYS = ("seed", "workers", "out")


@dataclass(frozen=True)
class RunConfig:
    subcommand: str
    params: dict[str, Any]
    seed: int
    workers: int
    out: Path

    def echo(self) -> dict:
        p = {k: (str(v) if isinstance(v, Path) else v) for k, v in self.params.items()}
        return {"subcommand": self.subcommand, "seed": self.seed, "params": p}


def _coerce(name: str, spec: Param, value: Any) -> tuple[Any, str | None]:
    if value is None:
        return None, None
    try:
        if spec.kind == "int":
            if isinstance(value, bool) or (isinstance(value, float) and not value.is_integer()):
                raise TypeError
            v = int(value)
        elif spec.kind == "float":
            if isinstance(value, bool):
                raise TypeError
            v = float(value)
        elif spec.kind == "bool":
            if isinstance(value, str):
                if value.lower() not in ("true", "false", "1", "0", "yes", "no"):
                    raise TypeError
                v = value.lower() in ("true", "1", "yes")
            elif isinstance(value, bool):
                v = value
            else:
                raise TypeError
        elif spec.kind == "ints":
            items = value.split(",") if isinstance(value, str) else list(value)
            v = [int(x) for x in items]
        elif spec.kind == "path":
            v = Path(value)
            if not v.exists():
                return None, f"{name}: path {v} does not exist"
        elif spec.kind == "choice":
            v = str(value)
            if v not in spec.choices:
                return None, f"{name}: {v!r} is not one of {', '.join(spec.choices)}"
        else:
            v = str(value)
    except (TypeError, ValueError):
        return None, f"{name}: cannot interpret {value!r} as {spec.kind}"
    if spec.check is not None:
        msg = spec.check(v)
        if msg:
            return None, f"{name}: {msg} (got {v!r})"
    return v, None


def _is_u64(v: Any) -> bool:
    return isinstance(v, int) and not isinstance(v, bool) and 0 <= v < 2**64


def validate_config(raw: dict[str, Any], subcommand: str) -> RunConfig:
    """Fill defaults and check every field; all problems are reported together."""
    if subcommand not in SCHEMAS:
        raise ConfigError([f"unknown subcommand {subcommand!r}"])
    schema = SCHEMAS[subcommand]
    errors = []
    for key in raw:
        if key not in schema and key not in GLOBAL_KEYS:
            errors.append(f"unknown key {key!r}")
    params = {}
    for name, spec in schema.items():
        value = raw.get(name)
        if value is None:
            if spec.required:
                errors.append(f"{name}: required")
            params[name] = spec.default
            continue
        v, err = _coerce(name, spec, value)
        if err:
            errors.append(err)
        params[name] = v
    seed = raw.get("seed")
    if seed is None:
        try:
            seed = default_seed()
        except ValueError as exc:
            errors.append(f"seed: {exc}")
    elif not _is_u64(seed):
        errors.append(f"seed: must be an unsigned 64-bit integer (got {seed!r})")
    workers = raw.get("workers")
    if workers is not None:
        if isinstance(workers, bool) or not isinstance(workers, int) or workers < 1:
            errors.append(f"workers: must be >= 1 (got {workers!r})")
            workers = 1
    out = raw.get("out") or "copygraph-out"
    if errors:
        raise ConfigError(errors)
    return RunConfig(subcommand, params, int(seed), resolve_workers(workers), Path(out))
