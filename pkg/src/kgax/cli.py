"""Batch command surface: prepare, train, eval, recommend, gradcheck,
gridsearch.

Configuration is flat key=value text (see ``ModelConfig``); ``--set`` flags
override file values, ``--seed`` overrides both.  Exit codes are stable:
0 success, 2 configuration, 3 data, 4 numeric divergence, 5 failed
gradient check.
"""

from __future__ import annotations

import argparse
import itertools
import json
import sys
from pathlib import Path

import numpy as np

from .config import build_config, parse_config_lines
from .data import load_dataset
from .errors import ConfigError, DataError, DivergenceError, KgaxError
from .evaluation import evaluate
from .fixtures import combined_loss_fn, gradcheck_fixture
from .model import load_model, recommend_topk, save_model, train
from .numeric import finite_diff_gradcheck

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_DIVERGED = 4
EXIT_GRADCHECK = 5

# Sweep axes used when the config file does not override them, via
# grid_<key> entries (comma-separated values).
DEFAULT_GRID = {
    "batch_size": (128, 256, 512, 1024),
    "dim": (8, 16, 32, 64),
    "lr": (1e-6, 1e-5, 1e-4, 1e-3),
    "neighbor_cap": (10, 20, 25, 50),
    "depth": (1, 2, 3),
}
GRID_KEYS = tuple(DEFAULT_GRID)


def build_parser():
    parser = argparse.ArgumentParser(
        prog="kgax",
        description="Knowledge-graph attention recommender, batch pipeline.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, data=False, out=False, model=False):
        p.add_argument("--config", help="key=value config file")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override one config key (repeatable)")
        p.add_argument("--seed", type=int, help="override the config seed")
        if data:
            p.add_argument("--data-dir", required=True,
                           help="directory with interactions.tsv etc.")
        if out:
            p.add_argument("--out", required=True, help="output directory")
        if model:
            p.add_argument("--model", required=True, help="trained model file")

    p = sub.add_parser("prepare", help="build and validate the graph")
    common(p, data=True, out=True)

    p = sub.add_parser("train", help="train and write model.kgax + epochs.csv")
    common(p, data=True, out=True)

    p = sub.add_parser("eval", help="evaluate a trained model")
    common(p, data=True, out=True, model=True)
    p.add_argument("--k", default="5,10,20,50",
                   help="comma-separated cutoff list")

    p = sub.add_parser("recommend", help="print top-K items for one user")
    common(p, data=True, model=True)
    p.add_argument("--user", required=True, help="raw user id from the data")
    p.add_argument("--k", default="10", help="number of items")

    p = sub.add_parser("gradcheck", help="finite-difference the built-in fixture")
    p.add_argument("--tol", type=float, default=1e-5,
                   help="maximum relative error accepted")

    p = sub.add_parser("gridsearch", help="sweep the configured axes")
    common(p, data=True, out=True)
    p.add_argument("--max-cells", type=int, default=32,
                   help="refuse sweeps larger than this many cells")
    return parser


def resolve_config(args):
    """defaults -> config file -> --set overrides -> --seed; returns
    (ModelConfig, extra keys dict) with grid_* keys allowed through."""
    raw, extra = {}, {}
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        raw, extra = parse_config_lines(
            path.read_text(encoding="utf-8"), allow_extra=("grid_*",)
        )
    for item in getattr(args, "set", []):
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, _, value = item.partition("=")
        key = key.strip()
        if key.startswith("grid_"):
            extra[key] = value.strip()
        else:
            raw[key] = value.strip()
    if getattr(args, "seed", None) is not None:
        raw["seed"] = str(args.seed)
    return build_config(raw), extra


def parse_k_list(text):
    try:
        ks = tuple(int(p) for p in str(text).split(","))
    except ValueError:
        raise ConfigError(f"--k expects comma-separated integers, got {text!r}") from None
    if not ks or any(k < 1 for k in ks):
        raise ConfigError(f"--k values must be >= 1, got {text!r}")
    return ks


def _config_comment(config):
    return "".join(f"# {line}\n" for line in config.to_text().splitlines())


def _write_epochs_csv(path, config, rows):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(_config_comment(config))
        fh.write("epoch,rec_loss,kg_loss,val_recall@20,elapsed_ms\n")
        for epoch, rec_loss, kg_loss, val, elapsed in rows:
            fh.write(f"{epoch},{rec_loss!r},{kg_loss!r},{val!r},{elapsed:.3f}\n")


def cmd_prepare(args):
    config, _ = resolve_config(args)
    data = load_dataset(args.data_dir, config.seed, fusion=config.fusion,
                        inverse_relations=config.inverse_relations)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    stats = {
        "entities": data.graph.entity_count,
        "relations": data.graph.relation_count,
        "triples": int(data.graph.triples.shape[0]),
        "users": data.dataset.n_users,
        "items": data.dataset.n_items,
        "aux_entities": len(data.aux),
        "train_pairs": int(data.dataset.train_pairs().shape[0]),
        "seed": config.seed,
        "config": config.echo_dict(),
    }
    (out / "stats.json").write_text(
        json.dumps(stats, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    print(f"graph ok: {stats['entities']} entities, {stats['relations']} "
          f"relations, {stats['triples']} triples")
    return EXIT_OK


def cmd_train(args):
    config, _ = resolve_config(args)
    data = load_dataset(args.data_dir, config.seed, fusion=config.fusion,
                        inverse_relations=config.inverse_relations)
    model, rows = train(data, config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_model(model, out / "model.kgax")
    _write_epochs_csv(out / "epochs.csv", config, rows)
    best = max((r[3] for r in rows), default=0.0)
    print(f"trained {len(rows)} epochs; best val recall@20 {best:.4f}; "
          f"model at {out / 'model.kgax'}")
    return EXIT_OK


def cmd_eval(args):
    # eval runs under the model's own embedded config; flags cannot change it
    model = load_model(args.model)
    data = load_dataset(args.data_dir, model.config.seed,
                        fusion=model.config.fusion,
                        inverse_relations=model.config.inverse_relations)
    ks = parse_k_list(args.k)
    report = evaluate(model, data, ks=ks)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "eval.csv").write_text(
        _config_comment(model.config) + report.to_csv_text(), encoding="utf-8"
    )
    (out / "eval.json").write_text(report.to_json_text(), encoding="utf-8")
    for name in sorted(report.means):
        print(f"{name}\t{report.means[name]:.6f}")
    return EXIT_OK


def cmd_recommend(args):
    model = load_model(args.model)
    data = load_dataset(args.data_dir, model.config.seed,
                        fusion=model.config.fusion,
                        inverse_relations=model.config.inverse_relations)
    ks = parse_k_list(args.k)
    if len(ks) != 1:
        raise ConfigError("recommend takes a single --k value")
    if args.user not in data.users:
        raise DataError(f"unknown user {args.user!r}")
    u = data.users.index[args.user]
    for item, score in recommend_topk(model, data, u, ks[0]):
        print(f"{data.items.names[item]}\t{score!r}")
    return EXIT_OK


def cmd_gradcheck(args):
    fx = gradcheck_fixture()
    report = finite_diff_gradcheck(
        combined_loss_fn(fx), fx.params, tol=args.tol
    )
    for line in report.summary_lines():
        print(line)
    return EXIT_OK if report.passed else EXIT_GRADCHECK


def _grid_axes(extra):
    """Sweep axes from grid_* config keys, falling back to the defaults."""
    axes = {}
    for key in GRID_KEYS:
        raw = extra.get(f"grid_{key}")
        if raw is None:
            axes[key] = DEFAULT_GRID[key]
            continue
        parts = [p.strip() for p in str(raw).split(",") if p.strip()]
        if not parts:
            raise ConfigError(f"config key grid_{key!s}: empty axis")
        try:
            if key in ("lr",):
                axes[key] = tuple(float(p) for p in parts)
            else:
                axes[key] = tuple(int(p) for p in parts)
        except ValueError:
            raise ConfigError(
                f"config key grid_{key}: bad value list {raw!r}"
            ) from None
    unknown = [k for k in extra if k.startswith("grid_") and
               k[len("grid_"):] not in GRID_KEYS]
    if unknown:
        raise ConfigError(f"unknown grid axis keys: {', '.join(sorted(unknown))}")
    return axes


def _layer_dims_for(dim, depth):
    """Halve the width per layer, floored at 1: dim 64 depth 2 -> (32, 16)."""
    return tuple(max(dim // (2 ** (i + 1)), 1) for i in range(depth))


def cmd_gridsearch(args):
    from dataclasses import replace

    config, extra = resolve_config(args)
    axes = _grid_axes(extra)
    names = list(axes)
    cells = list(itertools.product(*(axes[n] for n in names)))
    if len(cells) > args.max_cells:
        raise ConfigError(
            f"grid has {len(cells)} cells, over the --max-cells limit of "
            f"{args.max_cells}; shrink the grid_* axes or raise the limit"
        )
    data = load_dataset(args.data_dir, config.seed, fusion=config.fusion,
                        inverse_relations=config.inverse_relations)

    results = []
    for cell_idx, values in enumerate(cells):
        cell = dict(zip(names, values))
        cell_seed = int(
            np.random.SeedSequence([config.seed, cell_idx]).generate_state(1)[0]
        )
        cell_config = replace(
            config,
            batch_size=cell["batch_size"],
            dim=cell["dim"],
            lr=cell["lr"],
            neighbor_cap=cell["neighbor_cap"],
            layer_dims=_layer_dims_for(cell["dim"], cell["depth"]),
            seed=cell_seed,
        )
        cell_config.validate()
        _, rows = train(data, cell_config)
        val = max((r[3] for r in rows), default=0.0)
        results.append((cell_idx, cell, cell_seed, val))

    best_idx = max(
        range(len(results)),
        key=lambda i: (results[i][3], -results[i][1]["lr"]),
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with (out / "grid.csv").open("w", encoding="utf-8") as fh:
        fh.write(_config_comment(config))
        fh.write("cell,%s,cell_seed,val_recall@20,best\n" % ",".join(names))
        for cell_idx, cell, cell_seed, val in results:
            flat = ",".join(repr(cell[n]) if isinstance(cell[n], float)
                            else str(cell[n]) for n in names)
            fh.write(f"{cell_idx},{flat},{cell_seed},{val!r},"
                     f"{1 if cell_idx == best_idx else 0}\n")
    best = results[best_idx]
    print(f"best cell {best[0]}: {best[1]} val recall@20 {best[3]:.4f}")
    return EXIT_OK


COMMANDS = {
    "prepare": cmd_prepare,
    "train": cmd_train,
    "eval": cmd_eval,
    "recommend": cmd_recommend,
    "gradcheck": cmd_gradcheck,
    "gridsearch": cmd_gridsearch,
}


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergenceError as err:
        print(f"diverged: {err}", file=sys.stderr)
        return EXIT_DIVERGED
    except DataError as err:
        print(f"data error: {err}", file=sys.stderr)
        return EXIT_DATA
    except KgaxError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
