"""Command-line interface.

Subcommands: validate, similarity, train, evaluate, benchmark, predict.
Every subcommand accepts ``--config <file.json>`` supplying defaults for
its flags; explicit flags override the config file.  Exit codes:
0 success, 2 invalid input (files, schema, paths, arguments),
3 numerical failure (divergence or non-finite objective).

Output artifacts (model files, caches, CSVs) are written atomically via
a temporary file and rename.
"""

import argparse
import json
import logging
import os
import sys
import tempfile

import numpy as np

from . import evaluate as evaluate_mod
from . import learner, metapath, synth
from .graph import (
    GraphFormatError,
    RatingMatrixError,
    SchemaError,
    content_hash,
    derive_ratings,
    load_graph,
)
from .model import Hyperparams, NumericalError, load_model, save_model

log = logging.getLogger("hetecf")

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NUMERICAL = 3

_INPUT_ERRORS = (
    GraphFormatError,
    SchemaError,
    RatingMatrixError,
    metapath.PathError,
    metapath.PathSpecError,
    FileNotFoundError,
    IsADirectoryError,
    PermissionError,
    json.JSONDecodeError,
    KeyError,
    ValueError,
)


class CliError(ValueError):
    """Bad command-line usage not caught by argparse."""


def _atomic_write_text(path, text):
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory)
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _load_config(path):
    if path is None:
        return {}
    with open(path, encoding="utf-8") as fh:
        cfg = json.load(fh)
    if not isinstance(cfg, dict):
        raise CliError(f"config {path!r} must hold a JSON object")
    return cfg


def _setting(args, cfg, name, default=None):
    """Flag value if given, else config value, else default."""
    value = getattr(args, name, None)
    if value is not None:
        return value
    return cfg.get(name, default)


def _require(args, cfg, name):
    value = _setting(args, cfg, name)
    if value is None:
        raise CliError(f"missing required setting {name!r} (flag or config)")
    return value


def _load_graph_from(args, cfg):
    return load_graph(
        _require(args, cfg, "nodes"),
        _require(args, cfg, "edges"),
        _require(args, cfg, "schema"),
    )


def _hyperparams(args, cfg, d=None):
    base = dict(cfg.get("hyperparams", {}))
    for key in ("d", "lam", "mu", "learn_rate", "inner_tol", "outer_tol",
                "max_inner", "max_outer", "seed"):
        value = getattr(args, key, None)
        if value is not None:
            base[key] = value
    if d is not None:
        base["d"] = d
    return Hyperparams(**base)


def _float_list(text):
    return [float(x) for x in str(text).split(",") if str(x).strip()]


def _int_list(text):
    return [int(x) for x in str(text).split(",") if str(x).strip()]


def cmd_validate(args):
    cfg = _load_config(args.config)
    graph = _load_graph_from(args, cfg)
    print(graph.summary())
    print(f"graph hash: {content_hash(graph)}")
    return EXIT_OK


def cmd_similarity(args):
    cfg = _load_config(args.config)
    graph = _load_graph_from(args, cfg)
    groups = metapath.load_path_spec(_require(args, cfg, "paths"), graph.schema)
    variant = _setting(args, cfg, "variant", "rowcol")
    cache_dir = _require(args, cfg, "cache_dir")
    os.makedirs(cache_dir, exist_ok=True)
    ghash = content_hash(graph)
    for group, paths in (
        ("UU", groups.user_user),
        ("II", groups.item_item),
        ("UI", groups.user_item),
    ):
        for k, path in enumerate(paths):
            sim, status = metapath.cached_similarity(
                graph, group, k, path, variant, cache_dir, ghash
            )
            fname = metapath.cache_file(cache_dir, group, k, path, variant)
            print(f"{status}\t{fname}\t{path.to_string()}\t({sim.matrix.nnz} entries)")
    return EXIT_OK


def _prepare_training(args, cfg):
    graph = _load_graph_from(args, cfg)
    groups = metapath.load_path_spec(_require(args, cfg, "paths"), graph.schema)
    target = metapath.parse_path(_require(args, cfg, "target_path"), graph.schema)
    variant = _setting(args, cfg, "variant", "rowcol")
    cache_dir = _setting(args, cfg, "cache_dir")
    ratings = derive_ratings(graph, target, variant=variant)
    rels = metapath.build_relation_set(graph, groups, variant=variant,
                                       cache_dir=cache_dir)
    return graph, groups, ratings, rels


def cmd_train(args):
    cfg = _load_config(args.config)
    graph, groups, ratings, rels = _prepare_training(args, cfg)
    hp = _hyperparams(args, cfg)
    optimizer = _setting(args, cfg, "optimizer", "batch")
    from .model import effective_mu

    log.info(
        "training: %d users, %d items, %d observed ratings, mu=%g, d=%d",
        ratings.n, ratings.m, ratings.nnz, effective_mu(hp, ratings), hp.d,
    )
    state = learner.train(ratings, rels, hp, optimizer=optimizer)
    model_out = _require(args, cfg, "model_out")
    save_model(model_out, state.model, state.weights, hp, content_hash(graph))
    print(
        f"trained {state.outer_iters} outer iterations "
        f"({state.factor_steps} factor steps, {state.weight_steps} weight steps), "
        f"objective {state.j_trace[0]:.6g} -> {state.j_value:.6g}, "
        f"converged={state.converged}"
    )
    print(f"model written to {model_out}")
    log_out = _setting(args, cfg, "log_out")
    if log_out:
        learner.write_training_log(log_out, state)
        print(f"training log written to {log_out}")
    weights_out = _setting(args, cfg, "weights_out")
    rows = evaluate_mod.report_weights(state.weights, groups)
    for group, path, value in rows:
        print(f"weight\t{group}\t{value:.4f}\t{path}")
    if weights_out:
        _atomic_write_text(weights_out, evaluate_mod.weights_csv(rows))
        print(f"weight report written to {weights_out}")
    return EXIT_OK


def cmd_evaluate(args):
    cfg = _load_config(args.config)
    _, _, ratings, rels = _prepare_training(args, cfg)
    methods = _setting(args, cfg, "methods", list(evaluate_mod.METHODS))
    if isinstance(methods, str):
        methods = [m.strip() for m in methods.split(",") if m.strip()]
    fractions = _setting(args, cfg, "fractions", [0.4, 0.6])
    if isinstance(fractions, str):
        fractions = _float_list(fractions)
    d_values = _setting(args, cfg, "d_values", [5, 10])
    if isinstance(d_values, str):
        d_values = _int_list(d_values)
    trials = int(_setting(args, cfg, "trials", 10))
    seed = int(_setting(args, cfg, "seed", 0))
    hp = _hyperparams(args, cfg)
    report = evaluate_mod.run_experiment(
        ratings,
        rels,
        methods=methods,
        fractions=fractions,
        d_values=d_values,
        trials=trials,
        seed=seed,
        hp=hp,
    )
    print(report.format_table())
    report_out = _setting(args, cfg, "report_out")
    if report_out:
        _atomic_write_text(report_out, report.to_csv())
        print(f"report written to {report_out}")
    return EXIT_OK


def cmd_benchmark(args):
    cfg = _load_config(args.config)
    d_values = _setting(args, cfg, "d_values", [5, 10, 20, 40])
    if isinstance(d_values, str):
        d_values = _int_list(d_values)
    sizes = _setting(args, cfg, "sizes", [1.0, 1.5, 2.0, 3.0])
    if isinstance(sizes, str):
        sizes = _float_list(sizes)
    repeats = int(_setting(args, cfg, "repeats", 3))
    scale = float(_setting(args, cfg, "base_scale", 1.0))
    seed = int(_setting(args, cfg, "seed", 0))
    spec = synth.SynthSpec(seed=seed).scaled(scale)
    rows = synth.scaling_benchmark(
        base_spec=spec, d_values=d_values, size_multipliers=sizes, repeats=repeats
    )
    csv_text = synth.timing_csv(rows)
    print(csv_text, end="")
    out = _setting(args, cfg, "out")
    if out:
        _atomic_write_text(out, csv_text)
        print(f"timings written to {out}")
    return EXIT_OK


def cmd_predict(args):
    cfg = _load_config(args.config)
    graph = _load_graph_from(args, cfg)
    model, _, header = load_model(_require(args, cfg, "model"))
    ghash = content_hash(graph)
    if header.get("graph_hash") and header["graph_hash"] != ghash:
        raise CliError(
            "model was trained on a different graph "
            f"(model hash {header['graph_hash'][:12]}..., current {ghash[:12]}...)"
        )
    user_id = _require(args, cfg, "user")
    node_type, index = graph.node_index(str(user_id))
    if node_type != graph.schema.user_type:
        raise CliError(
            f"node {user_id!r} has type {node_type!r}, not the user type "
            f"{graph.schema.user_type!r}"
        )
    item_ids = graph.node_ids[graph.schema.item_type]
    if model.n != graph.node_count(graph.schema.user_type) or model.m != len(item_ids):
        raise CliError(
            f"model shape ({model.n}, {model.m}) does not match graph "
            f"({graph.node_count(graph.schema.user_type)}, {len(item_ids)})"
        )
    k = int(_setting(args, cfg, "top_k", 10))
    if k < 1:
        raise CliError("--top-k must be positive")
    scores = model.predict_pairs(
        np.full(len(item_ids), index), np.arange(len(item_ids))
    )
    ranked = sorted(zip(item_ids, scores), key=lambda t: (-t[1], t[0]))
    for item_id, score in ranked[:k]:
        print(f"{item_id}\t{score:.10g}")
    return EXIT_OK


def _add_graph_flags(p):
    p.add_argument("--nodes", help="nodes file (<id>\\t<type> per line)")
    p.add_argument("--edges", help="edges file (<src>\\t<dst>\\t<relation>[\\t<w>])")
    p.add_argument("--schema", help="schema file (nodetype/relation directives)")


def _add_hp_flags(p):
    p.add_argument("--d", type=int, help="latent dimension")
    p.add_argument("--lam", type=float, help="ridge weight")
    p.add_argument("--mu", type=float,
                   help="relation-fit weight (default: observed density)")
    p.add_argument("--learn-rate", dest="learn_rate", type=float)
    p.add_argument("--inner-tol", dest="inner_tol", type=float)
    p.add_argument("--outer-tol", dest="outer_tol", type=float)
    p.add_argument("--max-inner", dest="max_inner", type=int)
    p.add_argument("--max-outer", dest="max_outer", type=int)
    p.add_argument("--seed", type=int)


def build_parser():
    parser = argparse.ArgumentParser(
        prog="hetecf",
        description="Heterogeneous-network collaborative filtering",
    )
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="parse and validate the graph files")
    p.add_argument("--config")
    _add_graph_flags(p)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("similarity", help="compute and cache similarity matrices")
    p.add_argument("--config")
    _add_graph_flags(p)
    p.add_argument("--paths", help="meta-path set file (UU:/II:/UI: lines)")
    p.add_argument("--variant", choices=["rowcol", "diagonal"])
    p.add_argument("--cache-dir", dest="cache_dir")
    p.set_defaults(func=cmd_similarity)

    p = sub.add_parser("train", help="train a model and write it to disk")
    p.add_argument("--config")
    _add_graph_flags(p)
    p.add_argument("--paths")
    p.add_argument("--target-path", dest="target_path",
                   help="user->item meta-path whose similarities are the ratings")
    p.add_argument("--variant", choices=["rowcol", "diagonal"])
    p.add_argument("--cache-dir", dest="cache_dir")
    p.add_argument("--model-out", dest="model_out")
    p.add_argument("--log-out", dest="log_out", help="training log CSV")
    p.add_argument("--weights-out", dest="weights_out", help="weight report CSV")
    p.add_argument("--optimizer", choices=["batch", "sgd"])
    _add_hp_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="run the hold-out protocol grid")
    p.add_argument("--config")
    _add_graph_flags(p)
    p.add_argument("--paths")
    p.add_argument("--target-path", dest="target_path")
    p.add_argument("--variant", choices=["rowcol", "diagonal"])
    p.add_argument("--cache-dir", dest="cache_dir")
    p.add_argument("--methods", help="comma list from: " + ",".join(evaluate_mod.METHODS))
    p.add_argument("--fractions", help="comma list of training fractions")
    p.add_argument("--d-values", dest="d_values", help="comma list of dimensions")
    p.add_argument("--trials", type=int)
    p.add_argument("--report-out", dest="report_out")
    _add_hp_flags(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("benchmark", help="training-time scaling benchmark")
    p.add_argument("--config")
    p.add_argument("--d-values", dest="d_values")
    p.add_argument("--sizes", help="comma list of size multipliers")
    p.add_argument("--repeats", type=int)
    p.add_argument("--base-scale", dest="base_scale", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_benchmark)

    p = sub.add_parser("predict", help="top-k items for one user")
    p.add_argument("--config")
    _add_graph_flags(p)
    p.add_argument("--model")
    p.add_argument("--user")
    p.add_argument("--top-k", dest="top_k", type=int)
    p.set_defaults(func=cmd_predict)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING
    if args.verbose == 1:
        level = logging.INFO
    elif args.verbose >= 2:
        level = logging.DEBUG
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except learner.DivergenceError as exc:
        log.error("training diverged: %s", exc)
        return EXIT_NUMERICAL
    except NumericalError as exc:
        log.error("numerical failure: %s", exc)
        return EXIT_NUMERICAL
    except CliError as exc:
        log.error("%s", exc)
        return EXIT_INPUT
    except _INPUT_ERRORS as exc:
        log.error("%s", exc)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
