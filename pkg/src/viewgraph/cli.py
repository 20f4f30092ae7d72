"""Command line entry point.

Subcommands mirror the pipeline stages (split, extract, embed, build, lp,
train, predict, gen-negatives, eval) plus ``run`` for the whole pipeline
driven by one config file. Remote backends read the API key from the
VIEWGRAPH_API_KEY environment variable.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import __version__
from . import gnn as gnn_mod
from . import label_prop as lp_mod
from . import novelty as novelty_mod
from .dataset import load_corpus, load_viewpoints, save_corpus, save_viewpoints, split_corpus
from .embedding import embed, load_embeddings, save_embeddings
from .graph import GraphConfig, build_graph, load_graph, save_graph
from .llm import extract_corpus
from .metrics import format_table, normed_cost
from .pipeline import (
    ConfigError,
    RunConfig,
    StageError,
    evaluate_predictions,
    make_backend,
    make_provider,
    run_pipeline,
    validate_config,
)


def _load_config(args) -> RunConfig:
    config = validate_config(args.config) if args.config else RunConfig()
    if getattr(args, "seed", None) is not None:
        config.seed = args.seed
    return config


def cmd_split(args):
    corpus = load_corpus(args.infile)
    fractions = tuple(float(x) for x in args.fractions.split(","))
    result = split_corpus(corpus, fractions, args.seed if args.seed is not None else 0)
    save_corpus(result, args.out)
    if not args.quiet:
        sizes = {s: len(result.split_ideas(s)) for s in ("train", "validation", "test")}
        print(json.dumps(sizes))


def cmd_extract(args):
    config = _load_config(args)
    if args.backend:
        config.llm.backend = args.backend
    relations = args.relations or config.llm.relations
    corpus = load_corpus(args.infile)
    backend = make_backend(config.llm, config.seed)
    records, summary = extract_corpus(corpus.ideas, backend, relations=relations)
    save_viewpoints(records, args.out)
    if not args.quiet:
        print(json.dumps(summary))


def cmd_embed(args):
    config = _load_config(args)
    if args.provider:
        config.embedding.provider = args.provider
    if args.dim:
        config.embedding.dimension = args.dim
    records = load_viewpoints(args.infile)
    texts = [v for r in records for v in r.viewpoints]
    ids = [f"{r.idea_id}:{j}" for r in records for j in range(len(r.viewpoints))]
    matrix = embed(texts, make_provider(config.embedding))
    save_embeddings(matrix, ids, args.out)
    if not args.quiet:
        print(json.dumps({"count": len(matrix), "dimension": matrix.dimension}))


def cmd_build(args):
    records = load_viewpoints(args.viewpoints)
    matrix, _ = load_embeddings(args.embeddings)
    config = GraphConfig(intra_k=args.k, inter_m=args.m, weight_floor=args.weight_floor)
    graph = build_graph(records, matrix, config, hybrid=args.hybrid)
    save_graph(graph, args.out)
    if not args.quiet:
        print(json.dumps({"nodes": len(graph), "edges": len(graph.edges)}))


def cmd_lp(args):
    corpus = load_corpus(args.corpus)
    graph = load_graph(args.graph)
    config = lp_mod.LpConfig(max_iters=args.max_iters, early_stop=args.early_stop)
    predictions = lp_mod.run(graph, corpus, config, split=args.split)
    lp_mod.save_predictions(predictions, corpus, args.out)
    if not args.quiet:
        print(json.dumps({"predicted": len(predictions), "unreached": sum(p.unreached for p in predictions)}))


def _load_training_inputs(args, config: RunConfig):
    corpus = load_corpus(args.corpus)
    graph = load_graph(args.graph)
    matrix, _ = load_embeddings(args.embeddings)
    negatives = []
    if getattr(args, "negatives", None):
        negatives = novelty_mod.load_negatives(args.negatives)
        graph, matrix = novelty_mod.inject_negatives(graph, matrix, negatives, corpus)
    return corpus, graph, matrix, negatives


def cmd_train(args):
    config = _load_config(args)
    corpus, graph, matrix, negatives = _load_training_inputs(args, config)
    gnn_config = gnn_mod.GnnConfig(
        layers=config.gnn.layers,
        hidden_dim=args.hidden or config.gnn.hidden_dim,
        batch_size=args.batch_size or config.gnn.batch_size,
        max_epochs=args.epochs or config.gnn.max_epochs,
        learning_rate=args.lr or config.gnn.learning_rate,
        seed=config.seed,
        class_weighting=config.gnn.class_weighting,
    )
    result = gnn_mod.train(gnn_config, graph, matrix, corpus, negatives or None)
    gnn_mod.save_model(
        result.model,
        args.out,
        gnn_config,
        corpus.label_set.labels,
        epoch=result.best_epoch,
        validation_score=result.best_val_f1,
    )
    if args.log:
        Path(args.log).write_text(json.dumps(result.log), encoding="utf-8")
    if not args.quiet:
        last = result.log[-1]
        print(json.dumps({"epochs": len(result.log), "final_loss": last["loss"], "best_val_f1": result.best_val_f1}))


def cmd_predict(args):
    config = _load_config(args)
    corpus, graph, matrix, _ = _load_training_inputs(args, config)
    model, _header = gnn_mod.load_model(args.model)
    predictions = gnn_mod.predict(model, graph, matrix, corpus, split=args.split)
    gnn_mod.save_predictions(predictions, corpus, args.out)
    if not args.quiet:
        print(json.dumps({"predicted": len(predictions)}))


def cmd_gen_negatives(args):
    corpus = load_corpus(args.corpus)
    graph = load_graph(args.graph)
    seed = args.seed if args.seed is not None else 0
    samples, fallbacks = novelty_mod.generate_negatives(
        corpus,
        graph,
        count=args.count,
        threshold=args.threshold,
        swap_fraction=args.swap_fraction,
        seed=seed,
    )
    train, rest = novelty_mod.select_training_negatives(samples, args.train_subset, seed=seed)
    novelty_mod.save_negatives(train, args.out)
    if args.holdout_out:
        novelty_mod.save_negatives(rest, args.holdout_out)
    if not args.quiet:
        print(json.dumps({"generated": len(samples), "training": len(train), "fallbacks": fallbacks}))


def cmd_eval(args):
    corpus = load_corpus(args.corpus)
    report = evaluate_predictions(args.pred, corpus)
    payload = report.to_dict()
    if args.costs:
        costs = json.loads(Path(args.costs).read_text(encoding="utf-8"))
        payload["normed_costs"] = normed_cost(costs)
    Path(args.out).write_text(json.dumps(payload), encoding="utf-8")
    if not args.quiet:
        print(format_table({"predictions": report}))


def cmd_run(args):
    config = _load_config(args)
    run_pipeline(config, force=args.force, quiet=args.quiet)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file")
    common.add_argument("--seed", type=int, default=None, help="global random seed")
    common.add_argument("--force", action="store_true", help="ignore cached stage outputs")
    common.add_argument("--quiet", action="store_true", help="suppress progress output")

    parser = argparse.ArgumentParser(prog="viewgraph", description=__doc__)
    parser.add_argument("--version", action="version", version=f"viewgraph {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("split", parents=[common], help="assign train/validation/test tags")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--fractions", default="0.7,0.1,0.2")
    p.set_defaults(fn=cmd_split)

    p = sub.add_parser("extract", parents=[common], help="extract viewpoints via the LLM backend")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--backend", choices=["mock", "remote"])
    p.add_argument("--relations", action="store_true", help="also extract viewpoint relations")
    p.set_defaults(fn=cmd_extract)

    p = sub.add_parser("embed", parents=[common], help="embed viewpoint texts")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--provider", choices=["stub", "remote"])
    p.add_argument("--dim", type=int, default=None)
    p.set_defaults(fn=cmd_embed)

    p = sub.add_parser("build", parents=[common], help="build the viewpoint graph")
    p.add_argument("--viewpoints", required=True)
    p.add_argument("--embeddings", required=True)
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--m", type=int, default=10)
    p.add_argument("--weight-floor", type=float, default=0.0)
    p.add_argument("--hybrid", action="store_true", help="intra edges from extracted relations")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_build)

    p = sub.add_parser("lp", parents=[common], help="label propagation predictions")
    p.add_argument("--graph", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--max-iters", type=int, default=5)
    p.add_argument("--early-stop", action=argparse.BooleanOptionalAction, default=True)
    p.add_argument("--split", default="test")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_lp)

    p = sub.add_parser("train", parents=[common], help="train the GNN engine")
    p.add_argument("--graph", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--embeddings", required=True)
    p.add_argument("--negatives", default=None)
    p.add_argument("--hidden", type=int, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--log", default=None, help="write the per-epoch training log here")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("predict", parents=[common], help="predict with a trained model")
    p.add_argument("--model", required=True)
    p.add_argument("--graph", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--embeddings", required=True)
    p.add_argument("--negatives", default=None, help="re-inject training negatives")
    p.add_argument("--split", default="test")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_predict)

    p = sub.add_parser("gen-negatives", parents=[common], help="construct plagiarized negatives")
    p.add_argument("--corpus", required=True)
    p.add_argument("--graph", required=True)
    p.add_argument("--count", type=int, default=80)
    p.add_argument("--train-subset", type=int, default=10)
    p.add_argument("--threshold", type=int, default=1)
    p.add_argument("--swap-fraction", type=float, default=0.5)
    p.add_argument("--out", required=True)
    p.add_argument("--holdout-out", default=None)
    p.set_defaults(fn=cmd_gen_negatives)

    p = sub.add_parser("eval", parents=[common], help="score predictions against labels")
    p.add_argument("--pred", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--costs", default=None, help="JSON map of method -> avg cost for normed costs")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("run", parents=[common], help="run the whole pipeline from a config file")
    p.set_defaults(fn=cmd_run)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args.fn(args)
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ConfigError, ValueError, FileNotFoundError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
