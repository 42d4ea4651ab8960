"""Command line front end wiring data, preprocessing, training and evaluation.

A dataset directory holds ``train.txt`` (required), ``test.txt``, ``kg.txt``
and ``align.txt``. Missing ``kg.txt`` means an interaction-only graph;
missing ``align.txt`` falls back to the common benchmark convention that
entity ids 0..n-1 mirror item ids. Every run directory gets a
``config.json`` snapshot with the resolved options, seeds and library
versions, so runs are reproducible from the directory alone.
"""

import argparse
import json
import os
import sys
import time

import numpy as np

from . import __version__, _kernels, data, evaluate as eval_mod, explain as explain_mod
from . import model as model_mod
from . import ppr as ppr_mod
from . import subgraph, training


def _load_dataset(data_dir, need_test=False):
    train_path = os.path.join(data_dir, "train.txt")
    if not os.path.exists(train_path):
        raise FileNotFoundError(f"{train_path} not found")
    train = data.load_interactions(train_path)
    test = None
    test_path = os.path.join(data_dir, "test.txt")
    if os.path.exists(test_path):
        test = data.load_interactions(test_path)
    elif need_test:
        raise FileNotFoundError(f"{test_path} not found")
    # unify id ranges across the two sides
    user_count = max(train.user_count, test.user_count if test else 0)
    item_count = max(train.item_count, test.item_count if test else 0)
    train = data.InteractionSet(user_count, item_count, train.pairs)
    if test is not None:
        test = data.InteractionSet(user_count, item_count, test.pairs)

    kg_path = os.path.join(data_dir, "kg.txt")
    kg = data.load_kg_triples(kg_path) if os.path.exists(kg_path) else data.TripleSet(0, 0, [])
    align_path = os.path.join(data_dir, "align.txt")
    if os.path.exists(align_path):
        alignment = data.load_alignment(align_path)
    else:
        alignment = [(i, i) for i in range(min(item_count, kg.entity_count))]
    return train, test, kg, alignment


def _build_ckg(data_dir, need_test=False):
    train, test, kg, alignment = _load_dataset(data_dir, need_test=need_test)
    return data.build_ckg(train, kg, alignment), train, test


def _write_config(out_dir, args, extra=None):
    os.makedirs(out_dir, exist_ok=True)
    doc = {k: v for k, v in sorted(vars(args).items()) if k != "func"}
    doc["kgrec_version"] = __version__
    doc["numpy_version"] = np.__version__
    doc["kernel_backend"] = _kernels.BACKEND
    if extra:
        doc.update(extra)
    with open(os.path.join(out_dir, "config.json"), "w") as f:
        json.dump(doc, f, indent=2, sort_keys=True)


def _load_ppr(args, ckg, out_dir=None):
    path = getattr(args, "ppr", None)
    if path and os.path.exists(path):
        store = ppr_mod.PPRStore.load(path)
        if store.scores.shape != (ckg.n_users, ckg.node_count):
            raise ValueError(f"{path}: cached scores shaped {store.scores.shape}, "
                             f"graph needs {(ckg.n_users, ckg.node_count)}")
        return store
    store = ppr_mod.ppr_all_users(ckg, alpha=args.alpha, iterations=args.iters,
                                  threads=getattr(args, "threads", 1))
    if path:
        store.save(path)
    elif out_dir:
        store.save(os.path.join(out_dir, "ppr.bin"))
    return store


# --- subcommands -----------------------------------------------------------


def cmd_gen_synthetic(args):
    inter, kg, alignment = data.gen_synthetic(
        args.users, args.items, args.entities, args.relations,
        args.clusters, args.noise, args.seed,
        interactions_per_user=args.interactions_per_user,
        triples_per_item=args.triples_per_item,
        distractors_per_item=args.distractors_per_item)
    os.makedirs(args.out, exist_ok=True)
    data.write_kg(os.path.join(args.out, "kg.txt"), kg)
    data.write_alignment(os.path.join(args.out, "align.txt"), alignment)

    def write_split_dir(dir_, split):
        os.makedirs(dir_, exist_ok=True)
        data.write_interactions(os.path.join(dir_, "train.txt"), split.train_pairs)
        data.write_interactions(os.path.join(dir_, "test.txt"), split.test_pairs)
        if dir_ != args.out:
            data.write_kg(os.path.join(dir_, "kg.txt"), kg)
            data.write_alignment(os.path.join(dir_, "align.txt"), alignment)

    if args.scenario == "traditional":
        split = data.split_traditional(inter, args.test_fraction, args.seed)
        write_split_dir(args.out, split)
    elif args.scenario == "new-item":
        for split in data.split_new_item(inter, args.folds, args.seed):
            write_split_dir(os.path.join(args.out, f"fold{split.fold_index}"), split)
    else:
        for split in data.split_new_user(inter, args.folds, args.seed):
            write_split_dir(os.path.join(args.out, f"fold{split.fold_index}"), split)
    _write_config(args.out, args, {"pairs": len(inter.pairs), "triples": len(kg.triples)})
    print(f"wrote synthetic dataset to {args.out} "
          f"({len(inter.pairs)} pairs, {len(kg.triples)} triples)")
    return 0


def cmd_preprocess_ppr(args):
    if os.path.exists(args.out) and not args.force:
        print(f"{args.out} already exists; use --force to recompute")
        return 0
    ckg, _, _ = _build_ckg(args.data)
    t0 = time.perf_counter()
    store = ppr_mod.ppr_all_users(ckg, alpha=args.alpha, iterations=args.iters,
                                  threads=args.threads)
    elapsed = time.perf_counter() - t0
    store.save(args.out)
    print(f"ppr: {ckg.n_users} users x {ckg.node_count} nodes in {elapsed:.2f}s -> {args.out}")
    return 0


def _train_config(args):
    return training.TrainConfig(
        learning_rate=args.lr, weight_decay=args.weight_decay, dropout=args.dropout,
        batch_size=args.batch, epochs=args.epochs, k=args.k, depth=args.depth,
        d=args.d, d_alpha=args.d_alpha, activation=args.activation,
        use_attention=not args.no_attention,
        negatives_per_positive=args.negatives,
        positives_per_visit=args.positives_per_visit,
        exclude_scored_edges=not args.keep_scored_edges,
        pruning=args.pruning, seed=args.seed)


def cmd_train(args):
    ckg, train_pairs, test_pairs = _build_ckg(args.data)
    _write_config(args.out, args)
    ppr_store = _load_ppr(args, ckg, out_dir=args.out)
    split = data.DatasetSplit(train_pairs, test_pairs or train_pairs, "traditional")
    config = _train_config(args)
    log_path = os.path.join(args.out, "train_log.jsonl")
    with open(log_path, "w") as log_file:
        def log_fn(entry):
            log_file.write(json.dumps(entry, sort_keys=True) + "\n")
            log_file.flush()
            print(f"epoch {entry['epoch']}: loss {entry['loss']:.6f}"
                  + (f" val_recall {entry['val_recall']:.4f}" if "val_recall" in entry else ""))

        params, _ = training.train(ckg, split, ppr_store, config, log_fn=log_fn)
    ckpt = os.path.join(args.out, "checkpoint.bin")
    params.save(ckpt)
    print(f"saved checkpoint to {ckpt}")
    return 0


def cmd_evaluate(args):
    ckg, train_pairs, test_pairs = _build_ckg(args.data, need_test=True)
    params = model_mod.ModelParams.load(args.checkpoint)
    ppr_store = _load_ppr(args, ckg)
    split = data.DatasetSplit(train_pairs, test_pairs, args.scenario)
    report = eval_mod.evaluate(params, ckg, split, ppr_store,
                               k=args.k, depth=params.depth, n=args.n,
                               pruning=args.pruning, threads=args.threads)
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        _write_config(args.out, args)
        with open(os.path.join(args.out, "eval_report.txt"), "w") as f:
            f.write("\n".join(report.to_lines()) + "\n")
    print(f"recall@{args.n} {report.recall:.6f}  ndcg@{args.n} {report.ndcg:.6f}  "
          f"users {report.users_evaluated}")
    return 0


def cmd_recommend(args):
    ckg, train_pairs, _ = _build_ckg(args.data)
    params = model_mod.ModelParams.load(args.checkpoint)
    ppr_store = _load_ppr(args, ckg)
    positives = train_pairs.by_user().get(args.user, [])
    ranked = eval_mod.rank_items(params, ckg, ppr_store, args.user, positives,
                                 k=args.k, depth=params.depth)
    for rank, item in enumerate(ranked[:args.top_n], start=1):
        print(f"{rank}\t{item}")
    return 0


def cmd_explain(args):
    ckg, train_pairs, _ = _build_ckg(args.data)
    params = model_mod.ModelParams.load(args.checkpoint)
    ppr_store = _load_ppr(args, ckg)
    user_node = ckg.user_node(args.user)
    item_node = ckg.item_node(args.item)
    graph = subgraph.user_computation_graph(
        ckg, user_node, params.depth,
        scores=ppr_store.user_scores(args.user), k=args.k)
    tape = model_mod.forward(graph, params)
    expl = explain_mod.extract_explanation(
        tape, graph, item_node, threshold=args.threshold,
        path_prune=not args.no_path_prune, ckg=ckg)
    text = explain_mod.export_explanation(expl, format=args.format)
    if args.out:
        with open(args.out, "w") as f:
            f.write(text if text.endswith("\n") else text + "\n")
        print(f"wrote {len(expl.edges)} edges to {args.out}")
    else:
        print(text)
    return 0


# --- argument plumbing ------------------------------------------------------


def _add_ppr_args(p):
    p.add_argument("--ppr", help="PPR cache file (computed on the fly when absent)")
    p.add_argument("--alpha", type=float, default=ppr_mod.DEFAULT_ALPHA,
                   help="restart probability")
    p.add_argument("--iters", type=int, default=ppr_mod.DEFAULT_ITERATIONS,
                   help="power iteration steps")


def build_parser():
    parser = argparse.ArgumentParser(prog="kgrec", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-synthetic", help="write a planted-cluster dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--users", type=int, default=500)
    p.add_argument("--items", type=int, default=300)
    p.add_argument("--entities", type=int, default=400)
    p.add_argument("--relations", type=int, default=4)
    p.add_argument("--clusters", type=int, default=10)
    p.add_argument("--noise", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--interactions-per-user", type=int, default=15)
    p.add_argument("--triples-per-item", type=int, default=3)
    p.add_argument("--distractors-per-item", type=int, default=2)
    p.add_argument("--scenario", choices=["traditional", "new-item", "new-user"],
                   default="traditional")
    p.add_argument("--test-fraction", type=float, default=0.2)
    p.add_argument("--folds", type=int, default=5)
    p.set_defaults(func=cmd_gen_synthetic)

    p = sub.add_parser("preprocess-ppr", help="precompute per-user scores")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--alpha", type=float, default=ppr_mod.DEFAULT_ALPHA)
    p.add_argument("--iters", type=int, default=ppr_mod.DEFAULT_ITERATIONS)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_preprocess_ppr)

    p = sub.add_parser("train", help="train a model")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    _add_ppr_args(p)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--weight-decay", type=float, default=1e-5)
    p.add_argument("--dropout", type=float, default=0.0)
    p.add_argument("--batch", type=int, default=20)
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--k", type=int, default=35)
    p.add_argument("--depth", "--L", dest="depth", type=int, default=3)
    p.add_argument("--d", type=int, default=36)
    p.add_argument("--d-alpha", type=int, default=3)
    p.add_argument("--activation", choices=model_mod.ACTIVATIONS, default="relu")
    p.add_argument("--no-attention", action="store_true")
    p.add_argument("--negatives", type=int, default=1)
    p.add_argument("--positives-per-visit", type=int, default=8)
    p.add_argument("--keep-scored-edges", action="store_true",
                   help="keep the scored positives' interaction edges in the graph")
    p.add_argument("--pruning", choices=["ppr", "random", "none"], default="ppr")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=1)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="all-ranking metrics on a test split")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out")
    _add_ppr_args(p)
    p.add_argument("--n", type=int, default=20)
    p.add_argument("--k", type=int, default=35)
    p.add_argument("--pruning", choices=["ppr", "random", "none"], default="ppr")
    p.add_argument("--scenario", choices=["traditional", "new-item", "new-user"],
                   default="traditional")
    p.add_argument("--threads", type=int, default=1)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("recommend", help="top-N items for one user")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    _add_ppr_args(p)
    p.add_argument("--user", type=int, required=True)
    p.add_argument("--top-n", type=int, default=20)
    p.add_argument("--k", type=int, default=35)
    p.set_defaults(func=cmd_recommend)

    p = sub.add_parser("explain", help="attention explanation for a (user, item) pair")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    _add_ppr_args(p)
    p.add_argument("--user", type=int, required=True)
    p.add_argument("--item", type=int, required=True)
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--format", choices=["json", "dot"], default="json")
    p.add_argument("--no-path-prune", action="store_true")
    p.add_argument("--k", type=int, default=35)
    p.add_argument("--out")
    p.set_defaults(func=cmd_explain)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:  # uniform nonzero-exit reporting
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
