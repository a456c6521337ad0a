"""Command-line entry points.

Subcommands: ``generate`` (sample a dataset), ``dsep`` (enumerate
independence relations), ``train`` (fit a masked model), ``evaluate``
(score a saved model against ground-truth queries), ``sweep`` and
``robustness`` (run a full experiment config and emit CSV reports).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import bn, dsep, evaluation, experiments, model, training


def _cmd_generate(args: argparse.Namespace) -> int:
    net = bn.load_network(args.net)
    dataset = bn.forward_sample(net, args.seed, args.count)
    bn.save_dataset_csv(dataset, net, args.out)
    print(f"wrote {len(dataset)} samples to {args.out}")
    return 0


def _cmd_dsep(args: argparse.Namespace) -> int:
    net = bn.load_network(args.net)
    relations = dsep.enumerate_relations(net.dag)
    for rel in relations:
        cond = ",".join(sorted(rel.conditioning_set))
        print(f"{rel.x} _|_ {rel.y} | {{{cond}}}")
    print(f"{len(relations)} relations")
    if args.out:
        dsep.save_relations(relations, args.out)
    return 0


def _cmd_train(args: argparse.Namespace) -> int:
    net = bn.load_network(args.net)
    layout = model.LayoutSpec.from_variables(net.dag.variables)
    dataset = bn.load_dataset_csv(net, args.data)
    strategy = {"nn": "plain", "nn-reg": "reg", "nn-cor": "cor"}[args.model]
    relations = None
    if strategy in ("reg", "cor"):
        if not args.relations:
            print(f"error: --relations is required for model {args.model}", file=sys.stderr)
            return 2
        relations = dsep.load_relations(args.relations)
    config = training.TrainConfig(
        epochs=args.epochs,
        batch_size=args.batch,
        learning_rate=args.lr,
        strategy=strategy,
        alpha=args.alpha,
        reg_batch_size=args.reg_batch,
        seed=args.seed,
    )
    params = model.init_model(layout, args.hidden, experiments.stream(args.seed, "cli-init"))
    _, history = training.train(params, dataset, layout, config, relations)
    model.save_model(
        params, layout, args.out, seed=args.seed,
        config={"model": args.model, "epochs": args.epochs, "batch_size": args.batch,
                "learning_rate": args.lr, "alpha": args.alpha, "hidden": args.hidden,
                "final_target_loss": history.target_loss[-1]},
    )
    print(f"trained {args.model} for {args.epochs} epochs; "
          f"final target loss {history.target_loss[-1]:.6f}; saved to {args.out}")
    return 0


def _load_predictor(path: str, net: bn.DiscreteBayesNet):
    doc = json.loads(Path(path).read_text())
    if "cpts" in doc:
        return evaluation.BnPredictor(bn.network_from_dict(doc)), "bn"
    params, layout, _ = model.load_model(path)
    return evaluation.NnPredictor(params, layout), "nn"


def _cmd_evaluate(args: argparse.Namespace) -> int:
    net = bn.load_network(args.net)
    predictor, kind = _load_predictor(args.model_file, net)
    if args.queries == "total":
        queries = evaluation.build_total_query_set(net)
    else:
        queries = evaluation.build_sample_query_set(net, args.seed, args.count)
    report = evaluation.evaluate(predictor, queries, metadata={"model_file": args.model_file})
    print(f"{args.queries}_mae={report.mean:.6f} over {len(queries)} queries")
    if kind == "bn":
        print(f"fallback_count={report.fallback_count}")
    return 0


def _cmd_sweep(args: argparse.Namespace) -> int:
    config = experiments.load_experiment_config(args.config)
    records = experiments.run_sweep(config)
    runs_path, summary_path = experiments.emit_reports(records, config.output_dir)
    print(f"{len(records)} runs -> {runs_path}, {summary_path}")
    return 0


def _cmd_robustness(args: argparse.Namespace) -> int:
    config = experiments.load_experiment_config(args.config)
    records = experiments.run_robustness(config)
    runs_path, summary_path = experiments.emit_reports(records, config.output_dir)
    print(f"{len(records)} runs -> {runs_path}, {summary_path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bnstudy")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="sample a dataset from a network")
    p.add_argument("--net", required=True)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_generate)

    p = sub.add_parser("dsep", help="enumerate independence relations of a network's DAG")
    p.add_argument("--net", required=True)
    p.add_argument("--out", help="also write a machine-readable relation list")
    p.set_defaults(func=_cmd_dsep)

    p = sub.add_parser("train", help="train a masked model on a dataset")
    p.add_argument("--net", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--model", required=True, choices=["nn", "nn-reg", "nn-cor"])
    p.add_argument("--relations")
    p.add_argument("--alpha", type=float, default=10.0)
    p.add_argument("--epochs", type=int, default=500)
    p.add_argument("--hidden", type=int, default=50)
    p.add_argument("--batch", type=int, default=16)
    p.add_argument("--reg-batch", type=int, default=16)
    p.add_argument("--lr", type=float, default=0.001)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("evaluate", help="score a saved model against ground-truth queries")
    p.add_argument("--net", required=True)
    p.add_argument("--model-file", required=True)
    p.add_argument("--queries", choices=["total", "sample"], required=True)
    p.add_argument("--count", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("sweep", help="run the sample-efficiency grid from a config file")
    p.add_argument("--config", required=True)
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("robustness", help="run the DAG-misspecification study from a config file")
    p.add_argument("--config", required=True)
    p.set_defaults(func=_cmd_robustness)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
