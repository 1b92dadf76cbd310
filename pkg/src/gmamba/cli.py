"""Command-line entry point.

Subcommands: gen-data, train, eval, ablate, gradcheck, bench, theorem.
Exit code 0 iff every requested check passes.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import __version__
from .bench import scaling_experiment
from .errors import GmambaError
from .graph import read_graphs, write_graphs
from .model import ModelConfig, init_model
from .params import load_checkpoint
from .ssm import ScanInputs, discretize, gated_rnn_reference, selective_scan_fwd
from .synth import SynthSpec, make_longrange_dataset, ring_graph
from .trainer import TrainConfig, evaluate, prepare, run_ablation, train


def _load_json(path):
    with open(path) as f:
        return json.load(f)


def _configs(path):
    raw = _load_json(path)
    model_cfg = ModelConfig.from_dict(raw["model"])
    train_cfg = TrainConfig.from_dict(raw.get("train", {}))
    return model_cfg, train_cfg


def cmd_gen_data(args) -> int:
    spec = SynthSpec.from_dict(_load_json(args.spec)) if args.spec else SynthSpec()
    graphs = make_longrange_dataset(spec, seed=args.seed)
    write_graphs(graphs, args.out)
    print(f"wrote {len(graphs)} graphs to {args.out}")
    return 0


def cmd_train(args) -> int:
    model_cfg, train_cfg = _configs(args.config)
    if args.seed is not None:
        train_cfg.seed = args.seed
    dataset = read_graphs(args.data)
    os.makedirs(args.out_dir, exist_ok=True)
    _, report = train(model_cfg, train_cfg, dataset, out_dir=args.out_dir)
    final = report.final("test")
    print(json.dumps({"test_metric": final.metric, "test_loss": final.loss}))
    return 0


def cmd_eval(args) -> int:
    model_cfg, train_cfg = _configs(args.config)
    from .trainer import apply_arm, split_dataset

    cfg = apply_arm(model_cfg, train_cfg.arm)
    state = init_model(cfg, seed=train_cfg.seed)
    load_checkpoint(state.store, args.ckpt)
    dataset = read_graphs(args.data)
    _, _, test_graphs = split_dataset(dataset, train_cfg.seed)
    metric, loss_value = evaluate(state, prepare(test_graphs, cfg),
                                  m=args.m, seed=args.seed or 0)
    print(json.dumps({"metric": metric, "loss": loss_value, "m": args.m}))
    return 0


def cmd_ablate(args) -> int:
    model_cfg, train_cfg = _configs(args.config)
    dataset = read_graphs(args.data)
    seeds = [int(s) for s in args.seeds.split(",")]
    results = run_ablation(model_cfg, train_cfg, dataset, seeds=seeds)
    medians = {arm: float(np.median(scores)) for arm, scores in results.items()}
    ordered = (
        medians["permute_plus_degree"] >= medians["permute_only"] >= medians["baseline"]
    )
    summary = {"per_seed": results, "median": medians, "ordering_holds": ordered}
    print(json.dumps(summary, indent=2))
    if args.out_dir:
        os.makedirs(args.out_dir, exist_ok=True)
        with open(os.path.join(args.out_dir, "ablation.json"), "w") as f:
            json.dump(summary, f, indent=2)
    return 0 if ordered else 1


def cmd_gradcheck(args) -> int:
    from .gradsuite import run_gradient_suite

    failures = run_gradient_suite(verbose=True)
    return 0 if failures == 0 else 1


def cmd_theorem(args) -> int:
    """Gated-recurrence equivalence: N=1, A=-1, B=C=1, dt = softplus(z)."""
    rng = np.random.default_rng(args.seed or 0)
    worst = 0.0
    for _ in range(100):
        length = int(rng.integers(1, 65))
        x = rng.standard_normal(length)
        z = rng.standard_normal(length) * 2.0
        dt = np.logaddexp(0.0, z)[:, None]
        a = np.array([[-1.0]])
        b = np.ones((length, 1))
        c = np.ones((length, 1))
        abar, bbar = discretize(dt, a, b)
        outs = selective_scan_fwd(
            ScanInputs(x=x[:, None], dt=dt, b=b, c=c), abar, bbar, None
        )
        ref = gated_rnn_reference(x, z)
        worst = max(worst, float(np.max(np.abs(outs.y[:, 0] - ref))))
    ok = worst < 1e-12
    print(json.dumps({"max_abs_error": worst, "tolerance": 1e-12, "pass": ok}))
    return 0 if ok else 1


def cmd_bench(args) -> int:
    if args.data:
        dataset = read_graphs(args.data)
        sampler = "induced"
    else:
        dataset = [ring_graph(args.max_nodes, node_feat_dim=4, edge_feat_dim=1)]
        sampler = "segment"
    ratios = [float(r) for r in args.ratios.split(",")]
    model_cfg = ModelConfig(
        node_feat_dim=dataset[0].node_feat.shape[1],
        edge_feat_dim=dataset[0].edge_feat.shape[1],
        d=args.d, k_layers=args.layers, pe_dim=0, head="graph_class",
        heuristic="degree",
    )
    results = scaling_experiment(model_cfg, dataset, ratios, seed=args.seed or 0,
                                 sampler=sampler, attn_d=args.attn_d)
    os.makedirs(args.out_dir, exist_ok=True)
    csv_path = os.path.join(args.out_dir, "scaling.csv")
    with open(csv_path, "w") as f:
        f.write("ratio,avg_L,flops,peak_bytes,model\n")
        for model_id, res in results.items():
            for p in res.points:
                f.write(f"{p.ratio},{p.avg_nodes},{p.report.flops},"
                        f"{p.report.peak_bytes},{model_id}\n")
    slopes = {
        model_id: {
            "flops_slope": res.flops_fit.slope,
            "flops_ci": [res.flops_fit.ci_low, res.flops_fit.ci_high],
            "memory_slope": res.memory_fit.slope,
            "memory_ci": [res.memory_fit.ci_low, res.memory_fit.ci_high],
        }
        for model_id, res in results.items()
    }
    with open(os.path.join(args.out_dir, "slopes.json"), "w") as f:
        json.dump(slopes, f, indent=2)
    print(json.dumps(slopes, indent=2))
    ok = (
        abs(slopes["gmamba"]["flops_slope"] - 1.0) <= 0.1
        and abs(slopes["dense_attention"]["flops_slope"] - 2.0) <= 0.1
        and abs(slopes["gmamba"]["memory_slope"] - 1.0) <= 0.15
    )
    print(f"slope bands {'ok' if ok else 'VIOLATED'}; wrote {csv_path}")
    return 0 if ok else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gmamba")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic long-range dataset")
    p.add_argument("--spec", help="SynthSpec JSON file (defaults used if omitted)")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train a model")
    p.add_argument("--config", required=True, help="JSON with model/train sections")
    p.add_argument("--data", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on the test split")
    p.add_argument("--config", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--m", type=int, default=5)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="run the three permutation-recipe arms")
    p.add_argument("--config", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--seeds", default="0,1,2,3,4")
    p.add_argument("--out-dir")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("gradcheck", help="run the finite-difference gradient suite")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("theorem", help="check the gated-recurrence equivalence")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_theorem)

    p = sub.add_parser("bench", help="FLOPs/memory scaling experiment")
    p.add_argument("--data", help="JSONL dataset (default: generated ring)")
    p.add_argument("--max-nodes", type=int, default=2048)
    p.add_argument("--ratios", default="0.03125,0.0625,0.125,0.25,0.5,1.0")
    p.add_argument("--d", type=int, default=64)
    p.add_argument("--layers", type=int, default=2)
    p.add_argument("--attn-d", type=int, default=8)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_bench)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except GmambaError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
