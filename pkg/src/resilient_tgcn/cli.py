"""Command-line harness.

Subcommands: generate-data, build-kg, perturb, train, sweep, report.
Exit codes: 0 success, 1 usage error, 2 input error, 3 numeric divergence.
A ``--config file`` of key=value lines overrides any flag of the same name.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys

from .autodiff import DivergenceError, save_checkpoint
from .datasets import generate_dataset, load_csv_dataset, save_csv_dataset, window
from .graphs import load_edge_list, save_edge_list
from .knowledge import (
    KgConfig,
    build_kg,
    calibrate_kg_threshold,
    dataset_hash,
    export_kg,
)
from .powergrid import ieee118_network, load_network, synth_load_profile
from .resilient import VARIANTS, make_model
from .scenarios import ADDITION, REMOVAL, apply_scenario, make_spec
from .sweep import (
    KG_EDGE_TARGETS,
    SweepConfig,
    read_report,
    run_sweep,
    summarize,
    write_summary_files,
)
from .tgcn import rmse

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_INPUT = 2
EXIT_DIVERGENCE = 3


class _Parser(argparse.ArgumentParser):
    """argparse that exits 1 (not 2) on usage errors, per the CLI contract."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _load_net(args):
    if getattr(args, "network", None):
        return load_network(args.network)
    return ieee118_network()


def _network_fingerprint(net) -> str:
    text = f"slack={net.slack_bus};" + ";".join(
        f"{i},{j},{net.susceptance[(i, j)]:.12g}" for i, j in net.graph.sorted_edges()
    )
    return hashlib.sha256(text.encode()).hexdigest()[:12]


def cmd_generate_data(args) -> int:
    net = _load_net(args)
    if args.steps < 2:
        raise ValueError(f"T too short: --steps {args.steps}, need at least 2")
    profile = synth_load_profile(
        net.num_buses, args.steps, seed=args.seed, noise_level=args.noise
    )
    ds = generate_dataset(net, profile, sample_rate=args.sample_rate)
    save_csv_dataset(ds, args.out)
    manifest = {
        "seed": args.seed,
        "steps": args.steps,
        "noise": args.noise,
        "sample_rate": args.sample_rate,
        "network": args.network or "ieee118",
        "network_hash": _network_fingerprint(net),
        "dataset_hash": dataset_hash(ds),
    }
    with open(args.out + ".manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"wrote {net.num_buses}x{args.steps} dataset to {args.out}")
    return EXIT_OK


def cmd_build_kg(args) -> int:
    ds = load_csv_dataset(args.data)
    t_train = max(2, int(ds.num_steps * args.train_frac))
    train_ds = ds.restrict(0, t_train)
    detail = ""
    if args.method in ("cosine", "pearson"):
        if args.target_edges is not None:
            threshold, achieved = calibrate_kg_threshold(
                train_ds, args.method, args.target_edges
            )
            detail = f"calibrated target={args.target_edges} achieved={achieved} "
        elif args.method == "cosine":
            threshold = args.alpha
        else:
            threshold = args.threshold
        if args.method == "cosine":
            cfg = KgConfig(method="cosine", alpha=threshold, seed=args.seed)
            detail += f"alpha={threshold:.12g}"
        else:
            cfg = KgConfig(method="pearson", pearson_threshold=threshold,
                           seed=args.seed)
            detail += f"threshold={threshold:.12g}"
    else:
        cfg = KgConfig(
            method="gat",
            gat_target_edges=args.target_edges if args.target_edges else 230,
            gat_epochs=args.gat_epochs,
            gat_history=args.history,
            seed=args.seed,
        )
        detail = f"target_edges={cfg.gat_target_edges} epochs={cfg.gat_epochs}"
    kg = build_kg(train_ds, cfg)
    export_kg(kg, args.out, args.method, detail, train_ds, args.seed)
    print(f"wrote knowledge graph with {kg.num_edges} edges to {args.out}")
    return EXIT_OK


def _load_topology(args):
    if getattr(args, "graph", None):
        return load_edge_list(args.graph)
    return _load_net(args).graph


def cmd_perturb(args) -> int:
    g = _load_topology(args)
    if args.remove:
        i, j = args.remove
        spec = make_spec(REMOVAL, i, i, j)
    else:
        i, j = args.add
        spec = make_spec(ADDITION, i, i, j)
    out = apply_scenario(g, spec)
    save_edge_list(out, args.out, header_lines=[f"perturbed: {spec.id}"])
    print(f"wrote perturbed graph ({out.num_edges} edges) to {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    ds = load_csv_dataset(args.data)
    samples = window(ds, args.history, args.horizon)
    topo = _load_topology(args)
    kg = load_edge_list(args.kg) if args.kg else None
    if args.variant != "baseline" and kg is None:
        raise ValueError(f"variant {args.variant} requires --kg")
    model = make_model(
        args.variant, topo, kg,
        hidden_dim=args.hidden_dim, conv_dim=args.conv_dim, horizon=args.horizon,
        epochs=args.epochs, batch_size=args.batch_size,
        learning_rate=args.learning_rate, patience=args.patience,
        min_epochs=args.min_epochs, max_train_windows=args.max_train_windows,
        seed=args.seed,
    )
    xtr, ytr = samples.split("train")
    xv, yv = samples.split("val")
    xte, yte = samples.split("test")
    model.fit(xtr, ytr, validation=(xv, yv))
    err = rmse(model.predict(xte) * samples.scale, yte * samples.scale)
    print(f"variant={args.variant} epochs_run={model.n_epochs_} test_rmse={err:.17g}")
    if args.checkpoint:
        save_checkpoint(
            args.checkpoint,
            model.named_params(),
            meta={
                "seed": args.seed,
                "step_count": model.adam_steps_,
                "variant": args.variant,
            },
        )
        print(f"checkpoint written to {args.checkpoint}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    config = SweepConfig(
        out_dir=args.out,
        data_csv=args.data,
        network_path=args.network,
        gen_steps=args.steps,
        gen_seed=args.gen_seed,
        gen_noise=args.noise,
        history=args.history,
        horizon=args.horizon,
        kinds=tuple(args.kinds.split(",")),
        variants=tuple(args.variants.split(",")),
        kg_methods=tuple(args.kg_methods.split(",")),
        kg_targets=(
            {m: args.kg_target_edges for m in args.kg_methods.split(",")}
            if args.kg_target_edges else dict(KG_EDGE_TARGETS)
        ),
        addition_target=args.addition_target,
        max_removals=args.max_removals,
        max_additions=args.max_additions,
        scenario_manifest=args.scenarios,
        full=args.full,
        per_node_average=not args.no_per_node,
        shared_training=args.shared_training,
        workers=args.workers,
        master_seed=args.master_seed,
        hidden_dim=args.hidden_dim,
        conv_dim=args.conv_dim,
        epochs=args.epochs,
        batch_size=args.batch_size,
        learning_rate=args.learning_rate,
        patience=args.patience,
        min_epochs=args.min_epochs,
        max_train_windows=args.max_train_windows,
    )
    path, rows = run_sweep(config)
    summary = summarize(rows)
    write_summary_files(summary, args.out, per_node=config.per_node_average)
    print(f"report: {path} ({len(rows)} rows)")
    if summary["reference"] is not None:
        print(f"true-topology baseline rmse: {summary['reference']:.6g}")
    for key, (mean, n) in sorted(summary["overall"].items()):
        print(f"  {key[0]:12s} kg={key[1]:8s} {key[2]:8s} mean_rmse={mean:.6g} n={n}")
    return EXIT_OK


def cmd_report(args) -> int:
    rows = read_report(args.report)
    if not rows:
        raise ValueError(f"{args.report}: empty report")
    summary = summarize(rows)
    out = args.out or os.path.dirname(os.path.abspath(args.report))
    write_summary_files(summary, out)
    if summary["reference"] is not None:
        print(f"true-topology baseline rmse: {summary['reference']:.6g}")
    print(f"{'variant':12s} {'kg':8s} {'kind':8s} {'mean_rmse':>12s} {'win_rate':>9s}")
    for key, (mean, n) in sorted(summary["overall"].items()):
        rate = summary["win_rates"].get(key, (float("nan"),))[0]
        print(f"{key[0]:12s} {key[1]:8s} {key[2]:8s} {mean:12.6g} {rate:9.3f}")
    print(f"summary files in {out}")
    return EXIT_OK


def _add_train_flags(p, history=10, hidden=64, epochs=100, batch=32, lr=1e-3,
                     patience=10, min_epochs=0, max_windows=None):
    p.add_argument("--history", type=int, default=history, help="input window length")
    p.add_argument("--horizon", type=int, default=1, help="prediction length")
    p.add_argument("--hidden-dim", type=int, default=hidden)
    p.add_argument("--conv-dim", type=int, default=1)
    p.add_argument("--epochs", type=int, default=epochs)
    p.add_argument("--batch-size", type=int, default=batch)
    p.add_argument("--learning-rate", type=float, default=lr)
    p.add_argument("--patience", type=int, default=patience)
    p.add_argument("--min-epochs", type=int, default=min_epochs)
    p.add_argument("--max-train-windows", type=int, default=max_windows)


def build_parser() -> _Parser:
    parser = _Parser(prog="resilient-tgcn",
                     description="Topology-resilient TGCN state estimation harness")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate-data", help="synthesize a phase-angle dataset")
    p.add_argument("--buses", default="ieee118", choices=["ieee118"],
                   help="bundled network (ignored when --network is given)")
    p.add_argument("--network", default=None, help="network file to use instead")
    p.add_argument("--steps", type=int, default=2000)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--noise", type=float, default=0.1)
    p.add_argument("--sample-rate", type=float, default=30.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_generate_data)

    p = sub.add_parser("build-kg", help="build a knowledge graph from a dataset")
    p.add_argument("--data", required=True, help="dataset CSV")
    p.add_argument("--method", required=True, choices=["cosine", "pearson", "gat"])
    p.add_argument("--alpha", type=float, default=2.17)
    p.add_argument("--threshold", type=float, default=0.9985)
    p.add_argument("--target-edges", type=int, default=None,
                   help="calibrate to this edge count (required for gat)")
    p.add_argument("--train-frac", type=float, default=0.8)
    p.add_argument("--history", type=int, default=8, help="gat feature window")
    p.add_argument("--gat-epochs", type=int, default=30)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_build_kg)

    p = sub.add_parser("perturb", help="apply a single-link inaccuracy to a graph")
    p.add_argument("--network", default=None)
    p.add_argument("--graph", default=None, help="edge-list file instead of a network")
    grp = p.add_mutually_exclusive_group(required=True)
    grp.add_argument("--remove", nargs=2, type=int, metavar=("I", "J"))
    grp.add_argument("--add", nargs=2, type=int, metavar=("I", "J"))
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_perturb)

    p = sub.add_parser("train", help="train one model variant")
    p.add_argument("--data", required=True)
    p.add_argument("--variant", default="baseline", choices=list(VARIANTS))
    p.add_argument("--network", default=None)
    p.add_argument("--graph", default=None, help="topology edge list (default: network graph)")
    p.add_argument("--kg", default=None, help="knowledge-graph edge list")
    _add_train_flags(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--checkpoint", default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sweep", help="train all variants across scenarios")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--data", default=None, help="dataset CSV (default: generate)")
    p.add_argument("--network", default=None)
    p.add_argument("--steps", type=int, default=2000)
    p.add_argument("--gen-seed", type=int, default=7)
    p.add_argument("--noise", type=float, default=0.1)
    p.add_argument("--kinds", default="removal,addition")
    p.add_argument("--variants", default=",".join(VARIANTS))
    p.add_argument("--kg-methods", default="cosine")
    p.add_argument("--kg-target-edges", type=int, default=None,
                   help="edge-count target for every kg method (default: per-method)")
    p.add_argument("--addition-target", type=int, default=406,
                   help="scenario count the addition radius is calibrated to")
    p.add_argument("--max-removals", type=int, default=None)
    p.add_argument("--max-additions", type=int, default=None)
    p.add_argument("--scenarios", default=None,
                   help="scenario manifest to replay instead of enumerating")
    p.add_argument("--full", action="store_true",
                   help="run every scenario (hours-scale), no subsampling")
    p.add_argument("--shared-training", action="store_true",
                   help="train once per variant and only swap the inference "
                        "adjacency per scenario (protocol deviation, fast)")
    p.add_argument("--no-per-node", action="store_true",
                   help="skip the per-node average plot-data files")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--master-seed", type=int, default=0)
    _add_train_flags(p, history=6, hidden=12, epochs=25, batch=12, lr=0.03,
                     patience=10, min_epochs=15, max_windows=96)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("report", help="summarize a sweep report")
    p.add_argument("--report", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_report)

    for sp in sub.choices.values():
        sp.add_argument("--config", default=None,
                        help="key=value file overriding flags")
    return parser


def _apply_config_file(args) -> None:
    if not getattr(args, "config", None):
        return
    with open(args.config) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValueError(f"{args.config}:{lineno}: expected key=value, got {line!r}")
            key, value = (s.strip() for s in line.split("=", 1))
            attr = key.replace("-", "_")
            if not hasattr(args, attr):
                raise ValueError(f"{args.config}:{lineno}: unknown option {key!r}")
            current = getattr(args, attr)
            if isinstance(current, bool):
                value = value.lower() in ("1", "true", "yes", "on")
            elif isinstance(current, int):
                value = int(value)
            elif isinstance(current, float):
                value = float(value)
            setattr(args, attr, value)


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        _apply_config_file(args)
        return args.func(args)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except (OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
