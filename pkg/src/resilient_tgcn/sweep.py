"""Experiment harness: train every model variant across enumerated
topology-inaccuracy scenarios and collect de-normalized test RMSE rows.

Rows are reproducible bit-for-bit: each scenario derives its seed by stable
hashing, so worker scheduling cannot perturb results. The report file is
append-on-completion (crash-safe) and rewritten in canonical order at the
end, which also makes interrupted-then-resumed sweeps byte-comparable.
"""

from __future__ import annotations

import hashlib
import multiprocessing
import os
import time
from dataclasses import dataclass, field

import numpy as np

from .autodiff import DivergenceError
from .datasets import SampleSet, generate_dataset, load_csv_dataset, window
from .graphs import Graph, edge_overlap, is_connected
from .knowledge import (
    KgConfig,
    build_kg,
    calibrate_kg_threshold,
    cosine_kg,
    export_kg,
    pearson_kg,
)
from .powergrid import ieee118_network, load_network, synth_load_profile
from .resilient import VARIANTS, make_model
from .scenarios import (
    ADDITION,
    REMOVAL,
    ScenarioSpec,
    apply_scenario,
    calibrate_radius,
    enumerate_additions,
    enumerate_removals,
    load_scenarios,
    save_scenarios,
)
from .tgcn import rmse

__all__ = [
    "SweepConfig",
    "ReportRow",
    "run_sweep",
    "read_report",
    "write_report",
    "summarize",
    "stable_seed",
    "TRUE_SCENARIO",
]

TRUE_SCENARIO = "true"

KG_EDGE_TARGETS = {"cosine": 227, "pearson": 226, "gat": 230}


@dataclass
class SweepConfig:
    """Everything a sweep needs; flag defaults mirror the CLI."""

    out_dir: str = "sweep-out"
    data_csv: str | None = None
    network_path: str | None = None
    scenario_manifest: str | None = None
    gen_steps: int = 2000
    gen_seed: int = 7
    gen_noise: float = 0.2
    sample_rate: float = 30.0
    history: int = 8
    horizon: int = 1
    split: tuple = (0.8, 0.1, 0.1)
    kinds: tuple = (REMOVAL, ADDITION)
    variants: tuple = VARIANTS
    kg_methods: tuple = ("cosine",)
    kg_targets: dict = field(default_factory=lambda: dict(KG_EDGE_TARGETS))
    addition_target: int = 406
    removal_stride: int = 4
    addition_stride: int = 8
    max_removals: int | None = None
    max_additions: int | None = None
    full: bool = False
    shared_training: bool = False
    per_node_average: bool = True
    workers: int = 1
    master_seed: int = 0
    hidden_dim: int = 12
    conv_dim: int = 1
    epochs: int = 25
    batch_size: int = 12
    learning_rate: float = 0.03
    patience: int = 10
    min_epochs: int = 15
    max_train_windows: int | None = 96

    def train_kwargs(self) -> dict:
        return dict(
            hidden_dim=self.hidden_dim,
            conv_dim=self.conv_dim,
            horizon=self.horizon,
            epochs=self.epochs,
            batch_size=self.batch_size,
            learning_rate=self.learning_rate,
            patience=self.patience,
            min_epochs=self.min_epochs,
            max_train_windows=self.max_train_windows,
        )


@dataclass
class ReportRow:
    variant: str
    kg_method: str
    scenario_id: str
    kind: str
    anchor: int
    rmse: float
    train_epochs: int
    wall_time: float
    disconnected: bool
    seed: int
    status: str = "ok"

    @property
    def key(self):
        return (self.variant, self.kg_method, self.scenario_id)

    def to_line(self) -> str:
        return "\t".join([
            self.variant, self.kg_method, self.scenario_id, self.kind,
            str(self.anchor), "%.17g" % self.rmse, str(self.train_epochs),
            "%.3f" % self.wall_time, str(int(self.disconnected)), str(self.seed),
            self.status,
        ])

    @classmethod
    def from_line(cls, line: str) -> "ReportRow":
        p = line.rstrip("\n").split("\t")
        return cls(
            variant=p[0], kg_method=p[1], scenario_id=p[2], kind=p[3],
            anchor=int(p[4]), rmse=float(p[5]), train_epochs=int(p[6]),
            wall_time=float(p[7]), disconnected=bool(int(p[8])), seed=int(p[9]),
            status=p[10],
        )


_HEADER = (
    "# columns: variant kg_method scenario_id kind anchor rmse "
    "train_epochs wall_time disconnected seed status"
)


def _config_lines(config: SweepConfig):
    skip = {"workers", "out_dir"}  # irrelevant to the numbers
    items = sorted(
        (k, v) for k, v in vars(config).items() if k not in skip
    )
    return [f"# config: {k}={v}" for k, v in items]


def write_report(rows, path, config: SweepConfig | None = None) -> None:
    rows = sorted(rows, key=lambda r: r.key)
    with open(path, "w") as fh:
        fh.write(_HEADER + "\n")
        if config is not None:
            for line in _config_lines(config):
                fh.write(line + "\n")
        for r in rows:
            fh.write(r.to_line() + "\n")


def read_report(path) -> list:
    rows = []
    with open(path) as fh:
        for line in fh:
            if not line.strip() or line.startswith("#"):
                continue
            rows.append(ReportRow.from_line(line))
    return rows


def stable_seed(master_seed: int, scenario_id: str) -> int:
    """Per-scenario seed derived by hashing, stable across runs and workers."""
    digest = hashlib.sha256(f"{master_seed}:{scenario_id}".encode()).digest()
    return int.from_bytes(digest[:4], "big")


def _subsample(specs, stride, cap):
    if cap is not None and cap < len(specs):
        idx = np.unique(np.linspace(0, len(specs) - 1, cap).round().astype(int))
        return [specs[i] for i in idx]
    if stride > 1:
        return specs[::stride]
    return list(specs)


def prepare_inputs(config: SweepConfig):
    """Network, dataset, samples, knowledge graphs, scenario list."""
    net = load_network(config.network_path) if config.network_path else ieee118_network()
    if config.data_csv:
        dataset = load_csv_dataset(config.data_csv, sample_rate=config.sample_rate)
    else:
        profile = synth_load_profile(
            net.num_buses, config.gen_steps, seed=config.gen_seed,
            noise_level=config.gen_noise,
        )
        dataset = generate_dataset(net, profile, sample_rate=config.sample_rate)
    samples = window(dataset, config.history, config.horizon, config.split)
    n_train = len(samples.train_idx)
    train_ds = dataset.restrict(0, n_train + config.history + config.horizon - 1)

    kgs = {}
    for method in config.kg_methods:
        target = config.kg_targets.get(method, KG_EDGE_TARGETS.get(method, 227))
        if method == "cosine":
            alpha, _ = calibrate_kg_threshold(train_ds, method, target)
            kgs[method] = cosine_kg(train_ds, alpha)
        elif method == "pearson":
            threshold, _ = calibrate_kg_threshold(train_ds, method, target)
            kgs[method] = pearson_kg(train_ds, threshold)
        else:
            cfg = KgConfig(method=method, gat_target_edges=target,
                           gat_history=config.history, seed=config.master_seed)
            kgs[method] = build_kg(train_ds, cfg)

    if config.scenario_manifest:
        specs = [
            s for s in load_scenarios(config.scenario_manifest)
            if s.kind in config.kinds
        ]
    else:
        specs = []
        if REMOVAL in config.kinds:
            rem = enumerate_removals(net.graph)
            if not config.full:
                rem = _subsample(rem, config.removal_stride, config.max_removals)
            specs.extend(rem)
        if ADDITION in config.kinds:
            radius, _ = calibrate_radius(
                net.graph, net.coordinates, config.addition_target
            )
            add = enumerate_additions(net.graph, net.coordinates, radius)
            if not config.full:
                add = _subsample(add, config.addition_stride, config.max_additions)
            specs.extend(add)
    return net, dataset, samples, kgs, specs


# worker context, populated in the parent before fork so children inherit it
_CTX: dict = {}


def _row_task(task):
    variant, kg_method, scenario_id = task
    ctx = _CTX
    samples: SampleSet = ctx["samples"]
    true_graph: Graph = ctx["graph"]
    spec: ScenarioSpec | None = ctx["specs"].get(scenario_id)
    seed = stable_seed(ctx["master_seed"], scenario_id)
    if scenario_id == TRUE_SCENARIO:
        topo, kind, anchor = true_graph, TRUE_SCENARIO, -1
    else:
        topo = apply_scenario(true_graph, spec)
        kind, anchor = spec.kind, spec.anchor_node
    kg = ctx["kgs"].get(kg_method)
    start = time.perf_counter()
    xtr, ytr = samples.split("train")
    xv, yv = samples.split("val")
    xte, yte = samples.split("test")
    try:
        if ctx["shared_training"]:
            model = _shared_model(variant, kg_method)
            model.set_inference_graph(topo)
        else:
            model = make_model(variant, topo, kg, seed=seed, **ctx["train_kwargs"])
            model.fit(xtr, ytr, validation=(xv, yv))
        err = rmse(model.predict(xte) * samples.scale, yte * samples.scale)
        status = "ok"
        epochs = model.n_epochs_
    except DivergenceError:
        err, status, epochs = float("nan"), "diverged", 0
    return ReportRow(
        variant=variant,
        kg_method=kg_method,
        scenario_id=scenario_id,
        kind=kind,
        anchor=anchor,
        rmse=err,
        train_epochs=epochs,
        wall_time=time.perf_counter() - start,
        disconnected=not is_connected(topo),
        seed=seed,
    )


_SHARED_MODELS: dict = {}


def _shared_model(variant, kg_method):
    """Train once per (variant, kg) on the true topology; reuse per scenario
    with only the inference adjacency swapped (protocol deviation mode)."""
    key = (variant, kg_method)
    if key not in _SHARED_MODELS:
        ctx = _CTX
        samples: SampleSet = ctx["samples"]
        seed = stable_seed(ctx["master_seed"], f"shared|{variant}|{kg_method}")
        model = make_model(variant, ctx["graph"], ctx["kgs"].get(kg_method),
                           seed=seed, **ctx["train_kwargs"])
        xtr, ytr = samples.split("train")
        xv, yv = samples.split("val")
        model.fit(xtr, ytr, validation=(xv, yv))
        _SHARED_MODELS[key] = model
    return _SHARED_MODELS[key]


def _pending_tasks(config: SweepConfig, specs, done):
    tasks = []
    ref = ("baseline", "none", TRUE_SCENARIO)
    if ref not in done:
        tasks.append(ref)
    for variant in config.variants:
        kg_list = ["none"] if variant == "baseline" else list(config.kg_methods)
        for kg in kg_list:
            for s in specs:
                task = (variant, kg, s.id)
                if task not in done:
                    tasks.append(task)
    return tasks


def run_sweep(config: SweepConfig):
    """Execute (or resume) a sweep; returns (report_path, rows)."""
    if not config.variants:
        raise ValueError("variant list is empty")
    os.makedirs(config.out_dir, exist_ok=True)
    report_path = os.path.join(config.out_dir, "report.tsv")
    rows = read_report(report_path) if os.path.exists(report_path) else []
    done = {r.key for r in rows}

    net, dataset, samples, kgs, specs = prepare_inputs(config)
    save_scenarios(specs, os.path.join(config.out_dir, "scenarios.txt"))
    n_train = len(samples.train_idx)
    train_ds = dataset.restrict(0, n_train + config.history + config.horizon - 1)
    with open(os.path.join(config.out_dir, "kg_overlap.txt"), "w") as fh:
        fh.write("# method kg_edges common only_true only_kg\n")
        for method, kg in sorted(kgs.items()):
            common, only_true, only_kg = edge_overlap(net.graph, kg)
            fh.write(f"{method} {kg.num_edges} {common} {only_true} {only_kg}\n")
            export_kg(
                kg,
                os.path.join(config.out_dir, f"kg_{method}.txt"),
                method,
                f"target={config.kg_targets.get(method, '')}",
                train_ds,
                config.master_seed,
            )
    _CTX.clear()
    _CTX.update(
        samples=samples,
        graph=net.graph,
        kgs=kgs,
        specs={s.id: s for s in specs},
        master_seed=config.master_seed,
        train_kwargs=config.train_kwargs(),
        shared_training=config.shared_training,
    )
    _SHARED_MODELS.clear()

    tasks = _pending_tasks(config, specs, done)
    if tasks:
        with open(report_path, "a") as out:
            if not rows:
                out.write(_HEADER + "\n")
            if config.workers > 1 and not config.shared_training:
                mp = multiprocessing.get_context("fork")
                with mp.Pool(config.workers) as pool:
                    for row in pool.imap_unordered(_row_task, tasks, chunksize=1):
                        rows.append(row)
                        out.write(row.to_line() + "\n")
                        out.flush()
            else:
                for task in tasks:
                    row = _row_task(task)
                    rows.append(row)
                    out.write(row.to_line() + "\n")
                    out.flush()
    write_report(rows, report_path, config=config)
    return report_path, rows


def summarize(rows):
    """Aggregate a report: overall LR/LA means, per-node means, win rates.

    Returns a dict with keys ``reference`` (true-topology baseline RMSE),
    ``overall`` {(variant, kg, kind): (mean_rmse, n)}, ``per_node``
    {(variant, kg, kind): {anchor: mean_rmse}}, and ``win_rates``
    {(variant, kg, kind): (win_rate, n)} against the baseline on identical
    scenarios (ties count 0.5).
    """
    ok = [r for r in rows if r.status == "ok"]
    reference = None
    baseline = {}
    for r in ok:
        if r.variant == "baseline" and r.scenario_id == TRUE_SCENARIO:
            reference = r.rmse
        elif r.variant == "baseline":
            baseline[r.scenario_id] = r.rmse
    overall: dict = {}
    per_node: dict = {}
    win: dict = {}
    groups: dict = {}
    for r in ok:
        if r.scenario_id == TRUE_SCENARIO:
            continue
        groups.setdefault((r.variant, r.kg_method, r.kind), []).append(r)
    for key, rs in sorted(groups.items()):
        vals = np.array([r.rmse for r in rs])
        overall[key] = (float(vals.mean()), len(rs))
        nodes: dict = {}
        for r in rs:
            nodes.setdefault(r.anchor, []).append(r.rmse)
        per_node[key] = {a: float(np.mean(v)) for a, v in sorted(nodes.items())}
        if key[0] != "baseline":
            scored = 0.0
            n = 0
            for r in rs:
                if r.scenario_id in baseline:
                    n += 1
                    if r.rmse < baseline[r.scenario_id]:
                        scored += 1.0
                    elif r.rmse == baseline[r.scenario_id]:
                        scored += 0.5
            win[key] = (scored / n if n else float("nan"), n)
    return {
        "reference": reference,
        "overall": overall,
        "per_node": per_node,
        "win_rates": win,
    }


def write_summary_files(summary: dict, out_dir, per_node: bool = True) -> None:
    """Plain columnar plot-data files for the overall/per-node/win-rate views."""
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "summary.tsv"), "w") as fh:
        fh.write("# variant kg_method kind mean_rmse n\n")
        if summary["reference"] is not None:
            fh.write("baseline\tnone\ttrue\t%.17g\t1\n" % summary["reference"])
        for (variant, kg, kind), (mean, n) in sorted(summary["overall"].items()):
            fh.write(f"{variant}\t{kg}\t{kind}\t%.17g\t{n}\n" % mean)
    with open(os.path.join(out_dir, "win_rates.tsv"), "w") as fh:
        fh.write("# variant kg_method kind win_rate_vs_baseline n\n")
        for (variant, kg, kind), (rate, n) in sorted(summary["win_rates"].items()):
            fh.write(f"{variant}\t{kg}\t{kind}\t%.6f\t{n}\n" % rate)
    if not per_node:
        return
    kinds = sorted({k for (_, _, k) in summary["per_node"]})
    for kind in kinds:
        path = os.path.join(out_dir, f"per_node_{kind}.tsv")
        series = {
            (variant, kg): nodes
            for (variant, kg, k), nodes in summary["per_node"].items()
            if k == kind
        }
        anchors = sorted({a for nodes in series.values() for a in nodes})
        cols = sorted(series)
        with open(path, "w") as fh:
            fh.write("# node\t" + "\t".join(f"{v}|{kg}" for v, kg in cols) + "\n")
            for a in anchors:
                cells = [
                    "%.17g" % series[c][a] if a in series[c] else "nan" for c in cols
                ]
                fh.write(f"{a}\t" + "\t".join(cells) + "\n")
