"""Topology-resilient temporal graph-convolutional state estimation.

Estimators (`TgcnRegressor`, `KgimRegressor`, `PkgimRegressor`) follow the
scikit-learn fit/predict convention; the experiment harness lives in
`resilient_tgcn.sweep` and behind the `resilient-tgcn` CLI.
"""

from .autodiff import DivergenceError, finite_difference_check
from .datasets import (
    SampleSet,
    TimeSeriesDataset,
    generate_dataset,
    load_csv_dataset,
    save_csv_dataset,
    window,
)
from .graphs import (
    Graph,
    edge_overlap,
    is_connected,
    load_edge_list,
    new_graph,
    normalized_adjacency,
    or_merge,
    save_edge_list,
)
from .knowledge import (
    KgConfig,
    build_kg,
    calibrate_kg_threshold,
    cosine_kg,
    gat_kg,
    pearson_kg,
)
from .powergrid import (
    PowerNetwork,
    dc_power_flow,
    ieee118_network,
    load_network,
    save_network,
    synth_load_profile,
)
from .resilient import (
    VARIANTS,
    KgimRegressor,
    PkgimRegressor,
    make_model,
)
from .scenarios import (
    ScenarioSpec,
    apply_scenario,
    calibrate_radius,
    enumerate_additions,
    enumerate_removals,
)
from .sweep import ReportRow, SweepConfig, run_sweep, summarize
from .tgcn import TgcnRegressor, rmse

__version__ = "0.1.0"
