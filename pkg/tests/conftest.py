import numpy as np
import pytest

from resilient_tgcn.datasets import generate_dataset, window
from resilient_tgcn.graphs import new_graph
from resilient_tgcn.powergrid import (
    PowerNetwork,
    ieee118_network,
    spring_layout,
    synth_load_profile,
)


@pytest.fixture(scope="session")
def ring6_net():
    g = new_graph(6, [(i, (i + 1) % 6) for i in range(6)])
    return PowerNetwork(
        graph=g,
        susceptance={e: 5.0 for e in g.edges},
        slack_bus=0,
        coordinates=spring_layout(g, seed=3),
    )


@pytest.fixture(scope="session")
def ring6_dataset(ring6_net):
    profile = synth_load_profile(6, 600, seed=1, noise_level=0.1, period=120)
    return generate_dataset(ring6_net, profile)


@pytest.fixture(scope="session")
def ring6_samples(ring6_dataset):
    return window(ring6_dataset, history=6, horizon=1)


@pytest.fixture(scope="session")
def ieee118():
    return ieee118_network()


@pytest.fixture(scope="session")
def desk_dataset(ieee118):
    """The IEEE-118 desk fixture: T=2000, fixed seed."""
    profile = synth_load_profile(118, 2000, seed=7, noise_level=0.1)
    return generate_dataset(ieee118, profile)


@pytest.fixture(scope="session")
def desk_train_dataset(desk_dataset):
    samples = window(desk_dataset, history=6, horizon=1)
    n_train = len(samples.train_idx)
    return desk_dataset.restrict(0, n_train + 6)


def random_graph(rng, n, p=0.4):
    edges = [
        (i, j) for i in range(n) for j in range(i + 1, n) if rng.random() < p
    ]
    return new_graph(n, edges)
