"""DC power flow over a susceptance network and synthetic phase-angle data.

The bundled IEEE 118-bus case provides the topology used throughout the
experiment harness; arbitrary networks load from the same text format.
"""

from __future__ import annotations

from dataclasses import dataclass
from importlib import resources

import numpy as np

from .graphs import Graph, connected_components, is_connected, new_graph

__all__ = [
    "PowerNetwork",
    "DisconnectedNetworkError",
    "dc_power_flow",
    "susceptance_matrix",
    "synth_load_profile",
    "spring_layout",
    "ieee118_network",
    "load_network",
    "save_network",
]


class DisconnectedNetworkError(RuntimeError):
    """The reduced susceptance system is singular; carries the stranded component."""

    def __init__(self, component):
        self.component = list(component)
        super().__init__(
            f"network is disconnected; component without slack: {self.component}"
        )


@dataclass(frozen=True)
class PowerNetwork:
    """Transmission network: topology, per-line susceptance, slack, layout."""

    graph: Graph
    susceptance: dict
    slack_bus: int
    coordinates: np.ndarray

    def __post_init__(self):
        n = self.graph.num_nodes
        if set(self.susceptance) != set(self.graph.edges):
            raise ValueError("susceptance must be defined for exactly the edge set")
        for edge, b in self.susceptance.items():
            if not (b > 0 and np.isfinite(b)):
                raise ValueError(f"susceptance of line {edge} must be positive, got {b}")
        if not (0 <= self.slack_bus < n):
            raise ValueError(f"slack bus {self.slack_bus} out of range for {n} buses")
        coords = np.asarray(self.coordinates, dtype=np.float64)
        if coords.shape != (n, 2) or not np.isfinite(coords).all():
            raise ValueError(f"coordinates must be a finite ({n}, 2) array")
        object.__setattr__(self, "coordinates", coords)

    @property
    def num_buses(self) -> int:
        return self.graph.num_nodes


def susceptance_matrix(net: PowerNetwork) -> np.ndarray:
    """Nodal susceptance matrix B': off-diagonal -b_ij, diagonal sum of incident b."""
    n = net.num_buses
    b = np.zeros((n, n))
    for (i, j), bij in net.susceptance.items():
        b[i, j] -= bij
        b[j, i] -= bij
        b[i, i] += bij
        b[j, j] += bij
    return b


def _solve_reduced(net: PowerNetwork, p_reduced: np.ndarray) -> np.ndarray:
    if not is_connected(net.graph):
        for comp in connected_components(net.graph):
            if net.slack_bus not in comp:
                raise DisconnectedNetworkError(comp)
    n = net.num_buses
    keep = [i for i in range(n) if i != net.slack_bus]
    b_red = susceptance_matrix(net)[np.ix_(keep, keep)]
    return np.linalg.solve(b_red, p_reduced)


def dc_power_flow(net: PowerNetwork, injections) -> np.ndarray:
    """Solve B' theta = P with theta[slack] = 0.

    Only non-slack injections enter the solve; the slack bus absorbs any
    imbalance, so the effective injection vector is always balanced.
    """
    p = np.asarray(injections, dtype=np.float64)
    if p.shape != (net.num_buses,):
        raise ValueError(f"injections must have shape ({net.num_buses},), got {p.shape}")
    keep = [i for i in range(net.num_buses) if i != net.slack_bus]
    theta = np.zeros(net.num_buses)
    theta[keep] = _solve_reduced(net, p[keep])
    return theta


def angles_for_profile(net: PowerNetwork, profile: np.ndarray) -> np.ndarray:
    """DC angles for every time step of an (N, T) injection profile (one solve)."""
    p = np.asarray(profile, dtype=np.float64)
    if p.ndim != 2 or p.shape[0] != net.num_buses:
        raise ValueError(f"profile must be ({net.num_buses}, T), got {p.shape}")
    keep = [i for i in range(net.num_buses) if i != net.slack_bus]
    theta = np.zeros_like(p)
    theta[keep, :] = _solve_reduced(net, p[keep, :])
    return theta


def synth_load_profile(num_buses: int, length: int, seed: int,
                       base_amplitude: float = 1.0, noise_level: float = 0.1,
                       period: int = 240, num_zones: int | None = None) -> np.ndarray:
    """Smooth diurnal-like injections, balanced to zero net at every step.

    Every bus carries a primary harmonic mixture scaled per bus plus a
    smaller secondary mixture and seeded Gaussian noise. Setting
    ``num_zones`` below ``num_buses`` groups buses into contiguous zones
    sharing their primary mixture, the way utility load profiles are
    zonal. With ``noise_level=0`` the signal is exactly periodic in
    ``period`` steps (one cycle is computed and tiled).
    """
    if length < 1:
        raise ValueError("length must be >= 1")
    if num_zones is None:
        num_zones = num_buses
    if not (1 <= num_zones <= num_buses):
        raise ValueError(f"num_zones must be in [1, {num_buses}], got {num_zones}")
    rng = np.random.default_rng(seed)
    harmonics = np.array([1.0, 2.0, 5.0])
    t = np.arange(period)

    def mixture(rows, amp_scale):
        amps = amp_scale * rng.uniform(0.3, 1.0, size=(rows, 3)) * np.array([1.0, 0.4, 0.2])
        phases = rng.uniform(0.0, 2.0 * np.pi, size=(rows, 3))
        out = np.zeros((rows, period))
        for k in range(3):
            arg = 2.0 * np.pi * harmonics[k] * t / period + phases[:, k:k + 1]
            out += amps[:, k:k + 1] * np.sin(arg)
        return out

    zone_cycle = mixture(num_zones, base_amplitude)
    zone_of = np.minimum(np.arange(num_buses) * num_zones // num_buses, num_zones - 1)
    bus_scale = rng.uniform(0.5, 1.5, size=(num_buses, 1))
    cycle = bus_scale * zone_cycle[zone_of] + mixture(num_buses, 0.25 * base_amplitude)
    reps = int(np.ceil(length / period))
    signal = np.tile(cycle, reps)[:, :length]
    if noise_level > 0:
        signal = signal + noise_level * base_amplitude * rng.standard_normal((num_buses, length))
    signal = signal - signal.mean(axis=0, keepdims=True)
    return signal


def spring_layout(graph: Graph, seed: int = 0, iterations: int = 300,
                  box: float = 1000.0) -> np.ndarray:
    """Deterministic Fruchterman-Reingold layout, affine-scaled into [0, box]^2."""
    n = graph.num_nodes
    rng = np.random.default_rng(seed)
    pos = rng.uniform(0.0, 1.0, size=(n, 2))
    if n == 1:
        return np.zeros((1, 2))
    k = 1.0 / np.sqrt(n)
    adj = graph.adjacency
    temp = 0.1
    cooling = temp / (iterations + 1)
    for _ in range(iterations):
        delta = pos[:, None, :] - pos[None, :, :]
        dist = np.sqrt((delta ** 2).sum(axis=2))
        np.fill_diagonal(dist, 1.0)
        dist = np.maximum(dist, 1e-9)
        repulse = (k * k) / (dist * dist)
        attract = adj * dist / k
        coef = (repulse - attract) / dist
        disp = (coef[:, :, None] * delta).sum(axis=1)
        length = np.maximum(np.sqrt((disp ** 2).sum(axis=1, keepdims=True)), 1e-9)
        pos += disp / length * np.minimum(length, temp)
        temp -= cooling
    lo = pos.min(axis=0)
    hi = pos.max(axis=0)
    span = np.maximum(hi - lo, 1e-12)
    return (pos - lo) / span * box


def save_network(net: PowerNetwork, path) -> None:
    """Write the sectioned network text format ([slack] / [edges] / [coords])."""
    with open(path, "w") as fh:
        fh.write(f"# power network, {net.num_buses} buses, 0-based indices\n")
        fh.write("[slack]\n")
        fh.write(f"{net.slack_bus}\n")
        fh.write("[edges]\n")
        for i, j in net.graph.sorted_edges():
            fh.write(f"{i} {j} {net.susceptance[(i, j)]:.12g}\n")
        fh.write("[coords]\n")
        for i in range(net.num_buses):
            fh.write(f"{i} {net.coordinates[i, 0]:.12g} {net.coordinates[i, 1]:.12g}\n")


def _parse_network_text(lines) -> PowerNetwork:
    slack = None
    raw_edges = []
    coords = {}
    section = None
    for lineno, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("["):
            section = line.strip("[]").lower()
            continue
        parts = line.split()
        if section == "slack":
            slack = int(parts[0])
        elif section == "edges":
            if len(parts) != 3:
                raise ValueError(f"line {lineno}: expected `i j b`, got {line!r}")
            raw_edges.append((int(parts[0]), int(parts[1]), float(parts[2])))
        elif section == "coords":
            if len(parts) != 3:
                raise ValueError(f"line {lineno}: expected `i x y`, got {line!r}")
            coords[int(parts[0])] = (float(parts[1]), float(parts[2]))
        else:
            raise ValueError(f"line {lineno}: content outside a known section: {line!r}")
    if slack is None or not raw_edges or not coords:
        raise ValueError("network file needs [slack], [edges] and [coords] sections")
    num = max(coords) + 1
    # parallel circuits collapse to one edge; susceptances add in parallel
    sus: dict = {}
    for i, j, b in raw_edges:
        key = (i, j) if i < j else (j, i)
        sus[key] = sus.get(key, 0.0) + b
    graph = new_graph(num, list(sus))
    xy = np.zeros((num, 2))
    for i, (x, y) in coords.items():
        xy[i] = (x, y)
    return PowerNetwork(graph=graph, susceptance=sus, slack_bus=slack, coordinates=xy)


def load_network(path) -> PowerNetwork:
    with open(path) as fh:
        return _parse_network_text(fh)


def ieee118_network() -> PowerNetwork:
    """The bundled IEEE 118-bus system: 186 raw lines, 179 unique links after
    collapsing the 7 parallel circuits; slack at bus 68 (0-based)."""
    text = resources.files("resilient_tgcn.data").joinpath("ieee118.txt").read_text()
    return _parse_network_text(text.splitlines())
