"""Road network environment, link/path costs and cost-sequence richness checks."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from typing import Optional, Sequence

import numpy as np

RANK_RTOL = 1e-8


@dataclass(frozen=True)
class Link:
    id: int
    tail: int
    head: int
    fft: float
    cap: float

    def __post_init__(self):
        if not (self.fft > 0 and self.cap > 0):
            raise ValueError(f"link {self.id}: free-flow time and capacity must be positive")


@dataclass(frozen=True)
class ODPair:
    id: str
    origin: int
    destination: int
    demand: float
    paths: tuple  # tuple of tuples of link ids


@dataclass(frozen=True)
class Network:
    nodes: tuple
    links: tuple
    od_pairs: tuple
    study_od: Optional[str] = None

    def __post_init__(self):
        by_id = {lk.id: lk for lk in self.links}
        for od in self.od_pairs:
            for path in od.paths:
                node = od.origin
                for lid in path:
                    if lid not in by_id:
                        raise ValueError(f"OD {od.id}: unknown link id {lid}")
                    lk = by_id[lid]
                    if lk.tail != node:
                        raise ValueError(f"OD {od.id}: path {path} is not connected at link {lid}")
                    node = lk.head
                if node != od.destination:
                    raise ValueError(f"OD {od.id}: path {path} does not end at {od.destination}")

    @property
    def n_links(self) -> int:
        return len(self.links)

    def od(self, od_id: str) -> ODPair:
        for od in self.od_pairs:
            if od.id == od_id:
                return od
        raise KeyError(od_id)

    def background_ods(self) -> list:
        return [od for od in self.od_pairs if od.id != self.study_od]

    def link_index(self) -> dict:
        return {lk.id: k for k, lk in enumerate(self.links)}

    def incidence(self, od_id: str) -> np.ndarray:
        """Path-by-link 0/1 matrix for one OD pair (links in storage order)."""
        idx = self.link_index()
        od = self.od(od_id)
        A = np.zeros((len(od.paths), self.n_links))
        for p, path in enumerate(od.paths):
            for lid in path:
                A[p, idx[lid]] += 1.0
        return A

    def to_dict(self) -> dict:
        return {
            "nodes": list(self.nodes),
            "links": [
                {"id": lk.id, "tail": lk.tail, "head": lk.head, "fft": lk.fft, "cap": lk.cap}
                for lk in self.links
            ],
            "od_pairs": [
                {
                    "id": od.id,
                    "origin": od.origin,
                    "destination": od.destination,
                    "demand": od.demand,
                    "paths": [list(p) for p in od.paths],
                }
                for od in self.od_pairs
            ],
            "study_od": self.study_od,
        }


def network_from_dict(d: dict) -> Network:
    links = tuple(
        Link(int(x["id"]), int(x["tail"]), int(x["head"]), float(x["fft"]), float(x["cap"]))
        for x in d["links"]
    )
    ods = []
    for k, x in enumerate(d["od_pairs"]):
        od_id = str(x.get("id", f"{x['origin']}-{x['destination']}"))
        ods.append(
            ODPair(
                od_id,
                int(x["origin"]),
                int(x["destination"]),
                float(x["demand"]),
                tuple(tuple(int(l) for l in p) for p in x["paths"]),
            )
        )
    return Network(tuple(d["nodes"]), links, tuple(ods), d.get("study_od"))


def load_network(path) -> Network:
    with open(path) as fh:
        return network_from_dict(json.load(fh))


def save_network(network: Network, path) -> None:
    with open(path, "w") as fh:
        json.dump(network.to_dict(), fh, indent=1)


@lru_cache(maxsize=1)
def build_nd_network() -> Network:
    """The Nguyen-Dupuis network shipped with the package.

    Background OD pairs are 1->2, 1->3, 4->2 and 4->3; the study OD 5->11
    has the three paths 5-7-11, 5-9-11 and 5-6-10-11. Free-flow times and
    capacities are a fixed canonical choice (see README), not published values.
    """
    text = resources.files("d2dbayes").joinpath("data/nguyen_dupuis.json").read_text()
    return network_from_dict(json.loads(text))


def link_cost(link: Link, flow, a: float = 0.15, b: float = 4.0):
    """BPR travel time ``fft * (1 + a (flow/cap)^b)``; vectorises over ``flow``."""
    flow = np.asarray(flow, dtype=float)
    if np.any(flow < 0):
        raise ValueError("link flow must be nonnegative")
    out = link.fft * (1.0 + a * (flow / link.cap) ** b)
    return float(out) if out.ndim == 0 else out


def link_costs(network: Network, flows: np.ndarray, a: float = 0.15, b: float = 4.0) -> np.ndarray:
    """All link costs for a flow vector in link storage order."""
    flows = np.asarray(flows, dtype=float)
    if np.any(flows < 0):
        raise ValueError("link flow must be nonnegative")
    fft = np.array([lk.fft for lk in network.links])
    cap = np.array([lk.cap for lk in network.links])
    return fft * (1.0 + a * (flows / cap) ** b)


def path_costs(network: Network, link_flows, od_id: Optional[str] = None, a: float = 0.15, b: float = 4.0):
    """Per-path costs for ``od_id`` (default: the study OD).

    ``link_flows`` is a mapping link id -> flow covering every link, or an
    array in link storage order.
    """
    if isinstance(link_flows, dict):
        ids = {lk.id for lk in network.links}
        unknown = set(link_flows) - ids
        if unknown:
            raise KeyError(f"unknown link id(s): {sorted(unknown)}")
        missing = ids - set(link_flows)
        if missing:
            raise KeyError(f"link flows missing for link id(s): {sorted(missing)}")
        flows = np.array([link_flows[lk.id] for lk in network.links], dtype=float)
    else:
        flows = np.asarray(link_flows, dtype=float)
        if flows.shape != (network.n_links,):
            raise ValueError(f"expected {network.n_links} link flows, got shape {flows.shape}")
    od_id = od_id or network.study_od
    return network.incidence(od_id) @ link_costs(network, flows, a, b)


@dataclass(frozen=True)
class CostSequence:
    """Exogenous per-day route costs (T x M, minutes) for one OD pair."""

    costs: np.ndarray
    od_id: str = "0"
    bound: float = np.inf

    def __post_init__(self):
        c = np.array(self.costs, dtype=float)
        if c.ndim != 2:
            raise ValueError("costs must be a T x M matrix")
        if c.shape[0] < 1 or c.shape[1] < 2:
            raise ValueError(f"need T >= 1 and M >= 2, got {c.shape}")
        if not np.all(np.isfinite(c)):
            raise ValueError("costs must be finite")
        if np.any(c < 0) or np.any(c > self.bound):
            raise ValueError(f"costs must lie in [0, {self.bound}]")
        c.setflags(write=False)
        object.__setattr__(self, "costs", c)

    @property
    def T(self) -> int:
        return self.costs.shape[0]

    @property
    def M(self) -> int:
        return self.costs.shape[1]

    def window(self, start: int, stop: int) -> "CostSequence":
        return CostSequence(self.costs[start:stop], self.od_id, self.bound)


@dataclass(frozen=True)
class RichnessReport:
    dynamic_richness: bool
    witness_pair: Optional[tuple]
    strong_richness: bool
    rank: int
    notes: tuple = field(default_factory=tuple)


def check_richness(costs, v1, atol: float = 0.0) -> RichnessReport:
    """Check the cost-difference conditions that govern identifiability.

    Dynamic richness holds if some day ``t`` and routes ``i < j`` have
    ``c_t(i) - c_t(j) != V1(i) - V1(j)`` (beyond ``atol``). The witness is the
    first such ``(i, j, t)`` in lexicographic ``(t, i, j)`` order, reported
    1-based. Strong richness needs rank >= 3 among the difference vectors
    ``c_t(.) - c_t(1)``; singular values below ``1e-8 * max`` count as zero.
    """
    c = costs.costs if isinstance(costs, CostSequence) else np.asarray(costs, dtype=float)
    v1 = np.asarray(v1, dtype=float)
    T, M = c.shape
    if v1.shape != (M,):
        raise ValueError(f"v1 has length {v1.shape}, cost sequence has M={M}")

    witness = None
    dv = v1[:, None] - v1[None, :]
    for t in range(T):
        dc = c[t][:, None] - c[t][None, :]
        hit = np.argwhere(np.abs(dc - dv) > atol)
        hit = hit[hit[:, 0] < hit[:, 1]]
        if len(hit):
            i, j = hit[0]
            witness = (int(i) + 1, int(j) + 1, t + 1)
            break

    D = c[:, 1:] - c[:, :1]
    s = np.linalg.svd(D, compute_uv=False)
    rank = int(np.sum(s > RANK_RTOL * s[0])) if s.size and s[0] > 0 else 0

    notes = ()
    if M <= 3:
        notes = ("strong richness needs rank >= 3, impossible with M <= 3 routes",)
    return RichnessReport(witness is not None, witness, rank >= 3, rank, notes)
