"""Deterministic simulation substrate: clock, event queue, links, node
assignment, the intra-shard consensus abstraction, and the shard
fault-probability calculator.

Consensus is a single latency draw plus an honesty verdict; anything
BFT-internal is out of scope.  All randomness flows through seeded
`random.Random` instances so a run is a pure function of its config.
"""

from __future__ import annotations

import heapq
import math
import random
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Iterator, Optional

from .model import Attestation, mix


class SimError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ConsensusLatencyModel:
    kind: str = "lognormal"  # "fixed" | "lognormal"
    median_ms: float = 500.0
    sigma: float = 0.5

    def sample(self, rng: random.Random) -> float:
        if self.kind == "fixed":
            return self.median_ms
        return rng.lognormvariate(math.log(self.median_ms), self.sigma)

    @staticmethod
    def parse(text: str) -> "ConsensusLatencyModel":
        kind, _, rest = text.partition(":")
        if kind == "fixed":
            return ConsensusLatencyModel("fixed", float(rest), 0.0)
        if kind == "lognormal":
            median, sigma = rest.split(",")
            return ConsensusLatencyModel("lognormal", float(median), float(sigma))
        raise SimError(f"unknown consensus latency model {text!r}")


@dataclass(frozen=True)
class SimConfig:
    n_shards: int = 4
    nodes_per_shard: int = 10
    link_latency_ms: float = 100.0
    link_bandwidth_mbps: float = 20.0
    consensus_latency: ConsensusLatencyModel = ConsensusLatencyModel()
    fault_threshold_v: Fraction = Fraction(1, 3)
    malicious_fraction: float = 0.0
    security_lambda: int = 17
    rng_seed: int = 0

    def validate(self) -> list[str]:
        """Raise on invalid values; return warnings for meaningful-but-odd ones."""
        if self.n_shards < 1 or self.nodes_per_shard < 1:
            raise SimError("n_shards and nodes_per_shard must be >= 1")
        if self.link_latency_ms < 0 or self.link_bandwidth_mbps <= 0:
            raise SimError("link parameters must be positive")
        if not 0 <= self.malicious_fraction <= 1:
            raise SimError("malicious_fraction must be in [0, 1]")
        if self.fault_threshold_v not in (Fraction(1, 3), Fraction(1, 2)):
            raise SimError("fault_threshold_v must be 1/3 or 1/2")
        warnings = []
        if self.malicious_fraction >= float(self.fault_threshold_v):
            warnings.append(
                f"malicious_fraction {self.malicious_fraction} >= fault threshold "
                f"{self.fault_threshold_v}; shards will routinely be unsafe")
        return warnings


def transfer_time(n_bytes: int, config: SimConfig) -> float:
    """One-way link time in ms: propagation latency plus serialization."""
    if n_bytes < 0:
        raise SimError("negative byte count")
    return config.link_latency_ms + n_bytes * 8.0 / (config.link_bandwidth_mbps * 1000.0)


# ---------------------------------------------------------------------------
# Event queue
# ---------------------------------------------------------------------------

@dataclass(frozen=True, order=True)
class SimEvent:
    fire_time: float
    seq_no: int
    kind: str = field(compare=False)
    payload: Any = field(compare=False, default=None)


class EventQueue:
    """Total (fire_time, seq_no) order; the clock never moves backwards."""

    def __init__(self) -> None:
        self._heap: list[SimEvent] = []
        self._seq = 0
        self.now = 0.0

    def schedule(self, fire_time: float, kind: str, payload: Any = None) -> SimEvent:
        if fire_time < self.now:
            raise SimError(f"cannot schedule {kind} at {fire_time} before now={self.now}")
        event = SimEvent(fire_time, self._seq, kind, payload)
        self._seq += 1
        heapq.heappush(self._heap, event)
        return event

    def schedule_after(self, delay_ms: float, kind: str, payload: Any = None) -> SimEvent:
        return self.schedule(self.now + delay_ms, kind, payload)

    def next(self) -> Optional[SimEvent]:
        if not self._heap:
            return None
        event = heapq.heappop(self._heap)
        self.now = event.fire_time
        return event

    def __bool__(self) -> bool:
        return bool(self._heap)

    def __iter__(self) -> Iterator[SimEvent]:
        while True:
            event = self.next()
            if event is None:
                return
            yield event


# ---------------------------------------------------------------------------
# Nodes and consensus
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class NodeAssignment:
    shard_of_node: tuple[int, ...]
    malicious: frozenset[int]

    def nodes_of_shard(self, shard_id: int) -> list[int]:
        return [n for n, s in enumerate(self.shard_of_node) if s == shard_id]

    def malicious_fraction_of(self, shard_id: int) -> Fraction:
        members = self.nodes_of_shard(shard_id)
        bad = sum(1 for n in members if n in self.malicious)
        return Fraction(bad, len(members))

    def is_malicious(self, node_id: int) -> bool:
        return node_id in self.malicious


def assign_nodes(config: SimConfig, rng: Optional[random.Random] = None) -> NodeAssignment:
    """Uniform random partition into shards of exactly nodes_per_shard;
    malicious flags i.i.d. with the global fraction."""
    rng = rng or random.Random(f"assign:{config.rng_seed}")
    total = config.n_shards * config.nodes_per_shard
    nodes = list(range(total))
    rng.shuffle(nodes)
    shard_of = [0] * total
    for i, node in enumerate(nodes):
        shard_of[node] = i // config.nodes_per_shard
    malicious = frozenset(n for n in range(total)
                          if rng.random() < config.malicious_fraction)
    return NodeAssignment(tuple(shard_of), malicious)


def shard_is_honest(shard_id: int, assignment: NodeAssignment,
                    config: SimConfig) -> bool:
    return assignment.malicious_fraction_of(shard_id) <= config.fault_threshold_v


def run_consensus(shard_id: int, payload_digest: int, assignment: NodeAssignment,
                  config: SimConfig, rng: random.Random) -> tuple[Attestation, float]:
    """One intra-shard consensus: a latency draw plus an honesty verdict.

    The returned attestation is the only way the model mints one, so
    forgery cannot occur; a dishonest shard's payload handling is the
    caller's adversary hook.
    """
    latency = config.consensus_latency.sample(rng)
    honest = shard_is_honest(shard_id, assignment, config)
    return Attestation(issuer=shard_id, honest=honest,
                       payload_digest=payload_digest & ((1 << 64) - 1)), latency


# ---------------------------------------------------------------------------
# Shard failure probability
# ---------------------------------------------------------------------------

def shard_failure_probability(total_nodes: int, shard_size: int,
                              malicious_count: int, v: Fraction) -> float:
    """Exact hypergeometric tail P[X > v*m] for X = malicious nodes drawn
    into one shard of size m from a population with `malicious_count` bad
    nodes.  Computed with exact rationals, rounded to float on return."""
    if not 0 <= malicious_count <= total_nodes:
        raise SimError("malicious_count out of range")
    if not 1 <= shard_size <= total_nodes:
        raise SimError("shard_size out of range")
    v = Fraction(v)
    total = Fraction(0)
    denom = math.comb(total_nodes, shard_size)
    k_lo = max(0, shard_size - (total_nodes - malicious_count))
    k_hi = min(shard_size, malicious_count)
    for k in range(k_lo, k_hi + 1):
        if Fraction(k, shard_size) > v:
            total += Fraction(math.comb(malicious_count, k)
                              * math.comb(total_nodes - malicious_count, shard_size - k),
                              denom)
    return float(total)
