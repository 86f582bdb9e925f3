"""Synthetic transaction streams, trace files, and contract placement.

The generator stands in for a mainnet replay: traces are linear call
chains over Zipf-popular contracts with uniform slot access, and the
default call-count distribution is a truncated geometric tuned to a
mean of 8.94 inter-contract calls with P(calls > 2) >= 0.70.
"""

from __future__ import annotations

import random
import re
from bisect import bisect_right
from dataclasses import dataclass, field, replace
from pathlib import Path

from .model import (CallStep, ComputeStep, MalformedTransaction, Placement,
                    ReadStep, Step, StorageKey, Transaction, WriteStep, mix)

SLOTS_PER_CONTRACT = 256  # keeps state-level conflicts strictly rarer than contract-level

# Calibrated so that mean cross-shard bytes per txn under the default call
# distribution land near 177 B at 2 shards and 322 B at 64 shards.
DEFAULT_MEAN_PAYLOAD_BYTES = 24
DEFAULT_MEAN_RETURN_BYTES = 14
DEFAULT_MEAN_CALLS = 8.94
MAX_CALLS = 32


class WorkloadError(ValueError):
    pass


def truncated_geometric_pmf(mean: float, cap: int = MAX_CALLS) -> tuple[float, ...]:
    """Geometric pmf on {0..cap} with success probability solved by bisection
    so the truncated mean equals `mean`."""
    if not 0 < mean < cap:
        raise WorkloadError(f"mean {mean} out of range (0, {cap})")

    def truncated_mean(p: float) -> float:
        weights = [(1 - p) ** k * p for k in range(cap + 1)]
        total = sum(weights)
        return sum(k * w for k, w in enumerate(weights)) / total

    lo, hi = 1e-9, 1 - 1e-9
    for _ in range(200):
        mid = (lo + hi) / 2
        if truncated_mean(mid) > mean:
            lo = mid
        else:
            hi = mid
    p = (lo + hi) / 2
    weights = [(1 - p) ** k * p for k in range(cap + 1)]
    total = sum(weights)
    return tuple(w / total for w in weights)


def pmf_mean(pmf: tuple[float, ...]) -> float:
    return sum(k * w for k, w in enumerate(pmf))


@dataclass(frozen=True)
class WorkloadParams:
    n_txns: int
    n_contracts: int
    call_count_pmf: tuple[float, ...]
    hotness_skew: float = 1.0
    mean_compute_ms: float = 2.0
    mean_payload_bytes: int = DEFAULT_MEAN_PAYLOAD_BYTES
    mean_return_bytes: int = DEFAULT_MEAN_RETURN_BYTES
    issue_rate_tps: float = 200.0
    reads_per_segment: int = 2
    write_probability: float = 0.4
    rng_seed: int = 0

    def validate(self) -> None:
        if self.n_txns <= 0:
            raise WorkloadError("n_txns must be positive")
        if self.n_contracts <= 0:
            raise WorkloadError("n_contracts must be positive")
        if abs(sum(self.call_count_pmf) - 1.0) > 1e-9:
            raise WorkloadError("call_count_pmf must sum to 1")
        if self.hotness_skew < 0:
            raise WorkloadError("hotness_skew must be >= 0")


def default_params(n_txns: int = 10_000, n_contracts: int = 1000,
                   seed: int = 0, **overrides) -> WorkloadParams:
    return replace(
        WorkloadParams(n_txns=n_txns, n_contracts=n_contracts,
                       call_count_pmf=truncated_geometric_pmf(DEFAULT_MEAN_CALLS),
                       rng_seed=seed),
        **overrides)


def uniform_params(n_txns: int, n_contracts: int = 1200, seed: int = 0,
                   **overrides) -> WorkloadParams:
    """Low-contention preset: flat contract popularity."""
    return replace(
        WorkloadParams(n_txns=n_txns, n_contracts=n_contracts,
                       call_count_pmf=truncated_geometric_pmf(3.0),
                       hotness_skew=0.0, rng_seed=seed),
        **overrides)


def conflict_heavy_params(n_txns: int, n_contracts: int = 60, seed: int = 0,
                          **overrides) -> WorkloadParams:
    """High-contention preset: few contracts, strong skew, write-heavy."""
    return replace(
        WorkloadParams(n_txns=n_txns, n_contracts=n_contracts,
                       call_count_pmf=truncated_geometric_pmf(3.0),
                       hotness_skew=1.3, write_probability=0.5, rng_seed=seed),
        **overrides)


class _ZipfSampler:
    """Zipf(exponent) over {0..n-1} via inverse CDF lookup. exponent=0 is uniform."""

    def __init__(self, n: int, exponent: float):
        weights = [1.0 / (i + 1) ** exponent for i in range(n)]
        total = sum(weights)
        cdf, cum = [], 0.0
        for w in weights:
            cum += w / total
            cdf.append(cum)
        cdf[-1] = 1.0
        self._cdf = cdf

    def sample(self, rng: random.Random) -> int:
        return bisect_right(self._cdf, rng.random())


def _sample_pmf(pmf: tuple[float, ...], rng: random.Random) -> int:
    u = rng.random()
    cum = 0.0
    for k, w in enumerate(pmf):
        cum += w
        if u < cum:
            return k
    return len(pmf) - 1


def generate(params: WorkloadParams) -> list[Transaction]:
    """Deterministic synthetic stream: seed fully determines output."""
    params.validate()
    rng = random.Random(f"workload:{params.rng_seed}")
    contracts = _ZipfSampler(params.n_contracts, params.hotness_skew)
    txns = []
    issue = 0.0
    for i in range(params.n_txns):
        issue += rng.expovariate(params.issue_rate_tps) * 1000.0
        txns.append(_generate_txn(i, issue, params, rng, contracts))
    return txns


def _segment_steps(contract: int, params: WorkloadParams,
                   rng: random.Random) -> list[Step]:
    steps: list[Step] = []
    n_reads = rng.randint(1, params.reads_per_segment)
    for _ in range(n_reads):
        steps.append(ReadStep(StorageKey(contract, rng.randrange(SLOTS_PER_CONTRACT))))
    steps.append(ComputeStep(round(rng.expovariate(1.0 / params.mean_compute_ms), 3)))
    if rng.random() < params.write_probability:
        steps.append(WriteStep(StorageKey(contract, rng.randrange(SLOTS_PER_CONTRACT))))
    return steps


def _generate_txn(txn_id: int, issue: float, params: WorkloadParams,
                  rng: random.Random, contracts: _ZipfSampler) -> Transaction:
    n_calls = _sample_pmf(params.call_count_pmf, rng)
    current = contracts.sample(rng)
    steps = _segment_steps(current, params, rng)
    for _ in range(n_calls):
        target = contracts.sample(rng)
        if params.n_contracts > 1:
            while target == current:
                target = contracts.sample(rng)
        payload = max(1, int(rng.expovariate(1.0 / params.mean_payload_bytes)))
        ret = max(1, int(rng.expovariate(1.0 / params.mean_return_bytes)))
        steps.append(CallStep(target, payload, ret))
        steps.extend(_segment_steps(target, params, rng))
        current = target
    txn = Transaction(txn_id=txn_id, issue_time=round(issue, 3),
                      trace=tuple(steps), fee=rng.randint(1, 100))
    txn.validate(params.n_contracts)
    return txn


# ---------------------------------------------------------------------------
# Trace files
# ---------------------------------------------------------------------------
#
# Newline-delimited, UTF-8.  Non-empty files start with `contracts N`;
# each following line is one transaction:
#
#   <txn_id> <issue_time_ms> <fee> <step> <step> ...
#
# with steps R(c,s) | W(c,s) | X(cost_ms) | C(c,payload_bytes,return_bytes).

class TraceFormatError(ValueError):
    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


_STEP_RE = re.compile(r"^([RWXC])\(([^)]*)\)$")


def _format_step(step: Step) -> str:
    if isinstance(step, ReadStep):
        return f"R({step.key.contract},{step.key.slot})"
    if isinstance(step, WriteStep):
        return f"W({step.key.contract},{step.key.slot})"
    if isinstance(step, ComputeStep):
        return f"X({step.cost_ms:g})"
    return f"C({step.target},{step.payload_bytes},{step.return_bytes})"


def save_trace(txns: list[Transaction], n_contracts: int, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"contracts {n_contracts}\n")
        for txn in txns:
            steps = " ".join(_format_step(s) for s in txn.trace)
            fh.write(f"{txn.txn_id} {txn.issue_time:g} {txn.fee} {steps}\n")


def _parse_step(token: str, line_no: int) -> Step:
    m = _STEP_RE.match(token)
    if not m:
        raise TraceFormatError(line_no, f"bad step {token!r}")
    kind, body = m.groups()
    parts = body.split(",")
    try:
        if kind == "R":
            c, s = (int(p) for p in parts)
            return ReadStep(StorageKey(c, s))
        if kind == "W":
            c, s = (int(p) for p in parts)
            return WriteStep(StorageKey(c, s))
        if kind == "X":
            (cost,) = parts
            return ComputeStep(float(cost))
        c, pb, rb = (int(p) for p in parts)
        return CallStep(c, pb, rb)
    except (ValueError, TypeError):
        raise TraceFormatError(line_no, f"bad step {token!r}") from None


def load_trace(path) -> tuple[list[Transaction], int]:
    """Parse a trace file; returns (transactions, declared contract count)."""
    txns: list[Transaction] = []
    n_contracts = None
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if n_contracts is None:
                parts = line.split()
                if parts[0] != "contracts" or len(parts) != 2:
                    raise TraceFormatError(line_no, "expected `contracts N` header")
                try:
                    n_contracts = int(parts[1])
                except ValueError:
                    raise TraceFormatError(line_no, "bad contract count") from None
                continue
            tokens = line.split()
            if len(tokens) < 4:
                raise TraceFormatError(line_no, "expected txn_id issue_time fee steps...")
            try:
                txn_id = int(tokens[0])
                issue_time = float(tokens[1])
                fee = int(tokens[2])
            except ValueError:
                raise TraceFormatError(line_no, "bad txn header fields") from None
            steps = tuple(_parse_step(t, line_no) for t in tokens[3:])
            txn = Transaction(txn_id, issue_time, steps, fee)
            try:
                txn.validate(n_contracts)
            except MalformedTransaction as exc:
                raise TraceFormatError(line_no, str(exc)) from None
            txns.append(txn)
    return txns, (n_contracts if n_contracts is not None else 0)


# ---------------------------------------------------------------------------
# Placement
# ---------------------------------------------------------------------------

def place_contracts(n_contracts: int, n_shards: int, seed: int = 0) -> Placement:
    """Deterministic hash-based assignment: contracts ranked by a seeded hash,
    rank mod n_shards.  Balanced by construction, and same-shard pairs under
    2s shards remain same-shard under s, so cross-shard fraction is monotone
    along a doubling sweep."""
    if n_shards < 1:
        raise WorkloadError("n_shards must be >= 1")
    ranked = sorted(range(n_contracts), key=lambda c: (mix(c, seed), c))
    shard_of = [0] * n_contracts
    for rank, contract in enumerate(ranked):
        shard_of[contract] = rank % n_shards
    return Placement(tuple(shard_of), n_shards)
