"""Core domain types: transactions, read/write sets, profiles, orders, blocks, proofs.

Execution semantics live here too.  A transaction is a linear chain of
contract segments separated by ``Call`` steps; a 64-bit accumulator is
threaded through every step so that re-execution is reproducible without
a real contract VM.  Call parameters are the accumulator at the call
site, the call return is the accumulator at the end of the callee's
segment.  Both the monolithic executor and the per-shard validator are
built on the same walk, which is what makes "exact profile match" a
meaningful verdict.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Iterable, NamedTuple, Optional, Sequence

_M64 = (1 << 64) - 1
_ENTRY_SALT = 0xE57A_B1E5
_GENESIS_SALT = 0x6E6E_5150


def mix(a: int, b: int) -> int:
    """Deterministic 64-bit combine (splitmix64-flavoured). Stable across runs."""
    x = (a * 0x9E3779B97F4A7C15 + b * 0xBF58476D1CE4E5B9 + 0xD6E8FEB86659FD93) & _M64
    x ^= x >> 32
    x = (x * 0xBF58476D1CE4E5B9) & _M64
    x ^= x >> 29
    return x


class StorageKey(NamedTuple):
    contract: int
    slot: int


def key_tag(key: StorageKey) -> int:
    return mix(key.contract, key.slot)


def genesis_value(key: StorageKey) -> int:
    """Value of a never-written storage slot."""
    return mix(key_tag(key), _GENESIS_SALT)


# ---------------------------------------------------------------------------
# Steps and transactions
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ReadStep:
    key: StorageKey


@dataclass(frozen=True)
class WriteStep:
    key: StorageKey


@dataclass(frozen=True)
class ComputeStep:
    cost_ms: float


@dataclass(frozen=True)
class CallStep:
    target: int
    payload_bytes: int
    return_bytes: int


Step = ReadStep | WriteStep | ComputeStep | CallStep


class MalformedTransaction(ValueError):
    pass


@dataclass(frozen=True)
class Transaction:
    txn_id: int
    issue_time: float
    trace: tuple[Step, ...]
    fee: int = 0

    @property
    def entry_contract(self) -> int:
        step = self.trace[0]
        if isinstance(step, (ReadStep, WriteStep)):
            return step.key.contract
        if isinstance(step, CallStep):
            return step.target
        raise MalformedTransaction(
            f"txn {self.txn_id}: first step has no contract (Compute)")

    def validate(self, n_contracts: Optional[int] = None) -> None:
        """Check trace well-formedness.

        Non-empty, first step carries a contract, every R/W key lies on
        the contract currently in scope (entry or latest call target),
        and all referenced contracts are < n_contracts when given.
        """
        if not self.trace:
            raise MalformedTransaction(f"txn {self.txn_id}: empty trace")
        current = self.entry_contract
        for idx, step in enumerate(self.trace):
            if isinstance(step, (ReadStep, WriteStep)):
                if step.key.contract != current:
                    raise MalformedTransaction(
                        f"txn {self.txn_id} step {idx}: key on contract "
                        f"{step.key.contract} while {current} is in scope")
                if step.key.slot < 0:
                    raise MalformedTransaction(
                        f"txn {self.txn_id} step {idx}: negative slot")
                contract = step.key.contract
            elif isinstance(step, CallStep):
                current = contract = step.target
            else:
                continue
            if n_contracts is not None and not (0 <= contract < n_contracts):
                raise MalformedTransaction(
                    f"txn {self.txn_id} step {idx}: unknown contract {contract}")

    def contracts(self) -> set[int]:
        """Every contract the trace touches (entry, R/W keys, call targets)."""
        out = {self.entry_contract}
        for step in self.trace:
            if isinstance(step, (ReadStep, WriteStep)):
                out.add(step.key.contract)
            elif isinstance(step, CallStep):
                out.add(step.target)
        return out

    def compute_ms(self) -> float:
        return sum(s.cost_ms for s in self.trace if isinstance(s, ComputeStep))


# ---------------------------------------------------------------------------
# Read/write sets
# ---------------------------------------------------------------------------

class Granularity(Enum):
    CONTRACT = "contract"
    STATE = "state"


class DependencyMode(Enum):
    DISJOINT = "disjoint"
    RW_DEPENDENCY = "rwdep"


class GranularityMismatch(ValueError):
    pass


@dataclass(frozen=True)
class ReadWriteSet:
    reads: frozenset
    writes: frozenset
    granularity: Granularity

    def to_contract_level(self) -> "ReadWriteSet":
        if self.granularity is Granularity.CONTRACT:
            return self
        return ReadWriteSet(
            reads=frozenset(k.contract for k in self.reads),
            writes=frozenset(k.contract for k in self.writes),
            granularity=Granularity.CONTRACT,
        )

    def at(self, granularity: Granularity) -> "ReadWriteSet":
        if granularity is self.granularity:
            return self
        if granularity is Granularity.CONTRACT:
            return self.to_contract_level()
        raise GranularityMismatch("cannot refine a contract-level set to state level")


def extract_rw_set(trace: Sequence[Step], granularity: Granularity) -> ReadWriteSet:
    """Project a trace onto its read and write key sets."""
    reads = {s.key for s in trace if isinstance(s, ReadStep)}
    writes = {s.key for s in trace if isinstance(s, WriteStep)}
    if granularity is Granularity.CONTRACT:
        reads = {k.contract for k in reads}
        writes = {k.contract for k in writes}
    return ReadWriteSet(frozenset(reads), frozenset(writes), granularity)


def conflicts(earlier: ReadWriteSet, later: ReadWriteSet,
              mode: DependencyMode) -> bool:
    """Would `later` conflict if placed after `earlier` in one order?

    DISJOINT: any overlap at all.  RW_DEPENDENCY: only read-after-write
    and write-after-write count; read-after-read and write-after-read
    are admitted.
    """
    if earlier.granularity is not later.granularity:
        raise GranularityMismatch(
            f"{earlier.granularity} vs {later.granularity}")
    if mode is DependencyMode.DISJOINT:
        a = earlier.reads | earlier.writes
        b = later.reads | later.writes
        return not a.isdisjoint(b)
    return (not earlier.writes.isdisjoint(later.reads)
            or not earlier.writes.isdisjoint(later.writes))


# ---------------------------------------------------------------------------
# Placement
# ---------------------------------------------------------------------------

class UnplacedContract(KeyError):
    pass


@dataclass(frozen=True)
class Placement:
    shard_of: tuple[int, ...]  # contract id -> shard id
    n_shards: int

    def shard(self, contract: int) -> int:
        try:
            return self.shard_of[contract]
        except IndexError:
            raise UnplacedContract(contract) from None

    def key_shard(self, key: StorageKey) -> int:
        return self.shard(key.contract)


def related_shards(txn: Transaction, placement: Placement) -> set[int]:
    """Shards owning any contract the trace touches (entry contract included)."""
    return {placement.shard(c) for c in txn.contracts()}


# ---------------------------------------------------------------------------
# Profiles, orders, blocks, proofs
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CrossShardMessage:
    seq: int
    from_contract: int
    to_contract: int
    payload_bytes: int
    return_bytes: int
    params_value: int
    return_value: int

    @property
    def total_bytes(self) -> int:
        return self.payload_bytes + self.return_bytes


@dataclass(frozen=True)
class TransactionProfile:
    txn_id: int
    rw_set: ReadWriteSet  # always state-level as recorded
    messages: tuple[CrossShardMessage, ...]
    base_round: int
    coalition_id: int

    def message_bytes(self) -> int:
        return sum(m.total_bytes for m in self.messages)


@dataclass(frozen=True)
class Attestation:
    issuer: int
    honest: bool
    payload_digest: int


@dataclass(frozen=True)
class GlobalOrder:
    round: int
    entries: tuple[tuple[int, int, TransactionProfile], ...]  # (pos, txn_id, profile)

    def txn_ids(self) -> list[int]:
        return [t for _, t, _ in self.entries]


@dataclass(frozen=True)
class Block:
    shard_id: int
    round: int
    txns: tuple[tuple[int, int, TransactionProfile], ...]  # (global pos, txn_id, profile)
    attestation: Attestation


class Verdict(Enum):
    VALID = "valid"
    INVALID = "invalid"


@dataclass(frozen=True)
class Proof:
    shard_id: int
    round: int
    verdicts: dict[int, Verdict]  # txn_id -> verdict
    attestation: Attestation


# ---------------------------------------------------------------------------
# Deterministic execution
# ---------------------------------------------------------------------------

def _fold_read(acc: int, key: StorageKey, value: int) -> int:
    return mix(acc, mix(key_tag(key), value))


def _fold_write(acc: int, key: StorageKey, idx: int) -> tuple[int, int]:
    value = mix(acc, mix(key_tag(key), idx))
    return mix(acc, value), value


def _fold_compute(acc: int, idx: int, cost_ms: float) -> int:
    return mix(acc, mix(idx, int(cost_ms * 1000)))


def entry_acc(txn_id: int, entry_contract: int) -> int:
    return mix(mix(txn_id, _ENTRY_SALT), entry_contract)


@dataclass
class ExecutionResult:
    """Ground-truth outcome of running a full trace against some state view."""
    reads: set[StorageKey]
    writes: dict[StorageKey, int]
    messages: list[CrossShardMessage]
    final_acc: int

    def rw_set(self) -> ReadWriteSet:
        return ReadWriteSet(frozenset(self.reads),
                            frozenset(self.writes),
                            Granularity.STATE)


def execute_trace(txn: Transaction, read_fn: Callable[[StorageKey], int],
                  placement: Placement) -> ExecutionResult:
    """Run the whole trace with full state visibility (pre-execution / oracle).

    Writes are buffered locally and read back within the transaction;
    `read_fn` supplies the underlying snapshot.  One CrossShardMessage is
    emitted per call whose source and target contracts live on different
    shards, carrying params (accumulator at the call site) and return
    (accumulator at the end of the callee segment).
    """
    acc = entry_acc(txn.txn_id, txn.entry_contract)
    current = txn.entry_contract
    buffer: dict[StorageKey, int] = {}
    reads: set[StorageKey] = set()
    writes: dict[StorageKey, int] = {}
    messages: list[CrossShardMessage] = []
    pending: Optional[dict] = None  # open cross-shard call awaiting its return
    seq = 0
    for idx, step in enumerate(txn.trace):
        if isinstance(step, ReadStep):
            value = buffer.get(step.key)
            if value is None:
                value = read_fn(step.key)
            reads.add(step.key)
            acc = _fold_read(acc, step.key, value)
        elif isinstance(step, WriteStep):
            acc, value = _fold_write(acc, step.key, idx)
            buffer[step.key] = value
            writes[step.key] = value
        elif isinstance(step, ComputeStep):
            acc = _fold_compute(acc, idx, step.cost_ms)
        else:  # CallStep: segment boundary
            if pending is not None:
                messages.append(CrossShardMessage(return_value=acc, **pending))
                pending = None
            if placement.shard(current) != placement.shard(step.target):
                seq += 1
                pending = dict(seq=seq, from_contract=current,
                               to_contract=step.target,
                               payload_bytes=step.payload_bytes,
                               return_bytes=step.return_bytes,
                               params_value=acc)
            current = step.target
            acc = mix(acc, step.target)
    if pending is not None:
        messages.append(CrossShardMessage(return_value=acc, **pending))
    return ExecutionResult(reads, writes, messages, acc)


def expected_messages(txn: Transaction, placement: Placement) -> list[tuple[int, int, int, int, int]]:
    """Static message skeleton (seq, from, to, payload, return bytes) a
    well-formed profile must carry for this trace under this placement."""
    out = []
    current = txn.entry_contract
    seq = 0
    for step in txn.trace:
        if isinstance(step, CallStep):
            if placement.shard(current) != placement.shard(step.target):
                seq += 1
                out.append((seq, current, step.target,
                            step.payload_bytes, step.return_bytes))
            current = step.target
    return out


@dataclass
class LocalValidation:
    """What one shard observed re-executing its own segments of a txn."""
    valid: bool
    reads: set[StorageKey]
    writes: dict[StorageKey, int]
    reason: str = ""


def validate_against_profile(txn: Transaction, profile: TransactionProfile,
                             shard_id: int, placement: Placement,
                             read_fn: Callable[[StorageKey], int]) -> LocalValidation:
    """Phase-3 check: re-execute this shard's segments using only local
    state plus the profile's messages, and compare everything observable.

    Checks, in order: the profile's message skeleton matches the trace;
    params of cross-shard calls leaving a locally-executed segment match
    our recomputed accumulator; returns of cross-shard calls into local
    segments match; and finally the profile's claimed read/write keys on
    this shard's contracts equal the observed ones.
    """
    skeleton = expected_messages(txn, placement)
    msgs = profile.messages
    if len(msgs) != len(skeleton) or any(
            (m.seq, m.from_contract, m.to_contract, m.payload_bytes, m.return_bytes)
            != exp for m, exp in zip(msgs, skeleton)):
        return LocalValidation(False, set(), {}, "message skeleton mismatch")

    reads: set[StorageKey] = set()
    writes: dict[StorageKey, int] = {}
    buffer: dict[StorageKey, int] = {}
    current = txn.entry_contract
    local = placement.shard(current) == shard_id
    acc: Optional[int] = entry_acc(txn.txn_id, current) if local else None
    pending: Optional[CrossShardMessage] = None  # open cross call into a local segment
    next_msg = 0
    ok = True
    reason = ""

    def close_segment() -> None:
        nonlocal pending, ok, reason
        if pending is not None and local:
            if acc != pending.return_value:
                ok = False
                reason = reason or f"return mismatch at call {pending.seq}"
            pending = None

    for idx, step in enumerate(txn.trace):
        if isinstance(step, ReadStep):
            if local:
                value = buffer.get(step.key)
                if value is None:
                    value = read_fn(step.key)
                reads.add(step.key)
                acc = _fold_read(acc, step.key, value)
        elif isinstance(step, WriteStep):
            if local:
                acc, value = _fold_write(acc, step.key, idx)
                buffer[step.key] = value
                writes[step.key] = value
        elif isinstance(step, ComputeStep):
            if local:
                acc = _fold_compute(acc, idx, step.cost_ms)
        else:  # CallStep
            close_segment()
            cross = placement.shard(current) != placement.shard(step.target)
            if cross:
                msg = msgs[next_msg]
                next_msg += 1
                if local and acc != msg.params_value:
                    ok = False
                    reason = reason or f"params mismatch at call {msg.seq}"
                target_local = placement.shard(step.target) == shard_id
                if target_local:
                    acc = mix(msg.params_value, step.target)
                    pending = msg
                else:
                    acc = None
                local = target_local
            else:
                if local:
                    acc = mix(acc, step.target)
            current = step.target
    close_segment()

    claimed_reads = {k for k in profile.rw_set.reads
                     if placement.key_shard(k) == shard_id}
    claimed_writes = {k for k in profile.rw_set.writes
                      if placement.key_shard(k) == shard_id}
    if claimed_reads != reads or claimed_writes != set(writes):
        ok = False
        reason = reason or "read/write set mismatch"
    if ok:
        reason = ""
    return LocalValidation(ok, reads, writes, reason)
