"""Servers and clients as simulated nodes: the whole protocol, wired.

A deployment is n data centers of S servers each.  Within one data center
the servers play three roles at once: transaction-group members replicating
client op logs (txmgr), a consensus ensemble standing in for the data
center's wide-area acceptor (rgp over genpaxos), and a partitioned
key-value store with two-phase locks (kvstore).  Clients live inside their
data center and talk to their transaction group over the LAN.

Life of a committed transaction:

  1. The client streams sequenced ops to all group members.  The contact
     member (lowest id) executes them in log order: reads take shared locks
     at the key's owner and return observed values; writes are buffered.
     At the commit request the contact takes exclusive locks on the write
     set, every member with a complete log votes success on its Synod
     instance, and the quorum gate opens.
  2. Hand-off: the contact assembles the TransactionRecord and broadcasts
     it (wide-area hop 1), proposing its own commit result into the local
     ensemble; the learned result rides the same hop outward.
  3. Each remote data center re-executes the record against its own store
     and proposes its verdict locally; exported verdicts land everywhere at
     hop 2.
  4. Acceptor snapshots now carrying every verdict land at hop 3, each
     learner's tally reaches a commit quorum, and every data center applies
     the buffered writes.  The origin acks the client first, then flushes,
     then unlocks.

Retractions (deadlock upcalls, recoveries), the ensemble-level classic
fallback, wrapped inner recovery rounds, garbage collection, and the
periodic store/record anti-entropy are all driven by timers on the same
nodes; nothing here relies on a global coordinator.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

from . import commit
from .cstruct import ABORT, COMMIT, Result, Retraction, VERDICTS
from .genpaxos import (
    Ballot,
    Phase1A,
    Phase1B,
    Phase2A,
    Phase2B,
    fast_propose,
    implicit_init,
    learn,
    new_learner,
    phase1a,
    phase2a_accept,
    phase2a_classic,
    quorum,
    snapshot,
)
from .kvstore import (
    ABSENT_VERSION,
    EXCLUSIVE,
    SHARED,
    LockTable,
    PartitionMap,
    StoreShard,
    ideal_ranges,
    key_to_partition,
)
from .rgp import BROADCAST, MessageAlgebra, Proposal, next_recovery_ballot, recovery_choice, replay_poset
from .simnet import Node, Sim
from .txmgr import (
    BEGIN,
    COMMIT_REQ,
    READ,
    WRITE,
    ClientTxState,
    GroupMember,
    LogAck,
    LogOp,
    LogReject,
    PullOps,
    PushOps,
    SynodAccept,
    SynodAccepted,
    SynodPrepare,
    SynodPromise,
    TxId,
    TxOp,
    synod_dead,
)

OUTER = MessageAlgebra(VERDICTS)


def dc_name(d: int) -> str:
    return "dc%d" % d


def dc_index(name: str) -> int:
    return int(name[2:])


@dataclass(frozen=True)
class Topology:
    """Static cluster shape; every data center mirrors the same layout."""

    n_dcs: int = 3
    servers_per_dc: int = 3
    groups: int = 1
    group_size: int = 0  # 0 means every server of the data center
    partitions: int = 8
    replication: int = 1

    @property
    def g(self) -> int:
        return self.group_size or self.servers_per_dc

    def server_id(self, d: int, k: int) -> str:
        return "dc%ds%d" % (d, k)

    def dc_servers(self, d: int) -> list:
        return [self.server_id(d, k) for k in range(self.servers_per_dc)]

    def all_servers(self) -> list:
        out = []
        for d in range(1, self.n_dcs + 1):
            out += self.dc_servers(d)
        return out

    def remote_servers(self, d: int) -> list:
        return [s for e in range(1, self.n_dcs + 1) if e != d for s in self.dc_servers(e)]

    def group_of(self, tx: TxId) -> int:
        return key_to_partition(str(tx), self.groups)

    def group_members(self, d: int, gi: int) -> list:
        """Group gi's members: a wrapping window of g servers starting at gi."""
        return [
            self.server_id(d, (gi + j) % self.servers_per_dc) for j in range(self.g)
        ]

    def partition_map(self, d: int) -> PartitionMap:
        ranges = ideal_ranges(self.partitions, self.servers_per_dc)
        assignment = {self.server_id(d, k): ranges[k] for k in range(self.servers_per_dc)}
        return PartitionMap(self.partitions, assignment)


@dataclass(frozen=True)
class Tunables:
    """Timeout and period knobs, in ticks."""

    deadlock: int = 10
    gc: int = 200
    sync: int = 25
    progress: int = 12
    stagger: int = 5  # extra re-execution delay per server index


# -- wire messages (beyond the txmgr ones) ------------------------------------------


@dataclass(frozen=True)
class RecordMsg:
    record: commit.TransactionRecord


@dataclass(frozen=True)
class OuterCmd:
    """A wrapped protocol message proposed into a data center's ensemble."""

    tx: TxId
    cmd: object


@dataclass(frozen=True)
class OuterSnap:
    """An ensemble acceptor's snapshot, shipped to co-located learners."""

    tx: TxId
    snap: Phase2B


@dataclass(frozen=True)
class EnsembleP1A:
    tx: TxId
    ballot: Ballot


@dataclass(frozen=True)
class EnsembleP1B:
    tx: TxId
    msg: object  # Phase1B or Nack


@dataclass(frozen=True)
class EnsembleP2A:
    tx: TxId
    msg: Phase2A


@dataclass(frozen=True)
class LockReq:
    tx: TxId
    key: str
    mode: str
    want_read: bool
    purpose: str  # "read" | "prep" | "reexec"
    requester: str


@dataclass(frozen=True)
class LockReply:
    tx: TxId
    key: str
    purpose: str
    value: str  # commit.ABSENT when the key does not exist (or was not read)
    version: tuple


@dataclass(frozen=True)
class ReleaseLocks:
    tx: TxId


@dataclass(frozen=True)
class PutRows:
    rows: tuple  # (key, value, version) triples routed toward owners


@dataclass(frozen=True)
class ReplicaRows:
    rows: tuple


@dataclass(frozen=True)
class SyncRows:
    rows: tuple


@dataclass(frozen=True)
class AbortLocal:
    """Origin-side abort before hand-off; nothing left the data center."""

    tx: TxId
    reason: str


@dataclass(frozen=True)
class ClientOpResult:
    tx: TxId
    seq: int
    key: str
    value: str
    version: tuple


@dataclass(frozen=True)
class ClientDecision:
    tx: TxId
    outcome: str


class TxRuntime:
    """One server's volatile working state for one transaction."""

    def __init__(self, tx: TxId):
        self.tx = tx
        self.record = None
        self.learner = None  # outer LearnerState, lazily created
        self.replay = None
        self.sent = set()  # (destination dc, outer slot) already exported
        self.outer_pending = []  # wrapped commands bounced off a promised acceptor
        self.outer_onebs = {}  # ballot -> {acceptor: Phase1B} (ensemble recovery we lead)
        self.outer_round = 0
        # origin side (contact)
        self.client = None
        self.exec_seq = 0
        self.buffered = {}  # key -> value, log order
        self.op_results = {}  # seq -> (key, value, version)
        self.reads = []  # (key, value, version) in execution order
        self.prep_needed = set()
        self.effects_done = False
        self.handoff = False
        self.acked = False
        # re-execution side
        self.reexec_started = False
        self.lock_waits = set()
        self.reads_seen = {}
        self.implicit = ()
        self.verdict = None
        # shared
        self.resurrected = False
        self.decided = None
        self.retraction_staged = False
        self.retraction_sent = False
        self.wait_timer = None
        self.progress_timer = None
        self.gc_timer = None


class Server(Node):
    """One simulated server: group member, ensemble participant, store shard."""

    def __init__(self, node_id: str, d: int, topo: Topology, knobs: Tunables):
        super().__init__(node_id, d)
        self.topo = topo
        self.knobs = knobs
        self.index = int(node_id.rsplit("s", 1)[1])
        self.pmap = topo.partition_map(d)

    # -- lifecycle -----------------------------------------------------------------

    def volatile_init(self) -> None:
        self.shard = StoreShard()
        self.locks = LockTable()
        self.pending_locks = {}  # (tx, key) -> LockReq being waited on
        self.txr: dict = {}  # TxId -> TxRuntime
        self.outer_acc = self.durable.setdefault("outer", {})  # TxId -> AcceptorState
        self.groups = self.durable.setdefault("txmgr", {})  # group index -> GroupMember
        self.handoffs = self.durable.setdefault("handoff", set())  # TxIds we broadcast

    def on_recover(self) -> None:
        """Rebuild volatile protocol state from the durable remains.

        Undecided transactions whose verdict this data center never fixed
        durably get a retraction staged instead of a fresh re-execution: we
        cannot rule out that a contradictory verdict of ours is still in
        flight, and a retraction is always safe.  Transactions we have no
        durable trace of are treated as brand new when they resurface.
        """
        for tx in set(self.outer_acc) | set(self.handoffs):
            r = self._runtime(tx)
            r.resurrected = True
            acc = self._acc(tx)
            own = any(
                isinstance(c, Proposal)
                and isinstance(c.command, Result)
                and c.command.dc == self.dc
                for c in acc.value.cmds
            )
            if not own:
                r.retraction_staged = True
            self._broadcast_snapshot(r)
            self._arm_progress(r)
        for gm in self.groups.values():
            for tx, st in gm.txs.items():
                r = self._runtime(tx)
                if r.resurrected or st.expired or r.decided is not None:
                    continue
                r.gc_timer = self.after(self.knobs.gc, "gc", tx)
        self.after(self.knobs.sync, "sync")

    # -- helpers -------------------------------------------------------------------

    def _runtime(self, tx: TxId) -> TxRuntime:
        r = self.txr.get(tx)
        if r is None:
            r = TxRuntime(tx)
            self.txr[tx] = r
            r.learner = new_learner(OUTER)
        return r

    def _gm(self, gi: int) -> GroupMember:
        gm = self.groups.get(gi)
        if gm is None:
            gm = GroupMember(self.node_id, self.topo.group_members(self.dc, gi))
            self.groups[gi] = gm
        return gm

    def _acc(self, tx: TxId):
        acc = self.outer_acc.get(tx)
        if acc is None:
            acc = implicit_init(OUTER, self.topo.dc_servers(self.dc)[0])
            self.outer_acc[tx] = acc
        return acc

    def _contact_here(self, tx: TxId) -> bool:
        gi = self.topo.group_of(tx)
        return self.topo.group_members(self.dc, gi)[0] == self.node_id

    def _owner(self, key: str) -> str:
        return self.pmap.owner_of(key_to_partition(key, self.topo.partitions))

    def _route(self, msgs) -> None:
        """Ship a txmgr handler's (destination, message) list, with durability."""
        for dst, m in msgs:
            if isinstance(m, (SynodPromise,)):
                self.durable_write("promise")
            self.send(dst, m)

    # -- dispatch ------------------------------------------------------------------

    def handle(self, src: str, msg, hops: int) -> None:
        if isinstance(msg, LogOp):
            self._on_log_op(src, msg)
        elif isinstance(msg, PullOps):
            gm = self._gm(self.topo.group_of(msg.tx))
            out = gm.on_pull(msg)
            for _, push in out:
                self.sim.trace(self.node_id, "push", "%s n=%d" % (msg.tx, len(push.ops)))
            self._route(out)
        elif isinstance(msg, PushOps):
            self._on_push(msg)
        elif isinstance(msg, SynodPrepare):
            gm = self._gm(self.topo.group_of(msg.tx))
            self._route(gm.on_synod_prepare(msg))
        elif isinstance(msg, SynodPromise):
            gm = self._gm(self.topo.group_of(msg.tx))
            self._route(gm.on_synod_promise(msg))
        elif isinstance(msg, SynodAccept):
            gm = self._gm(self.topo.group_of(msg.tx))
            out = gm.on_synod_accept(msg)
            if out:
                self.durable_write("synod-accept")
            self._route(out)
        elif isinstance(msg, SynodAccepted):
            self._on_synod_accepted(msg)
        elif isinstance(msg, RecordMsg):
            self._on_record(msg.record)
        elif isinstance(msg, OuterCmd):
            self._on_outer_cmd(msg)
        elif isinstance(msg, OuterSnap):
            r = self._runtime(msg.tx)
            if learn(r.learner, msg.snap, self.topo.servers_per_dc):
                self._replay(r)
        elif isinstance(msg, EnsembleP1A):
            self._on_ensemble_p1a(src, msg)
        elif isinstance(msg, EnsembleP1B):
            self._on_ensemble_p1b(msg)
        elif isinstance(msg, EnsembleP2A):
            self._on_ensemble_p2a(msg)
        elif isinstance(msg, LockReq):
            self._on_lock_req(msg)
        elif isinstance(msg, LockReply):
            self._on_lock_reply(msg)
        elif isinstance(msg, ReleaseLocks):
            self._release_locks(msg.tx)
        elif isinstance(msg, PutRows):
            self._apply_rows(msg.rows)
        elif isinstance(msg, ReplicaRows):
            for key, value, version in msg.rows:
                self.shard.put(key, value, version)
        elif isinstance(msg, SyncRows):
            self._apply_rows(msg.rows)
        elif isinstance(msg, AbortLocal):
            self._on_abort_local(msg)
        else:
            raise TypeError("server got %r" % (msg,))

    # -- origin: log, execution pipeline, hand-off -----------------------------------

    def _on_log_op(self, client: str, msg: LogOp) -> None:
        gi = self.topo.group_of(msg.tx)
        gm = self._gm(gi)
        r = self._runtime(msg.tx)
        if r.client is None:
            r.client = client
        if r.gc_timer is None and r.decided is None:
            r.gc_timer = self.after(self.knobs.gc, "gc", msg.tx)
        contact = self._contact_here(msg.tx)
        st = gm.tx_state(msg.tx)
        before = len(st.log.ops)
        # Only the contact runs side effects; other members vote on log alone.
        out = gm.on_log_op(client, msg, effects_done=r.effects_done if contact else True)
        if len(st.log.ops) > before:
            self.durable_write("log")
        self._trace_votes(msg.tx, out)
        self._route(out)
        if contact:
            self._drive_origin(r, gm)

    def _on_push(self, msg: PushOps) -> None:
        gm = self._gm(self.topo.group_of(msg.tx))
        r = self._runtime(msg.tx)
        contact = self._contact_here(msg.tx)
        st = gm.tx_state(msg.tx)
        before = len(st.log.ops)
        out = gm.on_push(msg, effects_done=r.effects_done if contact else True)
        if len(st.log.ops) > before:
            self.durable_write("log")
        self._trace_votes(msg.tx, out)
        self._route(out)
        if contact:
            self._drive_origin(r, gm)

    def _trace_votes(self, tx: TxId, out) -> None:
        for _, m in out:
            if isinstance(m, SynodAccept) and m.subject == self.node_id:
                self.sim.trace(self.node_id, "vote", "%s %s" % (tx, m.value))
                break

    def _on_synod_accepted(self, msg: SynodAccepted) -> None:
        gm = self._gm(self.topo.group_of(msg.tx))
        r = self._runtime(msg.tx)
        opened = gm.on_synod_accepted(msg)
        if opened:
            self.sim.trace(self.node_id, "gate", str(msg.tx))
        st = gm.tx_state(msg.tx)
        if opened and self._contact_here(msg.tx):
            self._maybe_handoff(r, gm)
        if synod_dead(st.synods, gm.g) and r.decided is None and r.record is None:
            self.sim.trace(self.node_id, "gc-abort", str(msg.tx))
            self._abort_local(r, "gc")

    def _drive_origin(self, r: TxRuntime, gm: GroupMember) -> None:
        """Execute logged ops in order; block on locks, resume on replies."""
        if r.decided is not None or r.handoff:
            return
        log = gm.tx_state(r.tx).log
        while True:
            op = log.ops.get(r.exec_seq)
            if op is None:
                return
            if op.kind == BEGIN:
                r.exec_seq += 1
            elif op.kind == WRITE:
                r.buffered[op.key] = op.value
                r.exec_seq += 1
            elif op.kind == READ:
                if op.seq in r.op_results:
                    r.exec_seq += 1
                    continue
                if op.key in r.buffered:
                    res = (op.key, r.buffered[op.key], ABSENT_VERSION)
                    r.op_results[op.seq] = res
                    self.send(r.client, ClientOpResult(r.tx, op.seq, *res))
                    r.exec_seq += 1
                    continue
                self._request_lock(r, op.key, SHARED, want_read=True, purpose="read")
                return
            elif op.kind == COMMIT_REQ:
                self._prepare(r, gm)
                return
            else:
                r.exec_seq += 1

    def _prepare(self, r: TxRuntime, gm: GroupMember) -> None:
        """Exclusive locks on the write set; success vote once all are held."""
        if r.effects_done:
            return
        needed = [k for k in sorted(r.buffered) if k not in r.prep_needed]
        granted_already = not needed and not r.prep_needed
        for key in needed:
            r.prep_needed.add(key)
            self._request_lock(r, key, EXCLUSIVE, want_read=False, purpose="prep")
        if granted_already:
            self._effects_complete(r, gm)

    def _effects_complete(self, r: TxRuntime, gm: GroupMember) -> None:
        r.effects_done = True
        if r.wait_timer is not None:
            self.sim.cancel(r.wait_timer)
            r.wait_timer = None
        out = gm.maybe_propose_success(r.tx, effects_done=True)
        self._trace_votes(r.tx, out)
        self._route(out)
        self._maybe_handoff(r, gm)

    def _maybe_handoff(self, r: TxRuntime, gm: GroupMember) -> None:
        """Broadcast the record once the gate is open and effects are done."""
        if r.handoff or r.decided is not None:
            return
        if not (r.effects_done and gm.gate_open(r.tx)):
            return
        r.handoff = True
        if r.gc_timer is not None:
            self.sim.cancel(r.gc_timer)
            r.gc_timer = None
        # Durably mark the hand-off before anything leaves: a recovering
        # contact must never locally abort a transaction the world has seen.
        self.handoffs.add(r.tx)
        self.durable_write("handoff")
        writes = tuple(sorted(r.buffered.items()))
        record = commit.TransactionRecord(
            tx=r.tx,
            origin=self.dc,
            version=(self.sim.now, dc_name(self.dc), r.tx.n),
            reads=tuple(r.reads),
            writes=writes,
        )
        self.sim.trace(self.node_id, "handoff", "%s hops=%d" % (r.tx, self.sim.ctx_hops))
        for dst in self.topo.all_servers():
            self.send(dst, RecordMsg(record))
        self._propose_inner(r, Proposal(Result(self.dc, COMMIT)))

    def _abort_local(self, r: TxRuntime, reason: str) -> None:
        """Pre-hand-off abort: nothing has left this data center yet."""
        for dst in self.topo.dc_servers(self.dc):
            self.send(dst, AbortLocal(r.tx, reason))

    def _on_abort_local(self, msg: AbortLocal) -> None:
        r = self._runtime(msg.tx)
        if r.decided is not None:
            return
        if msg.tx in self.outer_acc or msg.tx in self.handoffs:
            return  # the wide-area instance exists; a local abort is void
        r.decided = ABORT
        self.sim.trace(self.node_id, "local-abort", "%s %s" % (msg.tx, msg.reason))
        gi = self.topo.group_of(msg.tx)
        if self.node_id in self.topo.group_members(self.dc, gi):
            self._gm(gi).tx_state(msg.tx).expired = True
        # Any member that knows the client reports; the client deduplicates.
        if r.client and not r.acked:
            r.acked = True
            self.send(r.client, ClientDecision(msg.tx, ABORT))
        self._cancel_tx_timers(r)
        self._release_locks(msg.tx)

    # -- record arrival and re-execution ------------------------------------------

    def _on_record(self, record: commit.TransactionRecord) -> None:
        r = self._runtime(record.tx)
        if r.record is not None:
            return
        r.record = record
        self.sim.trace(self.node_id, "record", str(record.tx))
        self._arm_progress(r)
        if record.origin != self.dc and r.decided is None:
            delay = self.index * self.knobs.stagger
            if delay == 0:
                self._maybe_reexecute(r)
            else:
                self.after(delay, "reexec", record.tx)

    def _maybe_reexecute(self, r: TxRuntime) -> None:
        """Run the record against the local store unless someone already did.

        Later-indexed servers reach here on staggered timers and skip when
        the data center's verdict is already in the ensemble; after a crash
        we skip too and leave the retraction path to speak for us.
        """
        if r.reexec_started or r.decided is not None or r.record is None:
            return
        if r.resurrected:
            return
        acc = self.outer_acc.get(r.tx)
        if acc is not None and any(
            isinstance(c, Proposal)
            and isinstance(c.command, Result)
            and c.command.dc == self.dc
            for c in acc.value.cmds
        ):
            return
        r.reexec_started = True
        rec = r.record
        writes = set(rec.write_keys())
        for key in dict.fromkeys(rec.read_keys()):
            mode = EXCLUSIVE if key in writes else SHARED
            r.lock_waits.add(key)
            self._request_lock(r, key, mode, want_read=True, purpose="reexec")
        for key in sorted(writes - set(rec.read_keys())):
            r.lock_waits.add(key)
            self._request_lock(r, key, EXCLUSIVE, want_read=False, purpose="reexec")
        if not r.lock_waits:
            self._cast_verdict(r)

    def _cast_verdict(self, r: TxRuntime) -> None:
        if r.verdict is not None or r.decided is not None:
            return
        verdict, implicit = commit.reexecution_verdict(r.record, r.reads_seen)
        r.verdict = verdict
        r.implicit = implicit
        if r.wait_timer is not None:
            self.sim.cancel(r.wait_timer)
            r.wait_timer = None
        self.sim.trace(self.node_id, "verdict", "%s %s" % (r.tx, verdict))
        self._propose_inner(r, Proposal(Result(self.dc, verdict)))
        if verdict == ABORT:
            for dst in self.topo.dc_servers(self.dc):
                self.send(dst, ReleaseLocks(r.tx))

    # -- locks ----------------------------------------------------------------------

    def _request_lock(self, r: TxRuntime, key: str, mode: str, want_read: bool, purpose: str) -> None:
        self.send(self._owner(key), LockReq(r.tx, key, mode, want_read, purpose, self.node_id))
        if r.wait_timer is None and r.decided is None:
            r.wait_timer = self.after(self.knobs.deadlock, "upcall", r.tx)

    def _on_lock_req(self, msg: LockReq) -> None:
        if self.locks.acquire(msg.tx, msg.key, msg.mode):
            self._lock_granted(msg)
        else:
            self.pending_locks[(msg.tx, msg.key)] = msg

    def _lock_granted(self, msg: LockReq) -> None:
        if msg.want_read:
            row = self.shard.get(msg.key)
            value, version = row if row is not None else (commit.ABSENT, ABSENT_VERSION)
        else:
            value, version = commit.ABSENT, ABSENT_VERSION
        self.send(msg.requester, LockReply(msg.tx, msg.key, msg.purpose, value, version))

    def _release_locks(self, tx: TxId) -> None:
        self.pending_locks = {k: v for k, v in self.pending_locks.items() if k[0] != tx}
        for gtx, key, _mode in self.locks.release_all(tx):
            waiting = self.pending_locks.pop((gtx, key), None)
            if waiting is not None:
                self._lock_granted(waiting)

    def _on_lock_reply(self, msg: LockReply) -> None:
        r = self._runtime(msg.tx)
        if r.decided is not None:
            return
        if msg.purpose == "read":
            gm = self._gm(self.topo.group_of(msg.tx))
            log = gm.tx_state(msg.tx).log
            op = log.ops.get(r.exec_seq)
            if op is None or op.kind != READ or op.key != msg.key:
                return  # stale grant; the pipeline moved on (e.g. local abort)
            res = (msg.key, msg.value, msg.version)
            r.op_results[op.seq] = res
            r.reads.append(res)
            if r.wait_timer is not None:
                self.sim.cancel(r.wait_timer)
                r.wait_timer = None
            self.send(r.client, ClientOpResult(r.tx, op.seq, *res))
            r.exec_seq += 1
            self._drive_origin(r, gm)
        elif msg.purpose == "prep":
            r.prep_needed.discard(msg.key)
            if not r.prep_needed and not r.effects_done:
                self._effects_complete(r, self._gm(self.topo.group_of(msg.tx)))
        elif msg.purpose == "reexec":
            if msg.value != commit.ABSENT:
                r.reads_seen[msg.key] = (msg.value, msg.version)
            r.lock_waits.discard(msg.key)
            if not r.lock_waits and r.reexec_started:
                self._cast_verdict(r)

    # -- ensemble: wrapped commands, snapshots, classic fallback ---------------------

    def _propose_inner(self, r: TxRuntime, cmd) -> None:
        """Local-first export: the wrapped command goes through our ensemble."""
        if isinstance(cmd, Phase1A):
            self.sim.trace(self.node_id, "inner-1a", "%s %r" % (r.tx, cmd.ballot))
        for dst in self.topo.dc_servers(self.dc):
            self.send(dst, OuterCmd(r.tx, cmd))

    def _on_outer_cmd(self, msg: OuterCmd) -> None:
        r = self._runtime(msg.tx)
        acc = self._acc(msg.tx)
        status, changed = fast_propose(acc, msg.cmd)
        if status == "reject":
            if msg.cmd not in r.outer_pending:
                r.outer_pending.append(msg.cmd)
            return
        if changed:
            self.durable_write("outer-accept")
            self._broadcast_snapshot(r)
            self._arm_progress(r)

    def _broadcast_snapshot(self, r: TxRuntime) -> None:
        snap = snapshot(self._acc(r.tx), self.node_id)
        for dst in self.topo.dc_servers(self.dc):
            if dst != self.node_id:
                self.send(dst, OuterSnap(r.tx, snap))
        if learn(r.learner, snap, self.topo.servers_per_dc):
            self._replay(r)

    def _replay(self, r: TxRuntime) -> None:
        """Recompute the inner participant from the learned poset and export."""
        origin = r.tx.origin
        rep = replay_poset(
            r.learner.learned,
            dc=dc_name(self.dc),
            origin=origin,
            inner_algebra=VERDICTS,
            n_dcs=self.topo.n_dcs,
        )
        r.replay = rep
        for dest, m in rep.emissions:
            self._export(r, dest, m)
        for cmd in r.learner.learned.cmds:
            if isinstance(cmd, (Proposal, Phase1A, Phase2A, Phase2B)):
                for e in range(1, self.topo.n_dcs + 1):
                    if e != self.dc:
                        self._export(r, dc_name(e), cmd)
        choice = recovery_choice(rep, VERDICTS, dc_name(self.dc), self.topo.n_dcs)
        if choice is not None:
            self._propose_inner(r, choice)
        if r.retraction_staged and not r.retraction_sent:
            self._maybe_release_retraction(r)
        out = commit.tally(rep.learner.learned, self.topo.n_dcs)
        if out.decision != commit.UNDECIDED and r.decided is None:
            self._on_decision(r, out.decision)

    def _export(self, r: TxRuntime, dest: str, m) -> None:
        key_slot = OUTER.slot(m)
        dcs = range(1, self.topo.n_dcs + 1) if dest == BROADCAST else (dc_index(dest),)
        for e in dcs:
            if (e, key_slot) in r.sent:
                continue
            r.sent.add((e, key_slot))
            for dst in self.topo.dc_servers(e):
                self.send(dst, OuterCmd(r.tx, m))

    def _on_ensemble_p1a(self, src: str, msg: EnsembleP1A) -> None:
        acc = self._acc(msg.tx)
        resp = phase1a(acc, self.node_id, msg.ballot)
        if isinstance(resp, Phase1B):
            self.durable_write("promise")
        self.send(src, EnsembleP1B(msg.tx, resp))

    def _on_ensemble_p1b(self, msg: EnsembleP1B) -> None:
        r = self._runtime(msg.tx)
        m = msg.msg
        if not isinstance(m, Phase1B):
            r.outer_round = max(r.outer_round, m.promised.round)
            return
        if m.ballot.leader != self.node_id:
            return
        pool = r.outer_onebs.setdefault(m.ballot, {})
        pool[m.acceptor] = m
        if len(pool) == quorum(self.topo.servers_per_dc):
            value = phase2a_classic(OUTER, pool.values())
            for dst in self.topo.dc_servers(self.dc):
                self.send(dst, EnsembleP2A(msg.tx, Phase2A(m.ballot, value)))

    def _on_ensemble_p2a(self, msg: EnsembleP2A) -> None:
        r = self._runtime(msg.tx)
        acc = self._acc(msg.tx)
        resp = phase2a_accept(acc, self.node_id, msg.msg)
        if isinstance(resp, Phase2B):
            self.durable_write("outer-accept")
            pending, r.outer_pending = r.outer_pending, []
            for cmd in pending:
                fast_propose(acc, cmd)
            self._broadcast_snapshot(r)

    # -- deadlock upcalls and retractions ---------------------------------------------

    def _upcall(self, tx: TxId) -> None:
        """Lock-wait timeout: possibly deadlocked.

        Decided transactions need nothing.  Before hand-off the origin
        simply aborts — nothing global exists yet.  After it, we stage a
        retraction of our own (potential) commit result and release it once
        retracting cannot be moot.
        """
        r = self.txr.get(tx)
        if r is None or r.decided is not None:
            return
        self.sim.trace(self.node_id, "upcall", str(tx))
        if r.record is None:
            self._abort_local(r, "lock-timeout")
            return
        if r.verdict is not None:
            return  # our verdict is cast; the wait belongs to the decision
        r.retraction_staged = True
        self._maybe_release_retraction(r)

    def _maybe_release_retraction(self, r: TxRuntime) -> None:
        if r.retraction_sent or r.decided is not None:
            return
        acc = self.outer_acc.get(r.tx)
        proposed = []
        if acc is not None:
            proposed = [
                c.command
                for c in acc.value.cmds
                if isinstance(c, Proposal)
                and isinstance(c.command, (Result, Retraction))
            ]
        pending = [Retraction(self.dc)]
        if commit.should_release(proposed, pending, self.topo.n_dcs):
            r.retraction_sent = True
            self.sim.trace(self.node_id, "retract", "%s dc=%d" % (r.tx, self.dc))
            self._propose_inner(r, Proposal(Retraction(self.dc)))

    # -- decisions --------------------------------------------------------------------

    def _on_decision(self, r: TxRuntime, decision: str) -> None:
        r.decided = decision
        self.sim.trace(
            self.node_id, "decision", "%s %s hops=%d" % (r.tx, decision, self.sim.ctx_hops)
        )
        self._cancel_tx_timers(r)
        # Any member that knows the client reports (the client deduplicates);
        # a contact-only reply would be lost with the contact's volatile state.
        if r.client and not r.acked:
            r.acked = True
            self.send(r.client, ClientDecision(r.tx, decision))
        if decision == COMMIT and r.record is not None:
            rows = commit.decision_rows(r.record, r.implicit)
            if rows:
                self.sim.trace(self.node_id, "apply", "%s rows=%d" % (r.tx, len(rows)))
                self._apply_rows(rows)
        self.sim.trace(self.node_id, "unlock", str(r.tx))
        self._release_locks(r.tx)

    def _cancel_tx_timers(self, r: TxRuntime) -> None:
        for attr in ("wait_timer", "progress_timer", "gc_timer"):
            token = getattr(r, attr)
            if token is not None:
                self.sim.cancel(token)
                setattr(r, attr, None)

    def _apply_rows(self, rows) -> None:
        """Install rows at their owners; owned ones here, the rest routed."""
        foreign = {}
        changed = []
        for key, value, version in rows:
            owner = self._owner(key)
            if owner == self.node_id:
                if self.shard.put(key, value, version):
                    changed.append((key, value, version))
            else:
                foreign.setdefault(owner, []).append((key, value, version))
        for owner, batch in foreign.items():
            self.send(owner, PutRows(tuple(batch)))
        self._replicate(changed)

    def _replicate(self, rows) -> None:
        if not rows or self.topo.replication <= 1:
            return
        fan = {}
        for key, value, version in rows:
            p = key_to_partition(key, self.topo.partitions)
            for s in self.pmap.replicas_of(p, self.topo.replication):
                if s != self.node_id:
                    fan.setdefault(s, []).append((key, value, version))
        for s, batch in fan.items():
            self.send(s, ReplicaRows(tuple(batch)))

    # -- timers -------------------------------------------------------------------

    def _arm_progress(self, r: TxRuntime) -> None:
        # Staggered per server and data center so recovery rounds rarely duel.
        if r.progress_timer is None and r.decided is None:
            delay = self.knobs.progress + 4 * (self.dc - 1) + 3 * self.index
            r.progress_timer = self.after(delay, "progress", r.tx)

    def on_timer(self, name: str, payload) -> None:
        if name == "reexec":
            r = self.txr.get(payload)
            if r is not None:
                self._maybe_reexecute(r)
        elif name == "upcall":
            self._upcall(payload)
        elif name == "progress":
            self._progress(payload)
        elif name == "gc":
            self._gc(payload)
        elif name == "sync":
            self._sync()
        else:
            raise ValueError(name)

    def _progress(self, tx: TxId) -> None:
        """Undecided past the patience limit: drive a recovery round.

        If our ensemble's learner lags its acceptor, local snapshots
        conflict and an ensemble-level classic ballot settles them.
        Otherwise the wide-area instance itself is stuck (conflicting
        retraction orders, a missing verdict) and we run a wrapped inner
        classic round through the usual local-first route.
        """
        r = self.txr.get(tx)
        if r is None or r.decided is not None:
            return
        r.progress_timer = None
        acc = self._acc(tx)
        if r.learner.learned.properly_extends(acc.value):
            # Our acceptor missed commands its peers fixed; catch up in place.
            for cmd in r.learner.learned.cmds:
                fast_propose(acc, cmd)
            self._broadcast_snapshot(r)
        elif acc.value != r.learner.learned:
            # Divergent or unlearnable local acceptance: classic ensemble round.
            r.outer_round = max(r.outer_round, acc.promised.round) + 1
            ballot = Ballot(r.outer_round, self.node_id)
            for dst in self.topo.dc_servers(self.dc):
                self.send(dst, EnsembleP1A(tx, ballot))
        elif r.replay is not None:
            self._propose_inner(r, Phase1A(next_recovery_ballot(r.replay, dc_name(self.dc))))
        if r.record is None and not r.retraction_sent:
            # An instance is circulating but we never saw the record (it died
            # with its origin).  We can never vote, but we can retract.
            r.retraction_staged = True
            self._maybe_release_retraction(r)
        self._arm_progress(r)

    def _gc(self, tx: TxId) -> None:
        """Expire a transaction that never reached hand-off.

        Nothing about it has left this data center, so aborting locally is
        always safe — even if success votes landed, the record was never
        broadcast and no other data center can have learned the outcome.
        """
        r = self.txr.get(tx)
        if r is None or r.decided is not None or r.record is not None:
            return
        if r.resurrected or tx in self.outer_acc or tx in self.handoffs:
            return
        gi = self.topo.group_of(tx)
        if self.node_id in self.topo.group_members(self.dc, gi):
            self._route(self._gm(gi).expire(tx))
        self.sim.trace(self.node_id, "gc-abort", str(tx))
        self._abort_local(r, "gc")

    def _sync(self) -> None:
        """Periodic anti-entropy: store rows across DCs, records for stragglers."""
        rows = tuple((k, v, ver) for k, (v, ver) in self.shard.items_sorted())
        if rows:
            for e in range(1, self.topo.n_dcs + 1):
                if e != self.dc:
                    self.send(self.topo.server_id(e, self.index), SyncRows(rows))
            self._replicate(rows)
        for r in list(self.txr.values()):
            if r.decided is None and r.record is not None:
                for dst in self.topo.remote_servers(self.dc):
                    self.send(dst, RecordMsg(r.record))
                self._broadcast_snapshot(r)
        self.after(self.knobs.sync, "sync")


# -- client --------------------------------------------------------------------------


@dataclass(frozen=True)
class TxPlan:
    """One transaction a client will run: ("r"|"w", key, value) ops.

    ``at`` pins the begin tick (None chains after the previous plan ends);
    ``pace`` inserts think time between ops, which is how tests and fuzz
    workloads stretch the window in which transactions overlap.
    """

    ops: tuple
    at: int = None
    pace: int = 0


KIND = {"r": READ, "w": WRITE}


class Client(Node):
    """Drives transactions against its data center's group members."""

    def __init__(self, node_id: str, d: int, uid: int, topo: Topology, plans, think: int = 1, start: int = 0):
        super().__init__(node_id, d)
        self.uid = uid
        self.topo = topo
        self.plans = list(plans)
        self.think = think
        self.start = start

    def volatile_init(self) -> None:
        self.counter = 0
        self.active: dict = {}  # TxId -> _ClientTx
        self.history: list = []
        self.next_seq_plan = 0
        for i, plan in enumerate(self.plans):
            if plan.at is not None:
                self.after(plan.at, "begin", i)
        if self.plans and self.plans[0].at is None:
            self.after(self.start, "begin", 0)

    def on_timer(self, name: str, payload) -> None:
        if name == "begin":
            self._begin(self.plans[payload], payload)
        elif name == "op":
            state = self.active.get(payload)
            if state is not None:
                state.pending_next = False
                self._dispatch_next(state)
        else:
            raise ValueError(name)

    def _begin(self, plan: TxPlan, idx: int) -> None:
        tx = TxId(self.sim.now, dc_name(self.dc), self.uid * 10000 + self.counter)
        self.counter += 1
        gi = self.topo.group_of(tx)
        members = self.topo.group_members(self.dc, gi)
        cts = ClientTxState(tx, members)
        state = _ClientTx(tx, plan, idx, cts, begin=self.sim.now)
        self.active[tx] = state
        self._submit(state, BEGIN, "", "")

    def _submit(self, state: "_ClientTx", kind: str, key: str, value: str) -> None:
        op = state.cts.stamp(kind, key, value)
        state.current = op
        state.done_result = kind not in (READ,)
        for m in state.cts.members:
            self.send(m, LogOp(state.tx, op))

    def handle(self, src: str, msg, hops: int) -> None:
        if isinstance(msg, LogAck):
            state = self.active.get(msg.tx)
            if state is None:
                return
            state.cts.on_ack(msg)
            self._advance(state)
        elif isinstance(msg, ClientOpResult):
            state = self.active.get(msg.tx)
            if state is None or state.current is None or msg.seq != state.current.seq:
                return
            state.observed[msg.seq] = msg.value
            state.done_result = True
            self._advance(state)
        elif isinstance(msg, ClientDecision):
            self._finish(msg.tx, msg.outcome)
        elif isinstance(msg, LogReject):
            return
        else:
            raise TypeError("client got %r" % (msg,))

    def _advance(self, state: "_ClientTx") -> None:
        cur = state.current
        if cur is None or state.pending_next:
            return
        if not (state.cts.op_acked(cur.seq) and state.done_result):
            return
        if cur.kind == COMMIT_REQ:
            return  # waiting on the decision now
        if state.plan.pace and cur.kind != BEGIN:
            state.pending_next = True
            self.after(state.plan.pace, "op", state.tx)
        else:
            self._dispatch_next(state)

    def _dispatch_next(self, state: "_ClientTx") -> None:
        nxt = state.next_op()
        if nxt is None:
            self._submit(state, COMMIT_REQ, "", "")
        else:
            kind, key, value = nxt
            self._submit(state, KIND[kind], key, value)

    def _finish(self, tx: TxId, outcome: str) -> None:
        state = self.active.pop(tx, None)
        if state is None:
            return
        ops = []
        for i, (kind, key, value) in enumerate(state.plan.ops):
            seq = i + 1  # begin holds seq 0
            if kind == "r":
                ops.append(("r", key, state.observed.get(seq, commit.ABSENT)))
            else:
                ops.append(("w", key, value))
        row = {
            "tx": str(tx),
            "begin": state.begin,
            "end": self.sim.now,
            "outcome": outcome,
            "ops": ops,
        }
        self.history.append(row)
        # JSON payload so a trace file alone suffices to re-check a history
        self.sim.trace(self.node_id, "done", json.dumps(row, sort_keys=True))
        nxt = state.idx + 1
        if nxt < len(self.plans) and self.plans[nxt].at is None:
            self.after(self.think, "begin", nxt)


class _ClientTx:
    def __init__(self, tx: TxId, plan: TxPlan, idx: int, cts: ClientTxState, begin: int):
        self.tx = tx
        self.plan = plan
        self.idx = idx
        self.cts = cts
        self.begin = begin
        self.current = None
        self.done_result = True
        self.pending_next = False
        self.observed = {}
        self.op_idx = 0

    def next_op(self):
        if self.op_idx >= len(self.plan.ops):
            return None
        op = self.plan.ops[self.op_idx]
        self.op_idx += 1
        return op


# -- assembly ------------------------------------------------------------------------


def build_cluster(sim: Sim, topo: Topology, knobs: Tunables = None) -> dict:
    """Register one Server per (dc, index); returns node id -> Server."""
    knobs = knobs or Tunables()
    servers = {}
    for d in range(1, topo.n_dcs + 1):
        for k in range(topo.servers_per_dc):
            node = Server(topo.server_id(d, k), d, topo, knobs)
            sim.register(node)
            node.after(knobs.sync, "sync")
            servers[node.node_id] = node
    return servers


def add_client(sim: Sim, topo: Topology, d: int, uid: int, plans, think: int = 1, start: int = 0) -> Client:
    node = Client("dc%dc%d" % (d, uid), d, uid, topo, plans, think=think, start=start)
    sim.register(node)
    return node


def dc_digest(servers: dict, topo: Topology, d: int) -> str:
    from .kvstore import store_digest

    return store_digest([servers[s].shard for s in topo.dc_servers(d)])
