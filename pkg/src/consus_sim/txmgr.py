"""Intra-DC transaction management: replicated op logs and Synod gating.

A client owns its transaction's operation sequence: it stamps every op with
the next sequence number and sends it to all members of the transaction's
group, so replicating the log needs no consensus — members just log
durably and acknowledge.  An op counts as acknowledged once a quorum of
members confirmed it.

Before the transaction can enter the global commit protocol, the group runs
one single-decree Synod instance per member, value domain {success,
failure}.  A member proposes success on its own instance only when it holds
the complete log; any member may propose failure on any instance (that is
how garbage collection kills an abandoned transaction).  The gate opens
when a quorum of instances decide success, which certifies that a quorum of
members each durably hold the whole log — replaying any quorum later can
reconstruct it.  Ballot zero belongs to the instance's owner implicitly, so
the failure-free path has no phase-one traffic at all.

Everything here is simulation-free; handlers return (destination, message)
lists for a node adapter to ship.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .genpaxos import Ballot, quorum

BEGIN = "begin"
READ = "read"
WRITE = "write"
COMMIT_REQ = "commit"

SUCCESS = "success"
FAILURE = "failure"


@dataclass(frozen=True, order=True)
class TxId:
    tick: int
    origin: str
    n: int

    def __str__(self) -> str:
        return "t%d.%s.%d" % (self.tick, self.origin, self.n)

    @property
    def version(self) -> tuple:
        """Store-write version; totally ordered and consistent with begin time."""
        return (self.tick, self.origin, self.n)


@dataclass(frozen=True)
class TxOp:
    seq: int
    kind: str
    key: str = ""
    value: str = ""


@dataclass(frozen=True)
class LogOp:
    tx: TxId
    op: TxOp


@dataclass(frozen=True)
class LogAck:
    tx: TxId
    seq: int
    member: str


@dataclass(frozen=True)
class LogReject:
    tx: TxId
    seq: int
    member: str
    reason: str


@dataclass(frozen=True)
class PullOps:
    """Anti-entropy: ask a peer for ops we have not seen."""

    tx: TxId
    requester: str
    have: frozenset


@dataclass(frozen=True)
class PushOps:
    tx: TxId
    ops: tuple


@dataclass
class TxLogReplica:
    tx: TxId
    ops: dict = field(default_factory=dict)  # seq -> TxOp

    def append(self, op: TxOp) -> bool:
        if op.seq in self.ops:
            return False
        self.ops[op.seq] = op
        return True

    @property
    def commit_seq(self):
        for seq, op in self.ops.items():
            if op.kind == COMMIT_REQ:
                return seq
        return None

    def complete(self) -> bool:
        last = self.commit_seq
        if last is None:
            return False
        return all(s in self.ops for s in range(last))

    def missing(self) -> frozenset:
        """Sequence numbers needed for completeness, given what we know."""
        last = self.commit_seq
        horizon = (last + 1) if last is not None else (max(self.ops) + 1 if self.ops else 0)
        return frozenset(s for s in range(horizon) if s not in self.ops)

    def in_order(self) -> list:
        return [self.ops[s] for s in sorted(self.ops)]


# -- single-decree Synod ---------------------------------------------------------


@dataclass(frozen=True)
class SynodPrepare:
    tx: TxId
    subject: str  # whose instance
    ballot: Ballot


@dataclass(frozen=True)
class SynodPromise:
    tx: TxId
    subject: str
    acceptor: str
    ballot: Ballot
    accepted: Ballot
    value: str  # "" when nothing accepted yet


@dataclass(frozen=True)
class SynodAccept:
    tx: TxId
    subject: str
    ballot: Ballot
    value: str


@dataclass(frozen=True)
class SynodAccepted:
    tx: TxId
    subject: str
    acceptor: str
    ballot: Ballot
    value: str


NO_BALLOT = Ballot(-1, "")


@dataclass
class SynodState:
    """One member's view of one instance: acceptor, learner, and duelling proposers."""

    subject: str
    promised: Ballot
    accepted: Ballot = NO_BALLOT
    value: str = ""
    decided: str = ""
    votes: dict = field(default_factory=dict)  # (ballot, value) -> set of acceptors
    promises: dict = field(default_factory=dict)  # ballot -> {acceptor: SynodPromise}


def synod_init(subject: str) -> SynodState:
    """Fresh instance; ballot zero is implicitly the owner's, no phase one."""
    return SynodState(subject=subject, promised=Ballot(0, subject))


def synod_on_prepare(st: SynodState, acceptor: str, msg: SynodPrepare):
    if msg.ballot > st.promised:
        st.promised = msg.ballot
        return SynodPromise(msg.tx, msg.subject, acceptor, msg.ballot, st.accepted, st.value)
    return None


def synod_on_accept(st: SynodState, acceptor: str, msg: SynodAccept):
    if msg.ballot >= st.promised:
        st.promised = msg.ballot
        st.accepted = msg.ballot
        st.value = msg.value
        return SynodAccepted(msg.tx, msg.subject, acceptor, msg.ballot, msg.value)
    return None


def synod_on_accepted(st: SynodState, msg: SynodAccepted, g: int) -> bool:
    """Fold a vote; True when this just decided the instance."""
    key = (msg.ballot, msg.value)
    voters = st.votes.setdefault(key, set())
    voters.add(msg.acceptor)
    if len(voters) >= quorum(g) and not st.decided:
        st.decided = msg.value
        return True
    return False


def synod_choose(promises, fallback: str) -> str:
    """Proposer's value rule: adopt the highest-ballot accepted value, else ours."""
    best = NO_BALLOT
    value = fallback
    for p in promises:
        if p.accepted > best and p.value:
            best = p.accepted
            value = p.value
    return value


def synod_gate(states: dict, g: int) -> bool:
    """Ready when a quorum of instances have decided success."""
    wins = sum(1 for st in states.values() if st.decided == SUCCESS)
    return wins >= quorum(g)


def synod_dead(states: dict, g: int) -> bool:
    """True once enough instances decided failure that the gate can never open."""
    losses = sum(1 for st in states.values() if st.decided == FAILURE)
    return losses > g - quorum(g)


# -- group member -----------------------------------------------------------------


@dataclass
class MemberTxState:
    log: TxLogReplica
    synods: dict  # subject member id -> SynodState
    proposed_success: bool = False
    expired: bool = False
    failure_rounds: dict = field(default_factory=dict)  # subject -> last round used


class GroupMember:
    """One server's transaction-manager role for one group.

    Handlers return a list of (destination, message); destinations are peer
    member ids or the literal client id carried by the transaction ops.
    The caller supplies ``effects_done`` — whether this member's side
    effects (locks, read proxying) for the transaction have completed —
    since those run against the store, outside this module.
    """

    def __init__(self, member_id: str, members):
        self.member_id = member_id
        self.members = list(members)
        self.g = len(self.members)
        self.txs: dict = {}  # TxId -> MemberTxState

    def tx_state(self, tx: TxId) -> MemberTxState:
        st = self.txs.get(tx)
        if st is None:
            st = MemberTxState(
                log=TxLogReplica(tx),
                synods={m: synod_init(m) for m in self.members},
            )
            self.txs[tx] = st
        return st

    def peers(self):
        return [m for m in self.members if m != self.member_id]

    def on_log_op(self, client: str, msg: LogOp, effects_done: bool = True) -> list:
        st = self.tx_state(msg.tx)
        if st.expired:
            return [(client, LogReject(msg.tx, msg.op.seq, self.member_id, "expired"))]
        st.log.append(msg.op)
        out = [(client, LogAck(msg.tx, msg.op.seq, self.member_id))]
        if msg.op.kind == COMMIT_REQ and st.log.missing():
            have = frozenset(st.log.ops)
            out += [(p, PullOps(msg.tx, self.member_id, have)) for p in self.peers()]
        out += self.maybe_propose_success(msg.tx, effects_done)
        return out

    def on_pull(self, msg: PullOps) -> list:
        st = self.tx_state(msg.tx)
        extra = tuple(op for seq, op in sorted(st.log.ops.items()) if seq not in msg.have)
        return [(msg.requester, PushOps(msg.tx, extra))] if extra else []

    def on_push(self, msg: PushOps, effects_done: bool = True) -> list:
        st = self.tx_state(msg.tx)
        for op in msg.ops:
            st.log.append(op)
        return self.maybe_propose_success(msg.tx, effects_done)

    def maybe_propose_success(self, tx: TxId, effects_done: bool) -> list:
        """Own-instance success proposal, once, when the log is whole."""
        st = self.tx_state(tx)
        if st.proposed_success or st.expired or not effects_done or not st.log.complete():
            return []
        st.proposed_success = True
        accept = SynodAccept(tx, self.member_id, Ballot(0, self.member_id), SUCCESS)
        return [(m, accept) for m in self.members]

    def propose_failure(self, tx: TxId, subject: str) -> list:
        """Start a classic round to mark subject's instance failed."""
        st = self.tx_state(tx)
        rnd = st.failure_rounds.get(subject, 0) + 1
        st.failure_rounds[subject] = rnd
        prep = SynodPrepare(tx, subject, Ballot(rnd, self.member_id))
        return [(m, prep) for m in self.members]

    def expire(self, tx: TxId) -> list:
        """Garbage collection: reject future ops, push every instance to failure."""
        st = self.tx_state(tx)
        st.expired = True
        out = []
        for subject in self.members:
            if not st.synods[subject].decided:
                out += self.propose_failure(tx, subject)
        return out

    def on_synod_prepare(self, msg: SynodPrepare) -> list:
        st = self.tx_state(msg.tx)
        resp = synod_on_prepare(st.synods[msg.subject], self.member_id, msg)
        return [(msg.ballot.leader, resp)] if resp else []

    def on_synod_promise(self, msg: SynodPromise) -> list:
        """Collect promises for a round we lead; send 2As at quorum."""
        st = self.tx_state(msg.tx)
        synod = st.synods[msg.subject]
        pool = synod.promises.setdefault(msg.ballot, {})
        pool[msg.acceptor] = msg
        if len(pool) == quorum(self.g) and msg.ballot.leader == self.member_id:
            value = synod_choose(pool.values(), FAILURE)
            accept = SynodAccept(msg.tx, msg.subject, msg.ballot, value)
            return [(m, accept) for m in self.members]
        return []

    def on_synod_accept(self, msg: SynodAccept) -> list:
        st = self.tx_state(msg.tx)
        resp = synod_on_accept(st.synods[msg.subject], self.member_id, msg)
        return [(m, resp) for m in self.members] if resp else []

    def on_synod_accepted(self, msg: SynodAccepted) -> bool:
        """Fold a vote; True when the gate just opened."""
        st = self.tx_state(msg.tx)
        before = synod_gate(st.synods, self.g)
        synod_on_accepted(st.synods[msg.subject], msg, self.g)
        return not before and synod_gate(st.synods, self.g)

    def gate_open(self, tx: TxId) -> bool:
        return synod_gate(self.tx_state(tx).synods, self.g)


# -- client side -------------------------------------------------------------------


@dataclass
class ClientTxState:
    """The single proposer: sequences ops and watches quorum acknowledgements."""

    tx: TxId
    members: list
    next_seq: int = 0
    acks: dict = field(default_factory=dict)  # seq -> set of members
    acked_through: dict = field(default_factory=dict)  # member -> high-water seq
    rejected: bool = False

    def stamp(self, kind: str, key: str = "", value: str = "") -> TxOp:
        op = TxOp(self.next_seq, kind, key, value)
        self.next_seq += 1
        return op

    def on_ack(self, ack: LogAck) -> None:
        self.acks.setdefault(ack.seq, set()).add(ack.member)
        prev = self.acked_through.get(ack.member, -1)
        self.acked_through[ack.member] = max(prev, ack.seq)

    def op_acked(self, seq: int) -> bool:
        return len(self.acks.get(seq, ())) >= quorum(len(self.members))

    def all_acked(self) -> bool:
        return all(self.op_acked(s) for s in range(self.next_seq))
