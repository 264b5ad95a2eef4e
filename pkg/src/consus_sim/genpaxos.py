"""Consensus over command structures instead of single values.

Acceptors grow a c-struct by appending commands on the fast path (ballot
zero, pre-agreed, no phase one); learners take the greatest lower bound
of the latest acceptor snapshots once a quorum has reported.  A classic
ballot with an explicit leader recovers from conflicts: the leader
collects promises, picks a safe value (least upper bound of what was
reported, or the greatest lower bound plus a deterministic suffix when
the reports conflict), and installs it as the new base.

Learned values only ever grow.  With fewer than all acceptors reporting,
the learner only admits commands the algebra marks fast-safe (mutually
commuting, so their order can never matter); order-sensitive commands
such as retractions are learnable only with unanimous evidence or
through a classic round.  The restriction is what makes majority
evidence sound here: two majorities need not share more than one
acceptor, so a recovery leader whose promises conflict cannot tell
which side a fast learner believed.  Restricted to fast-safe commands,
every sub-unanimously learnable value is a mutually-commuting ideal of
some promised value, and the classic choice rule (glb of the conflicting
reports, then leftovers with fast-safe commands first) provably embeds
them all.  The model-check module verifies this exhaustively.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .cstruct import BOTTOM, Algebra, CStruct, empty, glb, lub

FAST = "fast"
CLASSIC = "classic"


class SafetyViolation(Exception):
    """Raised when two learned values are incompatible; indicates a protocol bug."""


@dataclass(frozen=True, order=True)
class Ballot:
    round: int
    leader: str

    @property
    def kind(self) -> str:
        return FAST if self.round == 0 else CLASSIC

    def __repr__(self) -> str:
        return "b%d@%s" % (self.round, self.leader)


def fast_ballot(leader: str) -> Ballot:
    return Ballot(0, leader)


def quorum(n: int) -> int:
    return n // 2 + 1


@dataclass(frozen=True)
class Phase1A:
    ballot: Ballot


class _CachedHash:
    """Frozen dataclasses re-hash every field on each lookup; these messages
    key memoization tables constantly, so hash once and remember."""

    def __hash__(self) -> int:
        h = self.__dict__.get("_hash")
        if h is None:
            h = hash(tuple(self.__dict__[f] for f in self.__dataclass_fields__))
            object.__setattr__(self, "_hash", h)
        return h


@dataclass(frozen=True, eq=True)
class Phase1B(_CachedHash):
    acceptor: str
    ballot: Ballot
    accepted: Ballot
    value: CStruct
    base: CStruct

    __hash__ = _CachedHash.__hash__


@dataclass(frozen=True)
class Phase2A(_CachedHash):
    ballot: Ballot
    value: CStruct

    __hash__ = _CachedHash.__hash__


@dataclass(frozen=True)
class Phase2B(_CachedHash):
    acceptor: str
    ballot: Ballot
    value: CStruct
    base: CStruct

    __hash__ = _CachedHash.__hash__


@dataclass(frozen=True)
class Nack:
    """Rejection carrying the promise that caused it.

    How a proposer that is not the pre-agreed leader discovers the implicit
    promise: its first message bounces with the ballot it must beat.
    """

    promised: Ballot


@dataclass
class AcceptorState:
    promised: Ballot
    accepted: Ballot
    value: CStruct
    base: CStruct


def implicit_init(algebra: Algebra, default_leader: str) -> AcceptorState:
    """Initialize as if phase one for ballot zero already ran; no messages."""
    b = fast_ballot(default_leader)
    e = empty(algebra)
    return AcceptorState(promised=b, accepted=b, value=e, base=e)


def fast_propose(acc: AcceptorState, cmd):
    """Append cmd at the current ballot.

    Returns ("ok", changed) or ("reject", promised).  A proposal is refused
    once the acceptor has promised a ballot it has not yet accepted in.
    """
    if acc.promised != acc.accepted:
        return ("reject", acc.promised)
    nv = acc.value.append(cmd)
    if nv is acc.value:
        return ("ok", False)
    acc.value = nv
    return ("ok", True)


def phase1a(acc: AcceptorState, acceptor_id: str, ballot: Ballot):
    """Handle a phase-1A; returns a Phase1B on promise, else a Nack."""
    if ballot > acc.promised:
        acc.promised = ballot
        return Phase1B(acceptor_id, ballot, acc.accepted, acc.value, acc.base)
    return Nack(acc.promised)


def phase2a_accept(acc: AcceptorState, acceptor_id: str, msg: Phase2A):
    """Accept a leader-chosen value; it becomes the new base for fast appends."""
    if msg.ballot >= acc.promised:
        acc.promised = msg.ballot
        acc.accepted = msg.ballot
        acc.value = msg.value
        acc.base = msg.value
        return Phase2B(acceptor_id, msg.ballot, acc.value, acc.base)
    return Nack(acc.promised)


def snapshot(acc: AcceptorState, acceptor_id: str) -> Phase2B:
    return Phase2B(acceptor_id, acc.accepted, acc.value, acc.base)


def fast_frontier(value: CStruct, base: CStruct) -> CStruct:
    """Largest prefix of value containing, beyond base, only fast-safe commands.

    This is what partial evidence is allowed to teach: the base was installed
    by a ballot (or is empty), and anything past it whose order could matter
    stays unlearnable until every acceptor vouches for it.
    """
    algebra = value.algebra
    kept: list = []
    kept_set: set = set()
    for c in value.cmds:
        if not value.preds(c) <= kept_set:
            continue
        if c in base.command_set or algebra.fast_safe(c):
            kept.append(c)
            kept_set.add(c)
    return CStruct(algebra, kept)


@dataclass
class LearnerState:
    learned: CStruct
    latest: dict = field(default_factory=dict)  # acceptor id -> Phase2B


def new_learner(algebra: Algebra) -> LearnerState:
    return LearnerState(learned=empty(algebra))


def learn(ls: LearnerState, incoming: Phase2B, n_acceptors: int) -> bool:
    """Fold one acceptor snapshot into the learner; True if learned grew.

    The learned value is the glb of the latest snapshots at the highest
    ballot for which at least a quorum of acceptors has reported, clipped
    to the commuting frontier unless every acceptor reported.
    """
    cur = ls.latest.get(incoming.acceptor)
    if cur is not None:
        if incoming.ballot < cur.ballot:
            return False
        if incoming.ballot == cur.ballot and not incoming.value.extends(cur.value):
            return False
    ls.latest[incoming.acceptor] = incoming
    by_ballot: dict = {}
    for snap in ls.latest.values():
        by_ballot.setdefault(snap.ballot, []).append(snap)
    q = quorum(n_acceptors)
    full = [b for b, snaps in by_ballot.items() if len(snaps) >= q]
    if not full:
        return False
    top = max(full)
    snaps = by_ballot[top]
    g = glb([s.value for s in snaps])
    if len(snaps) < n_acceptors:
        g = fast_frontier(g, snaps[0].base)
    if g.properly_extends(ls.learned):
        ls.learned = g
        return True
    if not ls.learned.extends(g) and lub([g, ls.learned]) is BOTTOM:
        raise SafetyViolation("learned %r vs quorum glb %r" % (ls.learned, g))
    return False


def detect_conflict(values) -> bool:
    """True when acceptor snapshots order non-commuting commands inconsistently."""
    vals = list(values)
    if len(vals) < 2:
        return False
    return lub(vals) is BOTTOM


def phase2a_classic(algebra: Algebra, onebs) -> CStruct:
    """Safe value for a classic round from a quorum of promises.

    Reports from the highest previously accepted ballot are joined; if they
    conflict, take their glb and append the leftover commands in a fixed
    order (the algebra's sort key puts retraction-like commands last), which
    embeds every value a fast quorum could have learned.
    """
    onebs = list(onebs)
    if not onebs:
        raise ValueError("phase2a_classic needs at least one promise")
    top = max(b.accepted for b in onebs)
    vals = [b.value for b in onebs if b.accepted == top]
    joined = lub(vals)
    if joined is not BOTTOM:
        return joined
    g = glb(vals)
    extra: dict = {}
    for v in vals:
        for c in v.cmds:
            s = algebra.slot(c)
            if c not in g.command_set and s not in extra:
                extra[s] = c
    return g.extend(sorted(extra.values(), key=algebra.sort_key))
