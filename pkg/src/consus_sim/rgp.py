"""Consensus ensembles standing in for single acceptors.

A data center's participant in the cross-DC protocol is not one process but
a small cluster of servers running their own generalized consensus instance
over *wrapped protocol messages*: every message that would have been sent to
the data center's acceptor (a command proposal, a phase-1A, a phase-2A) and
every message its learner or proposer role consumes (2Bs, 1Bs, nacks) is
fast-proposed into the local instance as a command.  Once locally learned,
the message poset is replayed — in any linearization, they all agree — into
a fresh inner acceptor/learner, and the messages that replay emits are
routed to the other data centers' ensembles.

Ordering rules for wrapped messages (everything else is ordered):
  1. two phase-1Bs of the same ballot are unordered;
  2. two phase-2Bs are unordered iff their values have an upper bound;
  3. two proposals are unordered iff the inner commands commute;
  4. a proposal and a phase-2B are unordered iff the proposed command
     commutes with every element of the 2B's value.

Slots make contested singletons converge instead of forking: one verdict
proposal per inner slot, one phase-2A per ballot, one 1A per ballot.  A
server that wants to emit its data center's verdict (or a recovery choice)
proposes it locally first and exports only what the local instance learned,
so a data center never ships two contradictory verdicts — which is also
what lets all-result 2B snapshots stay mutually compatible and therefore
safe to learn from sub-unanimous evidence.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .cstruct import BOTTOM, Algebra, CStruct, empty, lub
from .genpaxos import (
    AcceptorState,
    Ballot,
    LearnerState,
    Nack,
    Phase1A,
    Phase1B,
    Phase2A,
    Phase2B,
    fast_propose,
    implicit_init,
    new_learner,
    learn,
    phase1a,
    phase2a_accept,
    phase2a_classic,
    quorum,
    snapshot,
)

BROADCAST = "*"


@dataclass(frozen=True)
class Proposal:
    """An inner command on its way to a simulated acceptor."""

    command: object

    def __hash__(self) -> int:
        h = self.__dict__.get("_hash")
        if h is None:
            h = hash(("prop", self.command))
            object.__setattr__(self, "_hash", h)
        return h


def _ballot_key(b: Ballot):
    return (b.round, b.leader)


class MessageAlgebra(Algebra):
    """Commutation, slots, and ordering for wrapped protocol messages."""

    def __init__(self, inner: Algebra):
        self.inner = inner
        self.name = "wrapped-" + inner.name
        # commutation is consulted quadratically by every normalization and
        # fold; message pairs repeat constantly, so memoize per message pair
        self._commute_cache: dict = {}
        self._slot_cache: dict = {}
        self._key_cache: dict = {}

    def commutes(self, a, b) -> bool:
        got = self._commute_cache.get((a, b))
        if got is None:
            got = self._commutes(a, b)
            self._commute_cache[(a, b)] = got
            self._commute_cache[(b, a)] = got
        return got

    def _commutes(self, a, b) -> bool:
        if isinstance(a, Phase1B) and isinstance(b, Phase1B):
            return a.ballot == b.ballot
        if isinstance(a, Phase2B) and isinstance(b, Phase2B):
            return lub([a.value, b.value]) is not BOTTOM
        if isinstance(a, Proposal) and isinstance(b, Proposal):
            return self.inner.commutes(a.command, b.command)
        if isinstance(a, Phase2B) and isinstance(b, Proposal):
            a, b = b, a
        if isinstance(a, Proposal) and isinstance(b, Phase2B):
            return all(self.inner.commutes(a.command, c) for c in b.value.cmds)
        return False

    def fast_safe(self, cmd) -> bool:
        if isinstance(cmd, Proposal):
            return self.inner.fast_safe(cmd.command)
        if isinstance(cmd, Phase2B):
            return all(self.inner.fast_safe(c) for c in cmd.value.cmds)
        return False

    def slot(self, cmd):
        got = self._slot_cache.get(cmd)
        if got is None:
            got = self._slot(cmd)
            self._slot_cache[cmd] = got
        return got

    def _slot(self, cmd):
        if isinstance(cmd, Proposal):
            return ("prop", self.inner.slot(cmd.command))
        if isinstance(cmd, Phase1A):
            return ("1a",) + _ballot_key(cmd.ballot)
        if isinstance(cmd, Phase2A):
            return ("2a",) + _ballot_key(cmd.ballot)
        if isinstance(cmd, Phase1B):
            return ("1b",) + _ballot_key(cmd.ballot) + (cmd.acceptor,)
        if isinstance(cmd, Phase2B):
            return ("2b", cmd.acceptor) + _ballot_key(cmd.ballot) + (
                self._fingerprint(cmd.value),
            )
        return ("nack",) + _ballot_key(cmd.promised)

    def sort_key(self, cmd):
        got = self._key_cache.get(cmd)
        if got is None:
            got = self._sort_key(cmd)
            self._key_cache[cmd] = got
        return got

    def _sort_key(self, cmd):
        lead = 0 if self.fast_safe(cmd) else 1
        if isinstance(cmd, Proposal):
            return (lead, 0, self.inner.sort_key(cmd.command))
        if isinstance(cmd, Phase2B):
            return (
                lead,
                1,
                (cmd.acceptor,) + _ballot_key(cmd.ballot) + (self._fingerprint(cmd.value),),
            )
        if isinstance(cmd, Phase1B):
            return (1, 2, _ballot_key(cmd.ballot) + (cmd.acceptor,))
        if isinstance(cmd, Phase1A):
            return (1, 3, _ballot_key(cmd.ballot))
        if isinstance(cmd, Phase2A):
            return (1, 4, _ballot_key(cmd.ballot))
        return (1, 5, _ballot_key(cmd.promised))

    def render(self, cmd) -> str:
        if isinstance(cmd, Proposal):
            return "P(%s)" % self.inner.render(cmd.command)
        if isinstance(cmd, Phase2B):
            return "2B(%s,%r)" % (cmd.acceptor, cmd.value)
        if isinstance(cmd, Phase1B):
            return "1B(%s,%r)" % (cmd.acceptor, cmd.ballot)
        if isinstance(cmd, Phase1A):
            return "1A(%r)" % cmd.ballot
        if isinstance(cmd, Phase2A):
            return "2A(%r,%r)" % (cmd.ballot, cmd.value)
        return "Nack(%r)" % cmd.promised

    def _fingerprint(self, value: CStruct):
        return tuple(self.inner.sort_key(c) for c in value.cmds)


@dataclass
class InnerReplay:
    """Inner-protocol state rebuilt from one learned message poset."""

    acceptor: AcceptorState
    learner: LearnerState
    emissions: list = field(default_factory=list)  # (destination dc | "*", message)
    onebs: dict = field(default_factory=dict)  # ballot -> {inner acceptor id: Phase1B}
    twoas: set = field(default_factory=set)  # ballots with a 2A already in the poset
    pending: list = field(default_factory=list)  # proposals blocked mid-recovery
    max_round: int = 0


def replay_sequence(cmds, *, dc: str, origin: str, inner_algebra: Algebra, n_dcs: int) -> InnerReplay:
    """Apply wrapped messages in the given order to a fresh inner participant.

    Proposals append to the acceptor on the fast path; while a promise is
    outstanding they queue and flush after the next accepted 2A, so a
    proposal never needs to be re-issued around a recovery.  2Bs feed the
    learner, 1Bs pool for a recovery this data center may be leading, and
    ballot messages drive the acceptor's promise state.  Everything emitted
    is a deterministic function of the input sequence's trace class.
    """
    rep = InnerReplay(
        acceptor=implicit_init(inner_algebra, origin),
        learner=new_learner(inner_algebra),
    )
    acc = rep.acceptor
    for m in cmds:
        if isinstance(m, Proposal):
            status, _ = fast_propose(acc, m.command)
            if status == "reject":
                rep.pending.append(m.command)
        elif isinstance(m, Phase1A):
            rep.max_round = max(rep.max_round, m.ballot.round)
            resp = phase1a(acc, dc, m.ballot)
            rep.emissions.append((m.ballot.leader, resp))
        elif isinstance(m, Phase2A):
            rep.max_round = max(rep.max_round, m.ballot.round)
            rep.twoas.add(m.ballot)
            resp = phase2a_accept(acc, dc, m)
            if isinstance(resp, Phase2B):
                for cmd in rep.pending:
                    fast_propose(acc, cmd)
                rep.pending.clear()
            else:
                rep.emissions.append((m.ballot.leader, resp))
        elif isinstance(m, Phase1B):
            rep.max_round = max(rep.max_round, m.ballot.round)
            if m.ballot.leader == dc:
                rep.onebs.setdefault(m.ballot, {})[m.acceptor] = m
        elif isinstance(m, Phase2B):
            rep.max_round = max(rep.max_round, m.ballot.round)
            learn(rep.learner, m, n_dcs)
        elif isinstance(m, Nack):
            rep.max_round = max(rep.max_round, m.promised.round)
        else:
            raise TypeError("not a wrapped protocol message: %r" % (m,))
    if acc.value.cmds or acc.accepted.round > 0:
        rep.emissions.append((BROADCAST, snapshot(acc, dc)))
    return rep


def replay_poset(learned: CStruct, *, dc: str, origin: str, inner_algebra: Algebra, n_dcs: int) -> InnerReplay:
    """Replay a learned poset in its canonical linearization."""
    return replay_sequence(
        learned.cmds, dc=dc, origin=origin, inner_algebra=inner_algebra, n_dcs=n_dcs
    )


def recovery_choice(rep: InnerReplay, inner_algebra: Algebra, dc: str, n_dcs: int):
    """The 2A this data center should propose locally, if it leads a ready ballot.

    Ready means: a ballot we lead has promises from an acceptor quorum in
    the learned poset and no 2A for it exists yet.  The returned message
    still goes through the local instance (one 2A per ballot by slot), so
    concurrent servers computing different quorums cannot fork the round.
    """
    ready = [
        b
        for b, promises in rep.onebs.items()
        if b.leader == dc and len(promises) >= quorum(n_dcs) and b not in rep.twoas
    ]
    if not ready:
        return None
    ballot = max(ready, key=_ballot_key)
    value = phase2a_classic(inner_algebra, rep.onebs[ballot].values())
    return Phase2A(ballot, value)


def next_recovery_ballot(rep: InnerReplay, dc: str) -> Ballot:
    return Ballot(rep.max_round + 1, dc)
