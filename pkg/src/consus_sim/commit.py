"""Outcome counting and the pure decision rules of the commit protocol.

A transaction's fate is read off the learned command structure of its
inter-data-center consensus instance: commit results and abort results
count per data center, and retractions shift a previously counted commit
toward abort — unless a commit quorum had already been reached by the
time the retraction is processed, in which case it is ignored.  Because
retractions commute with nothing, every linearization of a learned value
processes them at the same point relative to every result, which makes
the tally linearization-independent (tested exhaustively).

The protocol state machines that produce these structures live in
``cluster``; everything here is side-effect free.
"""

from __future__ import annotations

from dataclasses import dataclass

from .cstruct import ABORT, COMMIT, CStruct, Result, Retraction
from .genpaxos import quorum

UNDECIDED = "undecided"

ABSENT = "\0absent"  # observed value for a key that did not exist


@dataclass(frozen=True)
class TransactionRecord:
    """What the origin ships so every other data center can replay the work.

    reads hold (key, observed value, observed version) triples, with ABSENT
    and kvstore.ABSENT_VERSION standing in for keys that did not exist.
    writes hold (key, value) pairs and stay buffered until a commit
    decision; they are stamped with ``version``, which is assigned when the
    record is assembled — after every read — so it orders strictly above
    every version the transaction observed.  (Stamping with the begin time
    instead would let an overwrite lose to the very row it read.)
    """

    tx: object  # txmgr.TxId
    origin: int  # data-center index, 1-based
    version: tuple
    reads: tuple
    writes: tuple

    def read_keys(self) -> list:
        return [k for k, _, _ in self.reads]

    def write_keys(self) -> list:
        return [k for k, _ in self.writes]


@dataclass(frozen=True)
class ExecutionVerdict:
    dc: int
    verdict: str  # COMMIT or ABORT

    def as_result(self) -> Result:
        return Result(self.dc, self.verdict)


@dataclass(frozen=True)
class OutcomeTally:
    commits: int
    aborts: int
    retracted: frozenset
    decision: str  # COMMIT, ABORT, or UNDECIDED


def tally_walk(seq, n: int) -> OutcomeTally:
    """Count one command sequence; exposed so tests can walk every linearization."""
    q = quorum(n)
    commits = 0
    aborts = 0
    counted: dict = {}  # dc -> verdict currently standing
    retracted: set = set()
    pinned: set = set()
    for cmd in seq:
        if isinstance(cmd, Result):
            if cmd.dc in pinned:
                continue  # the retraction arrived first; the result is void
            if cmd.verdict == COMMIT:
                commits += 1
            else:
                aborts += 1
            counted[cmd.dc] = cmd.verdict
        elif isinstance(cmd, Retraction):
            if commits >= q:
                continue  # decision already safe; retraction is ignored
            prior = counted.get(cmd.dc)
            if prior == COMMIT:
                commits -= 1
                aborts += 1
                counted[cmd.dc] = ABORT
                retracted.add(cmd.dc)
            elif prior is None:
                aborts += 1
                counted[cmd.dc] = ABORT
                pinned.add(cmd.dc)
                retracted.add(cmd.dc)
            # a standing abort needs no retracting
        else:
            raise TypeError("unexpected command %r" % (cmd,))
    if commits >= q:
        decision = COMMIT
    elif aborts > n - q:
        decision = ABORT
    else:
        decision = UNDECIDED
    return OutcomeTally(commits, aborts, frozenset(retracted), decision)


def tally(learned: CStruct, n: int) -> OutcomeTally:
    return tally_walk(learned.cmds, n)


def reexecution_verdict(record: TransactionRecord, local: dict):
    """Validate a shipped record against this data center's committed state.

    ``local`` maps each of the record's read keys to (value, version) as
    found here, omitting keys that do not exist.  Matching is by value: the
    transaction commits here iff every key it read holds the same value it
    observed at the origin.  A key the origin saw but we lack is not a
    mismatch — the origin's copy is authoritative and the row is healed by
    an implicit write carrying the originally observed version, so repeated
    healing converges and a genuinely newer write still wins.

    Returns (verdict, implicit_writes) where implicit_writes is a tuple of
    (key, value, version) rows to install alongside the transaction's own
    writes if it commits globally.
    """
    implicit = []
    for key, observed, version in record.reads:
        row = local.get(key)
        if observed == ABSENT:
            if row is not None:
                return ABORT, ()
        elif row is None:
            implicit.append((key, observed, version))
        elif row[0] != observed:
            return ABORT, ()
    return COMMIT, tuple(implicit)


def decision_rows(record: TransactionRecord, implicit_writes=()) -> tuple:
    """Store rows to install once the transaction commits globally.

    Implicit restores come first; the transaction's own writes carry the
    record version, which exceeds every observed version, so order here is
    belt and the version comparison is suspenders.
    """
    rows = list(implicit_writes)
    for key, value in record.writes:
        rows.append((key, value, record.version))
    return tuple(rows)


def release_order(pending) -> list:
    """Retractions leave the pending set in ascending data-center order.

    Identical release orders at every data center give the acceptors
    identical suffixes, so the learners see unanimous evidence instead of
    a conflict.
    """
    return sorted(pending, key=lambda r: r.dc)


def should_release(proposed, pending, n: int) -> bool:
    """Whether held retractions may be proposed.

    They stay held while the results proposed so far would still carry a
    commit quorum with the retractions folded in (the ignore rule can make
    them moot); once that hypothetical tally loses the quorum, aborting is
    inevitable-or-harmless and the retractions go out.
    """
    if not pending:
        return False
    hypothetical = list(proposed) + release_order(pending)
    return tally_walk(hypothetical, n).commits < quorum(n)
