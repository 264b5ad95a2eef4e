"""Exhaustive safety check for fast-path learning plus one recovery round.

The state space is folded down to what actually determines learned values:

* Each of the three acceptors ends up with some arrival order of the
  command set (default: three commit results and one retraction).  Message
  schedules only influence outcomes through these orders, so enumerating
  per-acceptor permutations covers every schedule.  Acceptors are
  interchangeable, which cuts the triple space to multisets of orders.
* A learner may have recorded any prefix of each acceptor's order, or
  nothing from it ("evidence vector").  Every vector with at least a
  quorum recorded yields a learnable value through the real learner rule
  (glb, clipped to the commuting frontier below unanimous evidence) —
  monotonicity means intermediate learner states are themselves such
  vectors, so checking all vectors covers all learner histories.
* A recovery leader may start a classic round with promises from any
  quorum; each promise reports the acceptor's value at promise time,
  which is some prefix of its order no shorter than any evidence a fast
  learner gathered from that acceptor beforehand.

Checked invariants, for every reachable combination:

1. any two learnable values have a least upper bound (no split decisions);
2. the classic round's chosen value extends every value that any fast
   learner could have learned from evidence predating the promises.

Scope: a single recovery ballot.  Chained classic rounds preserve safety
by the usual argument — each installs its choice as the base of the next
ballot, and bases only ever extend — so the fast/classic boundary checked
here is the only novel surface.
"""

from __future__ import annotations

import itertools
import time
from dataclasses import dataclass, field

from .cstruct import BOTTOM, COMMIT, CStruct, Result, Retraction, VERDICTS, empty, glb, lub
from .genpaxos import Ballot, Phase1B, fast_ballot, fast_frontier, phase2a_classic, quorum

DEFAULT_COMMANDS = (
    Result(1, COMMIT),
    Result(2, COMMIT),
    Result(3, COMMIT),
    Retraction(1),
)


@dataclass
class SafetyReport:
    runs: int = 0
    candidate_values: int = 0
    pair_checks: int = 0
    classic_checks: int = 0
    violations: list = field(default_factory=list)
    seconds: float = 0.0

    @property
    def ok(self) -> bool:
        return not self.violations


def check_safety(commands=DEFAULT_COMMANDS, n_acceptors: int = 3,
                 include_classic: bool = True, max_violations: int = 20,
                 algebra=VERDICTS) -> SafetyReport:
    q = quorum(n_acceptors)
    report = SafetyReport()
    t0 = time.monotonic()

    orders = list(itertools.permutations(commands))
    nothing = empty(algebra)

    # interned prefix structures per order, index 0 = nothing recorded yet
    prefixes = {}
    pool = {nothing: nothing}
    for o in orders:
        row = [nothing]
        for c in o:
            nxt = row[-1].append(c)
            row.append(pool.setdefault(nxt, nxt))
        prefixes[o] = row

    glb2: dict = {}
    lub2: dict = {}
    front: dict = {}
    ext: dict = {}

    def meet(a, b):
        got = glb2.get((a, b))
        if got is None:
            got = glb2[(a, b)] = glb2[(b, a)] = glb([a, b])
        return got

    def compatible(a, b):
        key = (a, b)
        got = lub2.get(key)
        if got is None:
            got = lub2[(a, b)] = lub2[(b, a)] = lub([a, b]) is not BOTTOM
        return got

    def clip(v):
        got = front.get(v)
        if got is None:
            got = front[v] = fast_frontier(v, nothing)
        return got

    def extends(big, small):
        key = (big, small)
        got = ext.get(key)
        if got is None:
            got = ext[key] = big.extends(small)
        return got

    learnable_memo: dict = {}

    def learnable(snaps_key, all_n):
        got = learnable_memo.get((snaps_key, all_n))
        if got is None:
            vals = list(snaps_key)
            g = vals[0]
            for v in vals[1:]:
                g = meet(g, v)
            if not all_n:
                g = clip(g)
            got = learnable_memo[(snaps_key, all_n)] = g
        return got

    chosen_memo: dict = {}
    b1 = Ballot(1, "recovery")
    b0 = fast_ballot("model")

    def classic_choice(values_key):
        got = chosen_memo.get(values_key)
        if got is None:
            onebs = [Phase1B("a%d" % i, b1, b0, v, nothing)
                     for i, v in enumerate(values_key)]
            got = chosen_memo[values_key] = phase2a_classic(algebra, onebs)
        return got

    depth = len(commands)
    vector_space = [kvec for kvec in itertools.product(range(depth + 1), repeat=n_acceptors)
                    if sum(1 for k in kvec if k > 0) >= q]
    quorums = [qs for r in range(q, n_acceptors + 1)
               for qs in itertools.combinations(range(n_acceptors), r)]

    def flag(msg):
        if len(report.violations) < max_violations:
            report.violations.append(msg)

    for triple in itertools.combinations_with_replacement(orders, n_acceptors):
        report.runs += 1
        rows = [prefixes[o] for o in triple]

        # every learnable value in this run, with the evidence that yields it
        by_value: dict = {}
        for kvec in vector_space:
            snaps = tuple(rows[i][k] for i, k in enumerate(kvec) if k > 0)
            v = learnable(snaps, len(snaps) == n_acceptors)
            by_value.setdefault(v, []).append(kvec)
        values = list(by_value)
        report.candidate_values += len(values)

        for i, v in enumerate(values):
            for w in values[i + 1:]:
                report.pair_checks += 1
                if not compatible(v, w):
                    flag("incompatible learned values %r / %r in run %r" % (v, w, triple))

        if not include_classic:
            continue

        for qs in quorums:
            for pvec in itertools.product(range(depth + 1), repeat=len(qs)):
                chosen = classic_choice(tuple(rows[a][p] for a, p in zip(qs, pvec)))
                report.classic_checks += 1
                for v, kvecs in by_value.items():
                    reachable = any(
                        all(kv[a] <= p for a, p in zip(qs, pvec)) for kv in kvecs
                    )
                    if reachable and not extends(chosen, v):
                        flag(
                            "classic choice %r does not extend learnable %r "
                            "(run %r, quorum %r, promises %r)"
                            % (chosen, v, triple, qs, pvec)
                        )

    report.seconds = time.monotonic() - t0
    return report
