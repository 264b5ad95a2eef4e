"""Wrapped-message ordering rules and inner-state replay."""

import itertools
import random

import pytest

from consus_sim.cstruct import (
    BOTTOM,
    COMMIT,
    ABORT,
    CStruct,
    Result,
    Retraction,
    VERDICTS,
    empty,
    lub,
)
from consus_sim.genpaxos import (
    Ballot,
    Nack,
    Phase1A,
    Phase1B,
    Phase2A,
    Phase2B,
    fast_ballot,
    fast_propose,
    implicit_init,
)
from consus_sim.rgp import (
    BROADCAST,
    InnerReplay,
    MessageAlgebra,
    Proposal,
    next_recovery_ballot,
    recovery_choice,
    replay_poset,
    replay_sequence,
)

ALG = MessageAlgebra(VERDICTS)

RC1, RC2, RC3 = Result("dc1", COMMIT), Result("dc2", COMMIT), Result("dc3", COMMIT)
RA1 = Result("dc1", ABORT)
X1, X2 = Retraction("dc1"), Retraction("dc2")


def vs(*cmds):
    return CStruct(VERDICTS, cmds)


def twob(acceptor, value, ballot=fast_ballot("dc1"), base=None):
    return Phase2B(acceptor, ballot, value, base if base is not None else empty(VERDICTS))


def oneb(acceptor, ballot):
    return Phase1B(acceptor, ballot, fast_ballot("dc1"), empty(VERDICTS), empty(VERDICTS))


def replay(cmds, dc="dc1", origin="dc1", n=3):
    return replay_sequence(cmds, dc=dc, origin=origin, inner_algebra=VERDICTS, n_dcs=n)


# -- the four ordering rules ------------------------------------------------------


def test_rule1_phase1bs_unordered_within_a_ballot():
    b1, b2 = Ballot(1, "dc1"), Ballot(2, "dc2")
    assert ALG.commutes(oneb("dc1", b1), oneb("dc2", b1))
    assert not ALG.commutes(oneb("dc1", b1), oneb("dc2", b2))


def test_rule2_phase2bs_unordered_iff_joinable():
    assert ALG.commutes(twob("dc1", vs(RC1)), twob("dc2", vs(RC2)))
    assert lub([vs(RC1), vs(X1)]) is BOTTOM
    assert not ALG.commutes(twob("dc1", vs(RC1)), twob("dc2", vs(X1)))
    # growing snapshots from one acceptor always join
    assert ALG.commutes(twob("dc1", vs(RC1)), twob("dc1", vs(RC1, RC2)))


def test_rule3_proposals_follow_inner_commutation():
    assert ALG.commutes(Proposal(RC1), Proposal(RC2))
    assert not ALG.commutes(Proposal(RC1), Proposal(X2))
    assert not ALG.commutes(Proposal(X1), Proposal(X2))


def test_rule4_proposal_vs_evidence():
    assert not ALG.commutes(Proposal(X1), twob("dc2", vs(RC1)))  # retraction orders
    assert ALG.commutes(Proposal(RC3), twob("dc2", vs(RC1, RC2)))
    assert not ALG.commutes(Proposal(RC3), twob("dc2", vs(RC1, X1)))
    # symmetric in argument order
    assert not ALG.commutes(twob("dc2", vs(RC1)), Proposal(X1))


def test_everything_else_is_ordered():
    b = Ballot(1, "dc1")
    msgs = [Phase1A(b), Phase2A(b, vs(RC1)), oneb("dc2", b), Nack(b)]
    for m in msgs:
        assert not ALG.commutes(m, Proposal(RC1))
        assert not ALG.commutes(Proposal(RC1), m)
        assert not ALG.commutes(m, twob("dc1", vs(RC1)))
    assert not ALG.commutes(Phase1A(b), Phase2A(b, vs(RC1)))


# -- safe-to-learn-early classification and slots ---------------------------------


def test_fast_safe_messages():
    assert ALG.fast_safe(Proposal(RC1))
    assert not ALG.fast_safe(Proposal(X1))
    assert ALG.fast_safe(twob("dc1", vs(RC1, RC2)))
    assert not ALG.fast_safe(twob("dc1", vs(RC1, X1)))
    assert not ALG.fast_safe(oneb("dc1", Ballot(1, "dc1")))
    assert not ALG.fast_safe(Phase2A(Ballot(1, "dc1"), vs(RC1)))


def test_fast_safe_messages_sort_first_and_mutually_commute():
    b = Ballot(1, "dc1")
    safe = [Proposal(RC1), Proposal(RC2), twob("dc2", vs(RC1)), twob("dc3", vs(RC2, RC3))]
    other = [Proposal(X1), twob("dc2", vs(X1)), oneb("dc2", b), Phase1A(b), Phase2A(b, vs(RC1)), Nack(b)]
    for s in safe:
        for o in other:
            assert ALG.sort_key(s) < ALG.sort_key(o)
    for a, bb in itertools.combinations(safe, 2):
        assert ALG.commutes(a, bb)


def test_slots_converge_contested_singletons():
    b = Ballot(1, "dc1")
    # one verdict per data center: a second, contradictory proposal cannot coexist
    assert ALG.slot(Proposal(RC1)) == ALG.slot(Proposal(RA1))
    assert ALG.slot(Proposal(RC1)) != ALG.slot(Proposal(RC2))
    # one 2A per ballot, whatever the value
    assert ALG.slot(Phase2A(b, vs(RC1))) == ALG.slot(Phase2A(b, vs(RC2)))
    # 1Bs are per (ballot, acceptor); snapshots are per content
    assert ALG.slot(oneb("dc1", b)) != ALG.slot(oneb("dc2", b))
    assert ALG.slot(twob("dc1", vs(RC1))) != ALG.slot(twob("dc1", vs(RC1, RC2)))

    outer = empty(ALG).append(Proposal(RC1))
    assert outer.append(Proposal(RA1)) is outer  # occupied slot swallows the rival


def test_wrapped_proposals_are_idempotent_in_the_outer_instance():
    acc = implicit_init(ALG, "s0")
    assert fast_propose(acc, Proposal(RC1)) == ("ok", True)
    assert fast_propose(acc, Proposal(RC1)) == ("ok", False)
    assert list(acc.value.cmds) == [Proposal(RC1)]


# -- replay ------------------------------------------------------------------------


def test_replay_fast_path_appends_and_snapshots():
    rep = replay([Proposal(RC1), Proposal(RC2), Proposal(RC3)], dc="dc2")
    assert rep.acceptor.value == vs(RC1, RC2, RC3)
    assert rep.pending == []
    kinds = [type(m).__name__ for _, m in rep.emissions]
    assert kinds == ["Phase2B"]
    dest, snap = rep.emissions[0]
    assert dest == BROADCAST
    assert snap.acceptor == "dc2"
    assert snap.value == vs(RC1, RC2, RC3)
    assert snap.ballot == fast_ballot("dc1")  # implicit origin ballot, no phase one


def test_replay_empty_poset_is_silent():
    rep = replay([])
    assert rep.emissions == []
    assert rep.acceptor.value == vs()
    assert rep.learner.learned == vs()


def test_replay_feeds_learner_from_evidence():
    evidence = [
        twob("dc1", vs(RC1, RC2)),
        twob("dc2", vs(RC1, RC2, RC3)),
    ]
    rep = replay(evidence)
    assert rep.learner.learned == vs(RC1, RC2)  # quorum of 2, commuting frontier
    rep = replay(evidence + [twob("dc3", vs(RC1, RC2))])
    assert rep.learner.learned == vs(RC1, RC2)


def test_replay_learns_retraction_only_with_unanimous_evidence():
    partial = [twob("dc1", vs(RC1, X1)), twob("dc2", vs(RC1, X1))]
    rep = replay(partial)
    assert rep.learner.learned == vs(RC1)
    rep = replay(partial + [twob("dc3", vs(RC1, X1))])
    assert rep.learner.learned == vs(RC1, X1)


def test_replay_promise_blocks_then_2a_flushes_pending():
    b1 = Ballot(1, "dc2")
    seq = [
        Phase1A(b1),
        Proposal(RC2),  # arrives mid-recovery: queued, not lost
        Phase2A(b1, vs(RC1)),
    ]
    rep = replay(seq)
    assert rep.pending == []
    assert rep.acceptor.value == vs(RC1, RC2)
    assert rep.acceptor.base == vs(RC1)
    # the promise produced a 1B to the ballot leader, the 2A produced a snapshot
    dests = [d for d, _ in rep.emissions]
    assert dests.count("dc2") == 1
    assert BROADCAST in dests


def test_replay_stale_2a_nacks_and_keeps_pending():
    b1, b2 = Ballot(1, "dc2"), Ballot(2, "dc3")
    seq = [Phase1A(b1), Phase1A(b2), Proposal(RC2), Phase2A(b1, vs(RC1))]
    rep = replay(seq)
    assert rep.pending == [RC2]
    assert rep.acceptor.value == vs()
    nacks = [(d, m) for d, m in rep.emissions if isinstance(m, Nack)]
    assert nacks and nacks[0][0] == "dc2" and nacks[0][1].promised == b2


def test_replay_collects_promises_for_led_ballots_only():
    b_mine, b_other = Ballot(1, "dc1"), Ballot(1, "dc2")
    seq = [oneb("dc2", b_mine), oneb("dc3", b_mine), oneb("dc2", b_other)]
    rep = replay(seq, dc="dc1")
    assert sorted(rep.onebs[b_mine]) == ["dc2", "dc3"]
    assert b_other not in rep.onebs


def test_recovery_choice_fires_once_per_ballot():
    b = Ballot(1, "dc1")
    seq = [oneb("dc2", b), oneb("dc3", b)]
    rep = replay(seq, dc="dc1")
    choice = recovery_choice(rep, VERDICTS, "dc1", 3)
    assert choice is not None and choice.ballot == b
    # not the leader -> nothing to do
    rep2 = replay(seq, dc="dc2")
    assert recovery_choice(rep2, VERDICTS, "dc2", 3) is None
    # 2A already in the poset -> done
    rep3 = replay(seq + [choice], dc="dc1")
    assert recovery_choice(rep3, VERDICTS, "dc1", 3) is None
    assert next_recovery_ballot(rep3, "dc3") == Ballot(2, "dc3")


def test_recovery_choice_needs_a_quorum():
    b = Ballot(1, "dc1")
    rep = replay([oneb("dc2", b)], dc="dc1")
    assert recovery_choice(rep, VERDICTS, "dc1", 3) is None


# -- linearization independence ----------------------------------------------------


def honest_pools():
    b1 = Ballot(1, "dc2")
    yield [Proposal(RC1), Proposal(RC2), Proposal(RC3)]
    yield [Proposal(RC1), twob("dc2", vs(RC1, RC2)), twob("dc3", vs(RC2))]
    yield [Proposal(RC1), Proposal(X1), twob("dc2", vs(RC1))]
    yield [Phase1A(b1), Proposal(RC2), Phase2A(b1, vs(RC1)), oneb("dc3", b1)]
    yield [
        twob("dc2", vs(RC2)),
        twob("dc2", vs(RC2, RC3), base=vs()),
        twob("dc3", vs(RC3)),
        Proposal(RC1),
    ]


def canonical_state(rep: InnerReplay):
    return (
        rep.acceptor.value,
        rep.acceptor.base,
        rep.acceptor.promised,
        rep.acceptor.accepted,
        rep.learner.learned,
        frozenset((b, frozenset(m.items())) for b, m in rep.onebs.items()),
        tuple(sorted(rep.pending, key=VERDICTS.sort_key)),
        frozenset((d, m) for d, m in rep.emissions),
    )


def test_replaying_any_linearization_gives_identical_inner_state():
    for pool in honest_pools():
        struct = empty(ALG).extend(pool)
        lins = struct.linearizations(bound=6)
        assert lins, "pool should admit at least one order"
        states = {canonical_state(replay(list(lin), dc="dc3")) for lin in lins}
        assert len(states) == 1, "inner state depends on linearization: %r" % (pool,)


def test_insertion_order_does_not_change_the_learned_poset_or_replay():
    pool = [Proposal(RC1), Proposal(RC2), twob("dc2", vs(RC1)), Proposal(X1)]
    structs = {empty(ALG).extend(order) for order in itertools.permutations(pool)}
    # retraction/evidence ordering is remembered, so different arrival orders give
    # different trace classes -- but replay of EACH is deterministic
    for s in structs:
        a = canonical_state(replay_poset(s, dc="dc1", origin="dc1", inner_algebra=VERDICTS, n_dcs=3))
        b = canonical_state(replay_poset(s, dc="dc1", origin="dc1", inner_algebra=VERDICTS, n_dcs=3))
        assert a == b


# -- a three-data-center fast path on a desk ---------------------------------------


def test_three_dc_fast_path_reaches_every_learner_without_phase_one():
    dcs = ["dc1", "dc2", "dc3"]
    posets = {d: empty(ALG) for d in dcs}
    inboxes = {d: [Proposal(RC1), Proposal(RC2), Proposal(RC3)] for d in dcs}
    seen_phase_one = []

    for _ in range(6):  # fixpoint in a handful of exchanges
        for d in dcs:
            for m in inboxes[d]:
                posets[d] = posets[d].append(m)
            inboxes[d] = []
        for d in dcs:
            rep = replay_poset(posets[d], dc=d, origin="dc1", inner_algebra=VERDICTS, n_dcs=3)
            for dest, m in rep.emissions:
                if isinstance(m, (Phase1A, Phase1B)):
                    seen_phase_one.append(m)
                targets = dcs if dest == BROADCAST else [dest]
                for t in targets:
                    inboxes[t].append(m)

    assert seen_phase_one == []
    for d in dcs:
        rep = replay_poset(posets[d], dc=d, origin="dc1", inner_algebra=VERDICTS, n_dcs=3)
        assert rep.learner.learned == vs(RC1, RC2, RC3)


def test_replay_rejects_foreign_objects():
    with pytest.raises(TypeError):
        replay(["not a message"])
