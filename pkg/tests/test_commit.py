"""Tally rules: hand cases, then exhaustive linearization independence."""

import itertools

from consus_sim.commit import (
    OutcomeTally,
    UNDECIDED,
    release_order,
    should_release,
    tally,
    tally_walk,
)
from consus_sim.cstruct import ABORT, COMMIT, CStruct, Result, Retraction, VERDICTS

RC1, RC2, RC3 = (Result(d, COMMIT) for d in (1, 2, 3))
RA1, RA2, RA3 = (Result(d, ABORT) for d in (1, 2, 3))
X1, X2, X3 = (Retraction(d) for d in (1, 2, 3))


def s(*cmds):
    return CStruct(VERDICTS, cmds)


def test_plain_commit_quorum():
    t = tally(s(RC1, RC2), 3)
    assert t == OutcomeTally(2, 0, frozenset(), COMMIT)


def test_retraction_after_quorum_is_ignored():
    t = tally(s(RC1, RC2, X1), 3)
    assert t.decision == COMMIT and t.commits == 2 and not t.retracted


def test_retraction_flips_single_commit():
    t = tally(s(RC1, X1, RA2), 3)
    assert t.commits == 0 and t.aborts == 2
    assert t.decision == ABORT and t.retracted == {1}


def test_retraction_pins_unseen_dc():
    t = tally(s(X1, RC1), 3)
    assert t.commits == 0 and t.aborts == 1 and t.retracted == {1}
    assert t.decision == UNDECIDED
    # the pinned DC cannot stop the others from committing
    assert tally(s(X1, RC2, RC3), 3).decision == COMMIT
    # retracting a standing abort changes nothing
    t = tally(s(RA1, X1), 3)
    assert t.aborts == 1 and t.commits == 0 and not t.retracted


def test_undecided_until_threshold():
    assert tally(s(RC1), 3).decision == UNDECIDED
    assert tally(s(RA1), 3).decision == UNDECIDED
    assert tally(s(RA1, RA2), 3).decision == ABORT
    assert tally(s(), 3).decision == UNDECIDED


def test_release_rule_spec_cases():
    assert not should_release([RC1, RC2], [X1], 3)  # ignore rule keeps quorum
    assert should_release([RC1], [X1], 3)
    assert should_release([], [X1], 3)
    assert not should_release([RC1], [], 3)
    assert release_order([X2, X1]) == [X1, X2]


def test_release_rule_with_mixed_results():
    assert should_release([RC1, RA2], [X1], 3)
    assert not should_release([RC1, RC2, RC3], [X1], 3)
    # the quorum stands before either retraction is walked, so both are moot
    assert not should_release([RC1, RC2], [X1, X2], 3)
    # below the quorum the first pending retraction flips, the second pins
    assert should_release([RC1], [X1, X2], 3)


def every_command_set():
    """All per-DC slot combinations over 3 DCs: result choice x retraction."""
    per_dc = []
    for d in (1, 2, 3):
        per_dc.append(
            [
                (res, ret)
                for res in (None, Result(d, COMMIT), Result(d, ABORT))
                for ret in (None, Retraction(d))
            ]
        )
    for combo in itertools.product(*per_dc):
        cmds = [c for pair in combo for c in pair if c is not None]
        yield cmds


def test_tally_is_linearization_independent_exhaustively():
    # every structure of up to 6 commands over 3 DCs (one result slot and one
    # retraction slot each); all orders, all linearizations
    structs = {}
    for cmds in every_command_set():
        for perm in itertools.permutations(cmds):
            st = CStruct(VERDICTS, perm)
            structs.setdefault(st, st)
    assert len(structs) > 2_000
    for st in structs:
        lins = st.linearizations(bound=6)
        outcomes = {tally_walk(lin, 3) for lin in lins}
        assert len(outcomes) == 1, st
        assert tally(st, 3) == outcomes.pop()
        # bookkeeping sanity on the full walk
        t = tally(st, 3)
        assert t.commits + t.aborts <= 3
        assert not (t.decision == COMMIT and t.aborts > 1)
        # decisions are final: along any growth path, once decided the
        # decision never changes
        for lin in lins:
            seen = UNDECIDED
            for k in range(1, len(lin) + 1):
                d = tally_walk(lin[:k], 3).decision
                if seen != UNDECIDED:
                    assert d == seen, (lin, k)
                seen = d


# -- re-execution matching ----------------------------------------------------

from consus_sim.commit import (  # noqa: E402
    ABSENT,
    TransactionRecord,
    decision_rows,
    reexecution_verdict,
)
from consus_sim.kvstore import ABSENT_VERSION
from consus_sim.txmgr import TxId


def record(reads=(), writes=(), version=(5, "dc1", 0)):
    return TransactionRecord(
        tx=TxId(0, "dc1", 0), origin=1, version=version, reads=tuple(reads), writes=tuple(writes)
    )


def test_matching_values_commit():
    rec = record(reads=[("a", "1", (1, "dc2", 0))])
    verdict, implicit = reexecution_verdict(rec, {"a": ("1", (2, "dc3", 0))})
    assert verdict == COMMIT
    assert implicit == ()


def test_value_mismatch_aborts():
    rec = record(reads=[("a", "1", (1, "dc2", 0))])
    verdict, _ = reexecution_verdict(rec, {"a": ("2", (1, "dc2", 0))})
    assert verdict == ABORT


def test_missing_row_heals_with_original_version():
    rec = record(reads=[("a", "1", (1, "dc2", 0))])
    verdict, implicit = reexecution_verdict(rec, {})
    assert verdict == COMMIT
    assert implicit == (("a", "1", (1, "dc2", 0)),)


def test_absent_observation_matches_absent():
    rec = record(reads=[("a", ABSENT, ABSENT_VERSION)])
    assert reexecution_verdict(rec, {}) == (COMMIT, ())


def test_absent_observation_against_present_row_aborts():
    rec = record(reads=[("a", ABSENT, ABSENT_VERSION)])
    verdict, _ = reexecution_verdict(rec, {"a": ("1", (1, "dc2", 0))})
    assert verdict == ABORT


def test_decision_rows_stamp_writes_with_record_version():
    rec = record(reads=[("a", "1", (1, "dc2", 0))], writes=[("b", "2")])
    rows = decision_rows(rec, implicit_writes=(("a", "1", (1, "dc2", 0)),))
    assert rows == (("a", "1", (1, "dc2", 0)), ("b", "2", (5, "dc1", 0)))
    # the record version outranks anything the transaction observed
    assert all(rec.version > v for _, _, v in rows[:1])
