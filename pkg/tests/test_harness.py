"""Scenario configs, the serializability checker, baseline, fuzz, rebalance."""

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from consus_sim.commit import ABSENT
from consus_sim.harness.baseline import compare, run_baseline
from consus_sim.harness.config import (
    ConfigError,
    bundled_scenarios,
    load_bundled,
    parse_config,
    render_config,
)
from consus_sim.harness.fuzz import DROPPABLE, derive, run_fuzz, shrink
from consus_sim.harness.history import (
    check_strict_serializability,
    components,
    history_from_trace,
    split_windows,
)
from consus_sim.harness.rebalance import parse_mapfile, plan
from consus_sim.harness.runner import critical_paths, generate_workload, run_scenario

MINIMAL = """
[meta]
name = t
seed = 1

[topology]
dcs = 3
servers_per_dc = 3
partitions = 9
"""


def cfg_text(extra=""):
    return MINIMAL + extra


# -- config parsing ------------------------------------------------------------------


def test_defaults_fill_unspecified_sections():
    cfg = parse_config(MINIMAL)
    assert cfg.name == "t"
    assert cfg.seed == 1
    assert cfg.wan == 1 and cfg.lan == 0
    assert cfg.limit == 400
    assert cfg.workload.client_dcs == (1, 2, 3)


def test_comments_and_blank_lines_are_ignored():
    cfg = parse_config("# leading\n" + MINIMAL + "\n# trailing\n\n")
    assert cfg.name == "t"


def test_explicit_tx_lines_parse():
    cfg = parse_config(cfg_text("\n[txs]\ndc=2 at=5 pace=3 : w a 1, r b, w c 2\n"))
    assert len(cfg.explicit) == 1
    d, p = cfg.explicit[0]
    assert d == 2 and p.at == 5 and p.pace == 3
    assert p.ops == (("w", "a", "1"), ("r", "b", ""), ("w", "c", "2"))


def test_fault_lines_parse():
    cfg = parse_config(cfg_text(
        "\n[faults]\ncrash 5 dc1s0\nrecover 30 dc1s0\ndrop LogOp * dc2s1 2 1\n"))
    assert cfg.faults.crashes == ((5, "dc1s0"),)
    assert cfg.faults.recovers == ((30, "dc1s0"),)
    assert cfg.faults.drops == (("LogOp", "*", "dc2s1", 2, 1),)


@pytest.mark.parametrize("bad, needle", [
    ("[nope]\nx = 1\n", "unknown section"),
    ("x = 1\n" + MINIMAL, "before any section"),
    (cfg_text("\n[meta]\ncolor = red\n"), "unknown key"),
    (cfg_text("\n[meta]\nseed = abc\n"), "bad value"),
    (cfg_text("\n[txs]\ndc=1 w a 1\n"), "needs ':'"),
    (cfg_text("\n[txs]\nat=0 : w a 1\n"), "needs dc="),
    (cfg_text("\n[txs]\ndc=1 : w a\n"), "bad op"),
    (cfg_text("\n[txs]\ndc=1 :\n"), "no operations"),
    (cfg_text("\n[faults]\nexplode 3 dc1s0\n"), "bad fault"),
    (cfg_text("\n[faults]\ncrash 3 dc9s9\n"), "not a server"),
    (cfg_text("\n[faults]\ndrop LogOp * dc1s0 0 0\n"), "times"),
])
def test_malformed_configs_are_rejected(bad, needle):
    with pytest.raises(ConfigError) as err:
        parse_config(bad)
    assert needle in str(err.value)


@pytest.mark.parametrize("section, line", [
    ("[topology]", "dcs = 4"),            # even ensembles unsupported
    ("[topology]", "dcs = 1"),
    ("[topology]", "group_size = 9"),
    ("[topology]", "partitions = 2"),     # fewer partitions than servers
    ("[topology]", "replication = 5"),
    ("[network]", "wan = 0"),             # stamps need a real handoff delay
    ("[network]", "lan = -1"),
    ("[limits]", "ticks = 0"),
    ("[workload]", "reads = 1.5"),
    ("[workload]", "contention = -0.1"),
    ("[workload]", "dcs = 7"),
])
def test_validation_rejects_unusable_shapes(section, line):
    with pytest.raises(ConfigError):
        parse_config(cfg_text("\n%s\n%s\n" % (section, line)))


def test_tx_dc_out_of_range_rejected():
    with pytest.raises(ConfigError):
        parse_config(cfg_text("\n[txs]\ndc=7 : w a 1\n"))


def test_render_round_trips_every_bundled_scenario():
    for name in bundled_scenarios():
        cfg = load_bundled(name)
        assert parse_config(render_config(cfg)) == cfg


def test_render_round_trips_explicit_and_faults():
    cfg = parse_config(cfg_text(
        "\n[txs]\ndc=1 at=0 : w a 1\ndc=2 at=3 pace=2 : r a, w b 2\n"
        "\n[faults]\ncrash 5 dc1s0\nrecover 20 dc1s0\ndrop SyncRows dc1s1 * 1 2\n"))
    assert parse_config(render_config(cfg)) == cfg


# -- workload generation -------------------------------------------------------------


def test_generated_workload_is_deterministic():
    cfg = parse_config(cfg_text("\n[workload]\ntxs = 12\nreads = 0.3\ncontention = 0.5\n"))
    assert generate_workload(cfg) == generate_workload(cfg)


def test_zero_contention_keys_are_disjoint():
    cfg = parse_config(cfg_text("\n[workload]\ntxs = 10\nops = 3\n"))
    seen = set()
    for _d, plans in generate_workload(cfg):
        for p in plans:
            keys = {op[1] for op in p.ops}
            assert not keys & seen
            seen |= keys


def test_every_generated_transaction_writes():
    cfg = parse_config(cfg_text("\n[workload]\ntxs = 30\nops = 2\nreads = 1.0\n"))
    for _d, plans in generate_workload(cfg):
        for p in plans:
            assert any(op[0] == "w" for op in p.ops)


def test_explicit_workload_passes_through_grouped_by_dc():
    cfg = parse_config(cfg_text(
        "\n[txs]\ndc=2 at=0 : w a 1\ndc=1 at=2 : w b 2\ndc=2 at=4 : w c 3\n"))
    wl = dict(generate_workload(cfg))
    assert set(wl) == {1, 2}
    assert len(wl[2]) == 2


# -- serializability checker ---------------------------------------------------------


def row(tx, begin, end, ops, outcome="commit"):
    return {"tx": tx, "begin": begin, "end": end, "outcome": outcome, "ops": ops}


def test_empty_history_is_serializable():
    ok, order = check_strict_serializability([])
    assert ok and order == []


def test_sequential_read_chain_passes():
    h = [
        row("t1", 0, 1, [("w", "k", "a")]),
        row("t2", 2, 3, [("r", "k", "a"), ("w", "k", "b")]),
        row("t3", 4, 5, [("r", "k", "b")]),
    ]
    ok, order = check_strict_serializability(h)
    assert ok and order == ["t1", "t2", "t3"]


def test_unexplainable_read_fails_with_core():
    h = [
        row("t1", 0, 1, [("w", "k", "a")]),
        row("t2", 2, 3, [("r", "k", "ghost")]),
    ]
    ok, wit = check_strict_serializability(h)
    assert not ok
    assert "t2" in wit["core"]


def test_real_time_order_is_enforced():
    # t2 could only read ABSENT before t1's write, but it began after t1 ended
    h = [
        row("t1", 0, 10, [("w", "k", "1")]),
        row("t2", 20, 30, [("r", "k", ABSENT)]),
    ]
    ok, _ = check_strict_serializability(h)
    assert not ok
    # the same pair concurrent is fine: reader first
    h2 = [
        row("t1", 0, 10, [("w", "k", "1")]),
        row("t2", 0, 10, [("r", "k", ABSENT)]),
    ]
    ok2, order = check_strict_serializability(h2)
    assert ok2 and order == ["t2", "t1"]


def test_read_your_own_write_within_transaction():
    h = [
        row("t1", 0, 1, [("w", "k", "mine"), ("r", "k", "mine")]),
    ]
    ok, _ = check_strict_serializability(h)
    assert ok


def test_own_write_shadows_the_store_not_vice_versa():
    h = [
        row("t1", 0, 1, [("w", "k", "a")]),
        row("t2", 2, 3, [("w", "k", "b"), ("r", "k", "a")]),
    ]
    ok, _ = check_strict_serializability(h)
    assert not ok


def test_aborted_transactions_are_not_ordered():
    h = [
        row("t1", 0, 1, [("w", "k", "a")]),
        row("t2", 2, 3, [("r", "k", "impossible")], outcome="abort"),
        row("t3", 4, 5, [("r", "k", "a")]),
    ]
    ok, order = check_strict_serializability(h)
    assert ok and order == ["t1", "t3"]


def test_write_skew_is_caught():
    # each tx reads the other's key before either write could be visible,
    # yet both commit — no serial order explains both ABSENT reads after
    # the writes land
    h = [
        row("t1", 0, 10, [("r", "a", ABSENT), ("w", "b", "1")]),
        row("t2", 0, 10, [("r", "b", "1"), ("w", "a", "2")]),
        row("t3", 20, 30, [("r", "a", ABSENT), ("r", "b", "1")]),
    ]
    ok, _ = check_strict_serializability(h)
    assert not ok


def test_window_split_at_real_time_gaps():
    rows = [
        row("t1", 0, 5, []), row("t2", 3, 8, []),   # overlap
        row("t3", 9, 12, []),                        # gap after 8
    ]
    ws = split_windows(rows)
    assert [len(w) for w in ws] == [2, 1]


def test_components_split_by_key_connectivity():
    w = [
        row("t1", 0, 9, [("w", "a", "1")]),
        row("t2", 0, 9, [("r", "a", ABSENT), ("w", "b", "2")]),
        row("t3", 0, 9, [("w", "z", "3")]),
    ]
    comps = sorted(components(w), key=len)
    assert [len(c) for c in comps] == [1, 2]


def test_component_bound_reports_instead_of_searching():
    h = [row("t%d" % i, 0, 100, [("w", "k", str(i))]) for i in range(12)]
    ok, wit = check_strict_serializability(h, bound=10)
    assert not ok
    assert "bound" in wit["reason"]
    assert len(wit["core"]) == 12


def test_core_minimization_drops_innocent_rows():
    h = [
        row("t1", 0, 10, [("w", "k", "a")]),
        row("t2", 0, 10, [("r", "k", "ghost")]),
        row("t3", 0, 10, [("w", "k", "c"), ("w", "j", "x")]),
        row("t4", 0, 10, [("w", "other", "1")]),
    ]
    ok, wit = check_strict_serializability(h)
    assert not ok
    assert "t2" in wit["core"]
    assert "t4" not in wit["core"]  # disjoint keys: not even in the component
    assert len(wit["core"]) <= 2


def test_cross_window_state_threads_through():
    # the second window's read only replays against the first window's final store
    h = [
        row("t1", 0, 1, [("w", "k", "a")]),
        row("t2", 0, 1, [("w", "k", "b")]),
        row("t3", 5, 6, [("r", "k", "a")]),
    ]
    ok, order = check_strict_serializability(h)
    assert ok
    assert order.index("t2") < order.index("t1") < order.index("t3")


@settings(max_examples=150, deadline=None)
@given(st.data())
def test_sequential_executions_always_pass(data):
    keys = ["a", "b", "c"]
    n = data.draw(st.integers(1, 6))
    store, h = {}, []
    for i in range(n):
        ops = []
        for _ in range(data.draw(st.integers(1, 3))):
            k = data.draw(st.sampled_from(keys))
            if data.draw(st.booleans()):
                v = "v%d" % data.draw(st.integers(0, 9))
                store[k] = v
                ops.append(("w", k, v))
            else:
                ops.append(("r", k, store.get(k, ABSENT)))
        h.append(row("t%d" % i, 2 * i, 2 * i + 1, ops))
    ok, order = check_strict_serializability(h)
    assert ok
    assert order == ["t%d" % i for i in range(n)]  # real time pins the order


@settings(max_examples=100, deadline=None)
@given(st.data())
def test_concurrent_executions_of_a_serial_run_always_pass(data):
    # same generator, but every interval overlaps: the checker must recover
    # *some* order even though real time no longer pins one
    keys = ["a", "b"]
    n = data.draw(st.integers(1, 5))
    store, h = {}, []
    for i in range(n):
        ops = []
        for _ in range(data.draw(st.integers(1, 2))):
            k = data.draw(st.sampled_from(keys))
            if data.draw(st.booleans()):
                v = "v%d.%d" % (i, len(ops))
                store[k] = v
                ops.append(("w", k, v))
            else:
                ops.append(("r", k, store.get(k, ABSENT)))
        h.append(row("t%d" % i, 0, 100, ops))
    ok, _ = check_strict_serializability(h)
    assert ok


def test_history_recovered_from_trace_text():
    rep = run_scenario(load_bundled("recovery_sync"))
    assert history_from_trace(rep.trace) == rep.history


# -- runner report -------------------------------------------------------------------


def test_same_config_same_report_bytes():
    a = run_scenario(load_bundled("recovery_sync"))
    b = run_scenario(load_bundled("recovery_sync"))
    assert a.render() == b.render()
    assert a.trace == b.trace


def test_report_renders_all_sections():
    rep = run_scenario(load_bundled("recovery_sync"))
    text = rep.render()
    for section in ("[meta]", "[outcomes]", "[counts]", "[digests]", "[checks]"):
        assert section in text
    assert rep.ok and rep.exit_code == 0


def test_failed_checks_flip_exit_code():
    cfg = load_bundled("recovery_sync")
    rep = run_scenario(cfg)
    rep.checks["digests_equal"] = False
    assert rep.exit_code == 1
    assert "digests_equal = FAIL" in rep.render()


def test_critical_path_is_worst_dc_cheapest_server():
    rows = [
        (5, "dc1s0", "decision", "t1 commit hops=2"),
        (5, "dc1s1", "decision", "t1 commit hops=0"),   # cheaper path, same DC
        (7, "dc2s0", "decision", "t1 commit hops=3"),
        (9, "dc2s1", "decision", "t1 commit hops=9"),   # later: not the DC's first
        (6, "dc3s0", "decision", "t1 commit hops=3"),
        (3, "dc1s0", "decision", "t2 abort hops=1"),
    ]
    assert critical_paths(rows) == {"t1": 3, "t2": 1}


def test_undecided_transactions_fail_the_run_with_witness():
    # crash the whole origin DC and never recover it: its transaction stalls
    cfg = parse_config(cfg_text(
        "\n[limits]\nticks = 60\n"
        "\n[txs]\ndc=1 at=5 : w a 1\n"
        "\n[faults]\ncrash 0 dc1s0\ncrash 0 dc1s1\ncrash 0 dc1s2\n"))
    rep = run_scenario(cfg, with_trace=False)
    assert not rep.checks["all_decided"]
    assert rep.exit_code == 1
    assert "undecided" in rep.witness


# -- baseline ------------------------------------------------------------------------


BASE = cfg_text(
    "\n[limits]\nticks = 160\n"
    "\n[workload]\ntxs = 6\ndcs = 1 2 3\nspacing = 4\n")


def test_baseline_noncoordinators_learn_at_four_hops():
    rep = run_baseline(parse_config(BASE), coordinator=1)
    assert len(rep.pairs) == 6
    for p in rep.pairs:
        assert p.release_hops == 3
        assert p.learn_hops[1] == 3
        assert p.learn_hops[2] == 4 and p.learn_hops[3] == 4
        assert p.last_learn == 4


def test_baseline_hop_counts_survive_slower_wan():
    cfg = parse_config(BASE + "\n[network]\nwan = 3\n")
    rep = run_baseline(cfg, coordinator=2)
    for p in rep.pairs:
        assert p.release_hops == 3 and p.last_learn == 4


def test_consus_beats_baseline_per_transaction():
    consus, base, cmp = compare(parse_config(BASE))
    assert cmp["consus_beats_baseline"]
    assert cmp["noncoordinator_learn_ge_4"]
    assert cmp["rows"]
    for r in cmp["rows"]:
        assert r["consus_hops"] == 3 and r["baseline_hops"] == 4
    assert "last_learn=4" in base.render()


# -- fuzz ----------------------------------------------------------------------------


def test_derive_is_deterministic():
    base = load_bundled("fuzz_base")
    assert render_config(derive(base, 17)) == render_config(derive(base, 17))
    assert render_config(derive(base, 17)) != render_config(derive(base, 18))


def test_derive_respects_fault_budget():
    base = load_bundled("fuzz_base")
    for seed in range(60):
        cfg = derive(base, seed)
        assert 6 <= len(cfg.explicit) <= 10
        assert len(cfg.faults.crashes) == len(cfg.faults.recovers)
        by_dc = {}
        for t, node in cfg.faults.crashes:
            by_dc.setdefault(node.split("s")[0], []).append((t, "c", node))
        for t, node in cfg.faults.recovers:
            by_dc.setdefault(node.split("s")[0], []).append((t, "r", node))
        for events in by_dc.values():
            events.sort()
            # alternate crash/recover of the same server: the DC's ensemble
            # never has two members down at once
            assert [k for _, k, _ in events] == ["c", "r"] * (len(events) // 2)
            for (_, k, n1), (_, _, n2) in zip(events[::2], events[1::2]):
                assert k == "c" and n1 == n2
        for kind, _src, _dst, times, after in cfg.faults.drops:
            assert kind in DROPPABLE
            assert times >= 1 and after >= 0


def test_shrink_keeps_only_what_failure_needs():
    cfg = derive(load_bundled("fuzz_base"), 3)
    assert len(cfg.explicit) > 1
    marker = cfg.explicit[-1][1].ops[0][1]  # key of the last transaction's first op

    def failed(c):
        return any(p.ops[0][1] == marker for _d, p in c.explicit)

    small = shrink(cfg, failed=failed)
    assert len(small.explicit) == 1
    assert small.explicit[0][1].ops[0][1] == marker
    assert not small.faults.crashes and not small.faults.drops


def test_fuzz_batch_passes_and_renders():
    rep = run_fuzz(load_bundled("fuzz_base"), range(4))
    assert rep.ok
    text = rep.render()
    assert "total = 4" in text and "result = pass" in text


# -- rebalance -----------------------------------------------------------------------


MAPFILE = """
[partitions]
count = 16

[assignment]
s1 = 0 3
s2 = 3 6
s3 = 6 9
s4 = 9 12
s5 = 12 16

[members]
s1 s2 s3 s4 s5 s6 s7
"""


def test_mapfile_parses():
    old, members = parse_mapfile(MAPFILE)
    assert old.p == 16
    assert old.assignment["s5"] == (12, 16)
    assert members == ["s1", "s2", "s3", "s4", "s5", "s6", "s7"]


@pytest.mark.parametrize("mutate, needle", [
    (lambda t: t.replace("[partitions]\ncount = 16\n", ""), "count"),
    (lambda t: t.replace("[members]\ns1 s2 s3 s4 s5 s6 s7", "[members]\ns1 s1"), "duplicate"),
    (lambda t: t.replace("count = 16", "count = 3"), "below member count"),
    (lambda t: t.replace("s1 = 0 3", "s1 = 0"), "lo hi"),
])
def test_bad_mapfiles_are_rejected(mutate, needle):
    with pytest.raises(ConfigError) as err:
        parse_mapfile(mutate(MAPFILE))
    assert needle in str(err.value)


def test_plan_lists_moves_and_adoption_walks():
    text = plan(MAPFILE)
    assert "[matching]" in text and "[migration]" in text
    assert "partitions_moved = 4" in text
    assert "s6 = 8:8 -> 8:9 -> 8:10" in text  # newcomer grows from empty


def test_ideal_assignment_plans_nothing():
    text = plan("""
[partitions]
count = 16

[assignment]
s1 = 0 4
s2 = 4 7
s3 = 7 10
s4 = 10 13
s5 = 13 16

[members]
s1 s2 s3 s4 s5
""")
    assert "partitions_moved = 0" in text
    assert "plan = empty" in text
