"""Drive a scenario config through the simulator and grade the outcome.

The report is deterministic text: same config, same seed, same bytes.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field

from ..cluster import Topology, TxPlan, add_client, build_cluster, dc_digest
from ..commit import ABSENT
from ..simnet import DropRule, FaultPlan, Sim
from .config import ScenarioConfig
from .history import check_strict_serializability


def generate_workload(cfg: ScenarioConfig) -> list:
    """[(dc, [TxPlan, ...]), ...] — one entry per client.

    Deterministic in the scenario seed.  With contention 0 every transaction
    draws keys from its own block, so nothing ever waits on a lock; the
    contention knob steers ops into a small hot set shared by everyone.
    """
    if cfg.explicit:
        by_dc: dict = {}
        for d, plan in cfg.explicit:
            by_dc.setdefault(d, []).append(plan)
        return sorted(by_dc.items())

    wl = cfg.workload
    rng = random.Random(cfg.seed * 2654435761 % (2 ** 31))
    plans: dict = {}
    for i in range(wl.txs):
        d = wl.client_dcs[i % len(wl.client_dcs)]
        ops = []
        wrote = []
        for j in range(wl.ops):
            if wl.contention > 0 and rng.random() < wl.contention:
                key = "h%d" % rng.randrange(wl.hot_keys)
            elif wl.contention > 0:
                key = "k%d" % rng.randrange(wl.keys)
            else:
                key = "k%d" % (i * wl.ops + j)  # private block: conflict-free
            if rng.random() < wl.reads:
                ops.append(("r", key, ""))
            else:
                ops.append(("w", key, "v%d.%d" % (i, j)))
                wrote.append(key)
        if not wrote:
            # pure reads never create an instance worth measuring; anchor one write
            k = ops[0][1]
            ops[-1] = ("w", k, "v%d.w" % i)
        plans.setdefault(d, []).append(
            TxPlan(ops=tuple(ops), at=wl.start + i * wl.spacing, pace=wl.pace))
    return sorted(plans.items())


@dataclass
class Report:
    name: str
    seed: int
    ticks: int
    history: list
    hops: dict                      # tx -> WAN hops of the critical path
    msg_counts: dict
    durable_counts: dict
    digests: dict                   # dc name -> hex digest
    checks: dict                    # check name -> True/False
    witness: dict = field(default_factory=dict)
    trace: str = ""

    @property
    def ok(self) -> bool:
        return all(self.checks.values())

    @property
    def exit_code(self) -> int:
        return 0 if self.ok else 1

    def committed(self) -> list:
        return [r for r in self.history if r["outcome"] == "commit"]

    def render(self) -> str:
        out = ["[meta]"]
        out.append("name = %s" % self.name)
        out.append("seed = %d" % self.seed)
        out.append("ticks = %d" % self.ticks)
        n = len(self.history)
        committed = len(self.committed())
        out.append("txs = %d" % n)
        out.append("committed = %d" % committed)
        out.append("aborted = %d" % sum(1 for r in self.history if r["outcome"] == "abort"))
        out.append("")
        out.append("[outcomes]")
        for r in sorted(self.history, key=lambda r: (r["begin"], r["tx"])):
            line = "%s begin=%d end=%d outcome=%s" % (r["tx"], r["begin"], r["end"], r["outcome"])
            if r["tx"] in self.hops:
                line += " hops=%d" % self.hops[r["tx"]]
            out.append(line)
        out.append("")
        out.append("[counts]")
        for kind in sorted(self.msg_counts):
            out.append("msg %s = %d" % (kind, self.msg_counts[kind]))
        for kind in sorted(self.durable_counts):
            out.append("durable %s = %d" % (kind, self.durable_counts[kind]))
        out.append("")
        out.append("[digests]")
        for d in sorted(self.digests):
            out.append("%s = %s" % (d, self.digests[d]))
        out.append("")
        out.append("[checks]")
        for name in sorted(self.checks):
            out.append("%s = %s" % (name, "pass" if self.checks[name] else "FAIL"))
        if self.witness:
            out.append("")
            out.append("[witness]")
            for key in sorted(self.witness):
                out.append("%s = %s" % (key, self.witness[key]))
        return "\n".join(out) + "\n"


def _fault_plan(cfg: ScenarioConfig) -> FaultPlan:
    drops = [
        DropRule(
            src=None if src == "*" else src,
            dst=None if dst == "*" else dst,
            kind=None if kind == "*" else kind,
            times=times,
            after=after,
        )
        for kind, src, dst, times, after in cfg.faults.drops
    ]
    return FaultPlan(drops=drops)


def critical_paths(trace_rows) -> dict:
    """tx -> WAN hops until the slowest data center first decided.

    Within one data center the decision exists once any server holds it, so
    per DC we take the cheapest deciding path, then take the worst DC.
    """
    per_dc: dict = {}
    for t, node, kind, payload in trace_rows:
        if kind != "decision":
            continue
        tx = payload.split()[0]
        dc = node.split("s")[0]
        hops = int(payload.rsplit("=", 1)[1])
        key = (tx, dc)
        best = per_dc.get(key)
        if best is None or (t, hops) < best:
            per_dc[key] = (t, hops)
    out: dict = {}
    for (tx, _dc), (_t, hops) in per_dc.items():
        out[tx] = max(out.get(tx, 0), hops)
    return out


def run_scenario(cfg: ScenarioConfig, with_trace: bool = True) -> Report:
    sim = Sim(seed=cfg.seed, wan=cfg.wan, lan=cfg.lan,
              faults=_fault_plan(cfg), wan_table=dict(cfg.wan_table))
    servers = build_cluster(sim, cfg.topo, cfg.knobs)
    clients = []
    for uid, (d, plans) in enumerate(generate_workload(cfg)):
        clients.append(add_client(sim, cfg.topo, d, uid, plans))
    for t, node in cfg.faults.crashes:
        sim.schedule_fault(t, "crash", node)
    for t, node in cfg.faults.recovers:
        sim.schedule_fault(t, "recover", node)
    sim.run(limit=cfg.limit)

    history = sorted(
        (row for c in clients for row in c.history),
        key=lambda r: (r["begin"], r["tx"]),
    )
    submitted = sum(len(c.history) + len(c.active) for c in clients)
    hops = critical_paths(sim.trace_rows)
    hops = {tx: h for tx, h in hops.items()
            if any(r["tx"] == tx and r["outcome"] == "commit" for r in history)}

    digests = {
        "dc%d" % d: dc_digest(servers, cfg.topo, d)
        for d in range(1, cfg.topo.n_dcs + 1)
    }

    checks: dict = {}
    witness: dict = {}
    checks["all_decided"] = all(not c.active for c in clients) and submitted == len(history)
    if not checks["all_decided"]:
        stuck = sorted(str(tx) for c in clients for tx in c.active)
        witness["undecided"] = " ".join(stuck)

    agreement, disagreements = _check_agreement(sim.trace_rows)
    checks["agreement"] = agreement
    if disagreements:
        witness["disagreement"] = " ".join(sorted(disagreements))

    checks["digests_equal"] = len(set(digests.values())) == 1

    ok, wit = check_strict_serializability(history)
    checks["serializable"] = ok
    if not ok:
        witness["serializability"] = wit["reason"]
        witness["core"] = " ".join(wit["core"])

    return Report(
        name=cfg.name,
        seed=cfg.seed,
        ticks=sim.now,
        history=history,
        hops=hops,
        msg_counts=dict(sim.msg_counts),
        durable_counts=dict(sim.durable_counts),
        digests=digests,
        checks=checks,
        witness=witness,
        trace="\n".join("%d|%s|%s|%s" % row for row in sim.trace_rows) + "\n"
        if with_trace else "",
    )


def _check_agreement(trace_rows):
    """No two data centers may decide the same transaction differently."""
    outcomes: dict = {}
    bad = set()
    for _t, node, kind, payload in trace_rows:
        if kind != "decision":
            continue
        tx, outcome = payload.split()[0], payload.split()[1]
        if outcomes.setdefault(tx, outcome) != outcome:
            bad.add(tx)
    return not bad, bad
