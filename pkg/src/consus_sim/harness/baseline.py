"""Coordinator-commit baseline: the latency model Consus is measured against.

One distinguished data center coordinates every transaction:

  hop 1  the origin disseminates the transaction to all DCs
  hop 2  every DC votes; votes arrive at the coordinator, fixing the decision
  hop 3  the decision is durably replicated to a quorum of DCs; the
         coordinator may release once that wave lands
  hop 4  the released status disseminates to the remaining DCs — a
         non-coordinator DC only *learns* (can act on) the decision here

So a non-coordinator data center learns after 4 WAN hops, the coordinator
releases after 3, and the per-transaction critical path is 4 hops — against
Consus's 3.  The model is driven through the simulator with real messages
and durable writes so the hop counts come out of the trace, not arithmetic.
"""

from __future__ import annotations

from dataclasses import dataclass

from ..simnet import Node, Sim
from .config import ScenarioConfig
from .runner import Report, generate_workload, run_scenario


@dataclass(frozen=True)
class TxAnnounce:
    tx: str


@dataclass(frozen=True)
class Vote:
    tx: str
    dc: int


@dataclass(frozen=True)
class DecisionLog:
    tx: str
    outcome: str


@dataclass(frozen=True)
class Confirm:
    tx: str


class BaselineDC(Node):
    """One node stands in for a whole data center; hops are what matter."""

    def __init__(self, node_id: str, d: int, n_dcs: int, coordinator: int,
                 announcements=()):
        super().__init__(node_id, d)
        self.n = n_dcs
        self.coordinator = coordinator
        self.announcements = tuple(announcements)  # (tick, tx name)
        self.peers = ["b%d" % k for k in range(1, n_dcs + 1) if k != d]

    def volatile_init(self) -> None:
        self.votes = {}
        self.learned = set()
        for tick, tx in self.announcements:
            self.after(tick, "announce", tx)

    def on_timer(self, name: str, payload) -> None:
        self._announce(payload)

    def _announce(self, tx: str) -> None:
        self.sim.trace(self.node_id, "announce", tx)
        for p in self.peers:
            self.send(p, TxAnnounce(tx), hops=0)
        self.handle(self.node_id, TxAnnounce(tx), 0)

    def handle(self, src: str, msg, hops: int) -> None:
        if isinstance(msg, TxAnnounce):
            coord = "b%d" % self.coordinator
            if coord == self.node_id:
                self._vote(msg.tx, self.dc)
            else:
                self.send(coord, Vote(msg.tx, self.dc))
        elif isinstance(msg, Vote):
            self._vote(msg.tx, msg.dc)
        elif isinstance(msg, DecisionLog):
            self.durable_write("baseline-decision")
            self.sim.trace(self.node_id, "durable", msg.tx)
            for p in self.peers:
                if p != "b%d" % self.coordinator:
                    self.send(p, Confirm(msg.tx))
        elif isinstance(msg, Confirm):
            if msg.tx not in self.learned:
                self.learned.add(msg.tx)
                self.sim.trace(
                    self.node_id, "learn", "%s hops=%d" % (msg.tx, self.sim.ctx_hops))

    def _vote(self, tx: str, d: int) -> None:
        got = self.votes.setdefault(tx, set())
        got.add(d)
        if len(got) == self.n:
            # all votes in: decide, log locally, replicate to the others
            self.durable_write("baseline-decision")
            self.sim.trace(self.node_id, "decide", tx)
            self.sim.trace(self.node_id, "durable", tx)
            for p in self.peers:
                self.send(p, DecisionLog(tx, "commit"))


@dataclass
class BaselinePair:
    tx_index: int
    origin: int
    release_hops: int       # coordinator may externalize here
    learn_hops: dict        # dc -> hops at which the decision is actionable

    @property
    def last_learn(self) -> int:
        return max(self.learn_hops.values())


@dataclass
class BaselineReport:
    name: str
    seed: int
    coordinator: int
    pairs: list

    def render(self) -> str:
        out = ["[baseline]"]
        out.append("name = %s" % self.name)
        out.append("seed = %d" % self.seed)
        out.append("coordinator = dc%d" % self.coordinator)
        out.append("model = disseminate(1) vote(2) quorum-durable+release(3) learn(4)")
        out.append("")
        out.append("[hops]")
        for p in self.pairs:
            learns = " ".join(
                "dc%d=%d" % (d, h) for d, h in sorted(p.learn_hops.items()))
            out.append("tx%d origin=dc%d release=%d last_learn=%d %s"
                       % (p.tx_index, p.origin, p.release_hops, p.last_learn, learns))
        return "\n".join(out) + "\n"


def run_baseline(cfg: ScenarioConfig, coordinator: int = 1) -> BaselineReport:
    schedule = []
    tick = 0
    for d, plans in generate_workload(cfg):
        for plan in plans:
            tick = plan.at if plan.at is not None else tick + 1
            schedule.append((tick, d))
    schedule.sort()

    sim = Sim(seed=cfg.seed, wan=cfg.wan, lan=cfg.lan, wan_table=dict(cfg.wan_table))
    n = cfg.topo.n_dcs
    by_dc: dict = {}
    for i, (t, d) in enumerate(schedule):
        by_dc.setdefault(d, []).append((t, "tx%d" % i))
    nodes = {
        d: BaselineDC("b%d" % d, d, n, coordinator, by_dc.get(d, ()))
        for d in range(1, n + 1)
    }
    for node in nodes.values():
        sim.register(node)
    sim.run(limit=cfg.limit + 8 * cfg.wan)

    # read hop counts back out of the trace
    announce_at = {}
    learns: dict = {}
    durable_ticks: dict = {}
    for t, node, kind, payload in sim.trace_rows:
        tx = payload.split()[0]
        if kind == "announce":
            announce_at[tx] = t
        elif kind == "learn":
            d = int(node[1:])
            learns.setdefault(tx, {})[d] = int(payload.rsplit("=", 1)[1])
        elif kind == "durable":
            durable_ticks.setdefault(tx, []).append(t)

    pairs = []
    for i, (t, d) in enumerate(schedule):
        tx = "tx%d" % i
        learn_hops = dict(learns.get(tx, {}))
        learn_hops[coordinator] = 3  # release point doubles as the coordinator's learn
        quorum = n // 2 + 1
        ticks = sorted(durable_ticks.get(tx, []))
        # release: the decision is durable at a quorum (coordinator + q-1 remotes)
        release = (ticks[quorum - 1] - t) // cfg.wan if len(ticks) >= quorum else -1
        pairs.append(BaselinePair(
            tx_index=i, origin=d, release_hops=release, learn_hops=learn_hops))
    return BaselineReport(name=cfg.name, seed=cfg.seed, coordinator=coordinator, pairs=pairs)


def compare(cfg: ScenarioConfig, coordinator: int = 1):
    """Run both protocols on the identical workload; pair per transaction.

    Returns (consus Report, BaselineReport, comparison dict).  Transactions
    pair by start order, which both runs share.
    """
    consus = run_scenario(cfg, with_trace=False)
    base = run_baseline(cfg, coordinator)
    rows = []
    committed = sorted(consus.committed(), key=lambda r: (r["begin"], r["tx"]))
    wins = True
    for i, row in enumerate(committed):
        c_hops = consus.hops.get(row["tx"])
        b_hops = base.pairs[i].last_learn if i < len(base.pairs) else None
        beat = c_hops is not None and b_hops is not None and c_hops < b_hops
        wins = wins and beat
        rows.append({
            "tx": row["tx"],
            "consus_hops": c_hops,
            "baseline_hops": b_hops,
            "beats": beat,
        })
    noncoord_ok = all(
        h >= 4 for p in base.pairs
        for d, h in p.learn_hops.items() if d != coordinator
    )
    return consus, base, {
        "rows": rows,
        "consus_beats_baseline": wins and bool(rows),
        "noncoordinator_learn_ge_4": noncoord_ok,
    }
