"""Seeded scenario fuzzing: random workloads under random faults.

Each seed derives a scenario from the base config — a fresh mix of
transactions (contention, reads, pacing) plus a fault schedule of crashes and
message drops — runs it, and grades the report.  Failures are shrunk to a
minimal witness config that still fails, which is what gets reported.

Fault injection stays within what the protocol is supposed to survive:

* at most one server per data center is down at a time (local ensembles keep
  their majority), and every crash recovers before the run's drain window;
* only replication/dissemination message kinds are dropped — each is healed
  by an anti-entropy path (log pulls, snapshot re-broadcast, periodic sync);
  client-facing messages are never dropped, matching the reliable
  client-to-contact channel the protocol assumes.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, replace

from .config import FaultSpec, ScenarioConfig, WorkloadSpec, render_config
from .runner import Report, generate_workload, run_scenario

DROPPABLE = ("LogOp", "RecordMsg", "OuterCmd", "OuterSnap", "PutRows", "SyncRows")


def derive(base: ScenarioConfig, seed: int) -> ScenarioConfig:
    """A concrete scenario for this seed: explicit txs + explicit faults."""
    rng = random.Random((base.seed << 20) ^ seed)
    topo = base.topo
    n_txs = rng.randint(6, 10)
    wl = WorkloadSpec(
        txs=n_txs,
        client_dcs=tuple(range(1, topo.n_dcs + 1)),
        keys=rng.randint(8, 24),
        ops=rng.randint(1, 3),
        reads=rng.choice((0.0, 0.2, 0.4)),
        contention=rng.choice((0.0, 0.3, 0.6)),
        hot_keys=rng.randint(2, 4),
        spacing=rng.randint(1, 5),
        pace=rng.choice((0, 0, 2, 4)),
        start=1,
    )
    shaped = replace(base, seed=seed, workload=wl, explicit=())
    explicit = tuple(
        (d, plan) for d, plans in generate_workload(shaped) for plan in plans)

    crashes, recovers = [], []
    busy = {}  # dc -> last recovery tick
    for _ in range(rng.randint(0, 2)):
        d = rng.randint(1, topo.n_dcs)
        s = rng.randrange(topo.servers_per_dc)
        start = rng.randint(2, 50)
        if start <= busy.get(d, -1):
            continue  # keep each DC's ensemble at quorum strength
        length = rng.randint(8, 40)
        crashes.append((start, "dc%ds%d" % (d, s)))
        recovers.append((start + length, "dc%ds%d" % (d, s)))
        busy[d] = start + length
    drops = []
    for _ in range(rng.randint(0, 4)):
        kind = rng.choice(DROPPABLE)
        d = rng.randint(1, topo.n_dcs)
        s = rng.randrange(topo.servers_per_dc)
        drops.append((kind, "*", "dc%ds%d" % (d, s),
                      rng.randint(1, 2), rng.randint(0, 4)))

    return replace(
        shaped,
        name="%s-seed%d" % (base.name, seed),
        explicit=explicit,
        workload=WorkloadSpec(),
        faults=FaultSpec(crashes=tuple(sorted(crashes)),
                         recovers=tuple(sorted(recovers)),
                         drops=tuple(drops)),
    )


def shrink(cfg: ScenarioConfig, failed=None) -> ScenarioConfig:
    """Greedy minimization: drop txs, crash pairs, and drop rules one at a
    time while the scenario still fails."""
    if failed is None:
        failed = lambda c: not run_scenario(c, with_trace=False).ok

    def variants(c: ScenarioConfig):
        for i in range(len(c.explicit)):
            yield replace(c, explicit=c.explicit[:i] + c.explicit[i + 1:])
        for i in range(len(c.faults.crashes)):
            f = c.faults
            node = f.crashes[i][1]
            yield replace(c, faults=FaultSpec(
                crashes=f.crashes[:i] + f.crashes[i + 1:],
                recovers=tuple(r for r in f.recovers if r[1] != node),
                drops=f.drops))
        for i in range(len(c.faults.drops)):
            f = c.faults
            yield replace(c, faults=FaultSpec(
                crashes=f.crashes, recovers=f.recovers,
                drops=f.drops[:i] + f.drops[i + 1:]))

    current = cfg
    progress = True
    while progress:
        progress = False
        for candidate in variants(current):
            if not candidate.explicit:
                continue
            if failed(candidate):
                current = candidate
                progress = True
                break
    return current


@dataclass
class FuzzFailure:
    seed: int
    checks: dict
    witness_config: str
    report: str


@dataclass
class FuzzReport:
    base: str
    seeds: tuple
    failures: list

    @property
    def ok(self) -> bool:
        return not self.failures

    def render(self) -> str:
        out = ["[fuzz]"]
        out.append("base = %s" % self.base)
        out.append("seeds = %d..%d" % (self.seeds[0], self.seeds[-1]))
        out.append("total = %d" % len(self.seeds))
        out.append("failed = %d" % len(self.failures))
        for f in self.failures:
            bad = " ".join(sorted(k for k, v in f.checks.items() if not v))
            out.append("seed %d FAIL: %s" % (f.seed, bad))
        if not self.failures:
            out.append("result = pass")
        return "\n".join(out) + "\n"


def run_fuzz(base: ScenarioConfig, seeds) -> FuzzReport:
    seeds = tuple(seeds)
    failures = []
    for seed in seeds:
        cfg = derive(base, seed)
        report = run_scenario(cfg, with_trace=False)
        if not report.ok:
            small = shrink(cfg)
            small_report = run_scenario(small, with_trace=False)
            failures.append(FuzzFailure(
                seed=seed,
                checks=dict(report.checks),
                witness_config=render_config(small),
                report=small_report.render(),
            ))
    return FuzzReport(base=base.name, seeds=seeds, failures=failures)
