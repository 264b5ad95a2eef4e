"""Scenario configuration: a line-oriented text format with named sections.

A config file looks like::

    [meta]
    name = common_case_3dc
    seed = 42

    [topology]
    dcs = 3
    servers_per_dc = 3

    [workload]
    txs = 24

Sections hold `key = value` lines; `#` starts a comment.  Two sections are
line-oriented instead: `[txs]` lists explicit transactions and `[faults]`
lists fault-schedule entries (see the parsers below for the line grammars).
Unknown sections or keys are rejected so typos fail loudly.
"""

from __future__ import annotations

import importlib.resources
from dataclasses import dataclass, field

from ..cluster import Topology, Tunables, TxPlan


class ConfigError(ValueError):
    """Raised for anything wrong with a scenario config."""


@dataclass(frozen=True)
class WorkloadSpec:
    """Knobs for the generated workload (ignored when explicit txs are given)."""

    txs: int = 0
    client_dcs: tuple = ()     # DCs that host clients, round-robin
    keys: int = 32             # size of the cold key space
    ops: int = 2               # operations per transaction
    reads: float = 0.0         # fraction of ops that are reads
    contention: float = 0.0    # probability an op targets the hot set
    hot_keys: int = 4
    spacing: int = 2           # ticks between transaction starts
    pace: int = 0              # think time between ops inside a transaction
    start: int = 0


@dataclass(frozen=True)
class FaultSpec:
    crashes: tuple = ()        # (tick, node)
    recovers: tuple = ()       # (tick, node)
    drops: tuple = ()          # (kind, src, dst, times, after); "*" matches any


@dataclass(frozen=True)
class ScenarioConfig:
    name: str
    seed: int
    topo: Topology
    knobs: Tunables
    wan: int = 1
    lan: int = 0
    wan_table: dict = field(default_factory=dict)
    limit: int = 400
    workload: WorkloadSpec = WorkloadSpec()
    explicit: tuple = ()       # ((dc, TxPlan), ...) overrides the generated workload
    faults: FaultSpec = FaultSpec()


_SECTIONS = ("meta", "topology", "network", "timeouts", "limits", "workload", "txs", "faults")

_KEYS = {
    "meta": {"name", "seed"},
    "topology": {"dcs", "servers_per_dc", "groups", "group_size", "partitions", "replication"},
    "network": {"wan", "lan"},
    "timeouts": {"deadlock", "gc", "sync", "progress", "stagger"},
    "limits": {"ticks"},
    "workload": {"txs", "dcs", "keys", "ops", "reads", "contention", "hot_keys",
                 "spacing", "pace", "start"},
}


def _split_sections(text: str):
    sections: dict = {}
    current = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            current = line[1:-1].strip()
            if current not in _SECTIONS:
                raise ConfigError("line %d: unknown section [%s]" % (lineno, current))
            sections.setdefault(current, [])
            continue
        if current is None:
            raise ConfigError("line %d: content before any section" % lineno)
        sections[current].append((lineno, line))
    return sections


def _kv(section: str, lines) -> dict:
    out = {}
    for lineno, line in lines:
        if "=" not in line:
            raise ConfigError("line %d: expected key = value in [%s]" % (lineno, section))
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if key not in _KEYS[section]:
            raise ConfigError("line %d: unknown key %r in [%s]" % (lineno, key, section))
        out[key] = (lineno, value)
    return out


def _get(kv: dict, key: str, cast, default):
    if key not in kv:
        return default
    lineno, value = kv[key]
    try:
        return cast(value)
    except ValueError:
        raise ConfigError("line %d: bad value %r for %s" % (lineno, value, key)) from None


def _parse_tx_line(lineno: int, line: str):
    """`dc=1 at=0 pace=3 : w key value, r key, ...` — at/pace optional."""
    head, sep, tail = line.partition(":")
    if not sep:
        raise ConfigError("line %d: transaction line needs ':'" % lineno)
    dc, at, pace = None, None, 0
    for token in head.split():
        key, _, value = token.partition("=")
        if key == "dc":
            dc = int(value)
        elif key == "at":
            at = int(value)
        elif key == "pace":
            pace = int(value)
        else:
            raise ConfigError("line %d: unknown transaction attribute %r" % (lineno, key))
    if dc is None:
        raise ConfigError("line %d: transaction line needs dc=" % lineno)
    ops = []
    for chunk in tail.split(","):
        parts = chunk.split()
        if not parts:
            continue
        if parts[0] == "w" and len(parts) == 3:
            ops.append(("w", parts[1], parts[2]))
        elif parts[0] == "r" and len(parts) == 2:
            ops.append(("r", parts[1], ""))
        else:
            raise ConfigError("line %d: bad op %r (want 'w key value' or 'r key')"
                              % (lineno, chunk.strip()))
    if not ops:
        raise ConfigError("line %d: transaction has no operations" % lineno)
    return dc, TxPlan(ops=tuple(ops), at=at, pace=pace)


def _parse_fault_line(lineno: int, line: str):
    parts = line.split()
    if parts[0] == "crash" and len(parts) == 3:
        return ("crash", int(parts[1]), parts[2])
    if parts[0] == "recover" and len(parts) == 3:
        return ("recover", int(parts[1]), parts[2])
    if parts[0] == "drop" and len(parts) == 6:
        kind, src, dst = parts[1], parts[2], parts[3]
        return ("drop", kind, src, dst, int(parts[4]), int(parts[5]))
    raise ConfigError(
        "line %d: bad fault %r (want 'crash T node', 'recover T node', or "
        "'drop KIND SRC DST TIMES AFTER')" % (lineno, line))


def parse_config(text: str) -> ScenarioConfig:
    sections = _split_sections(text)

    meta = _kv("meta", sections.get("meta", []))
    name = _get(meta, "name", str, "unnamed")
    seed = _get(meta, "seed", int, 0)

    topo_kv = _kv("topology", sections.get("topology", []))
    topo = Topology(
        n_dcs=_get(topo_kv, "dcs", int, 3),
        servers_per_dc=_get(topo_kv, "servers_per_dc", int, 3),
        groups=_get(topo_kv, "groups", int, 1),
        group_size=_get(topo_kv, "group_size", int, 0),
        partitions=_get(topo_kv, "partitions", int, 8),
        replication=_get(topo_kv, "replication", int, 1),
    )

    net = _kv("network", sections.get("network", []))
    wan = _get(net, "wan", int, 1)
    lan = _get(net, "lan", int, 0)

    tmo = _kv("timeouts", sections.get("timeouts", []))
    knobs = Tunables(
        deadlock=_get(tmo, "deadlock", int, 10),
        gc=_get(tmo, "gc", int, 200),
        sync=_get(tmo, "sync", int, 25),
        progress=_get(tmo, "progress", int, 12),
        stagger=_get(tmo, "stagger", int, 5),
    )

    lim = _kv("limits", sections.get("limits", []))
    limit = _get(lim, "ticks", int, 400)

    wl_kv = _kv("workload", sections.get("workload", []))
    dcs_raw = _get(wl_kv, "dcs", str, "")
    client_dcs = tuple(int(t) for t in dcs_raw.split()) if dcs_raw else tuple(
        range(1, topo.n_dcs + 1))
    workload = WorkloadSpec(
        txs=_get(wl_kv, "txs", int, 0),
        client_dcs=client_dcs,
        keys=_get(wl_kv, "keys", int, 32),
        ops=_get(wl_kv, "ops", int, 2),
        reads=_get(wl_kv, "reads", float, 0.0),
        contention=_get(wl_kv, "contention", float, 0.0),
        hot_keys=_get(wl_kv, "hot_keys", int, 4),
        spacing=_get(wl_kv, "spacing", int, 2),
        pace=_get(wl_kv, "pace", int, 0),
        start=_get(wl_kv, "start", int, 0),
    )

    explicit = tuple(_parse_tx_line(n, l) for n, l in sections.get("txs", []))

    crashes, recovers, drops = [], [], []
    for lineno, line in sections.get("faults", []):
        entry = _parse_fault_line(lineno, line)
        if entry[0] == "crash":
            crashes.append(entry[1:])
        elif entry[0] == "recover":
            recovers.append(entry[1:])
        else:
            drops.append(entry[1:])
    faults = FaultSpec(crashes=tuple(crashes), recovers=tuple(recovers), drops=tuple(drops))

    cfg = ScenarioConfig(
        name=name, seed=seed, topo=topo, knobs=knobs, wan=wan, lan=lan,
        limit=limit, workload=workload, explicit=explicit, faults=faults,
    )
    validate(cfg)
    return cfg


def validate(cfg: ScenarioConfig) -> None:
    topo, g = cfg.topo, cfg.topo.g
    if topo.n_dcs < 3 or topo.n_dcs % 2 == 0:
        # Majority quorums double as fast quorums only for odd ensembles
        # operating on the verdict algebra; stick to the supported shape.
        raise ConfigError("dcs must be odd and >= 3 (got %d)" % topo.n_dcs)
    if topo.servers_per_dc < 1:
        raise ConfigError("servers_per_dc must be >= 1")
    if not 1 <= g <= topo.servers_per_dc:
        raise ConfigError("group_size must be within 1..servers_per_dc (got %d)" % g)
    if topo.groups < 1:
        raise ConfigError("groups must be >= 1")
    if topo.partitions < topo.servers_per_dc:
        raise ConfigError("partitions (%d) must be >= servers_per_dc (%d)"
                          % (topo.partitions, topo.servers_per_dc))
    if not 1 <= topo.replication <= topo.servers_per_dc:
        raise ConfigError("replication must be within 1..servers_per_dc")
    if cfg.wan < 1:
        # Version stamps take the hand-off tick; a zero-delay WAN would let a
        # transaction commit in the same tick its input row was stamped.
        raise ConfigError("wan delay must be >= 1")
    if cfg.lan < 0:
        raise ConfigError("lan delay must be >= 0")
    for (src, dst), delay in cfg.wan_table.items():
        if delay < 1:
            raise ConfigError("wan delay %s->%s must be >= 1" % (src, dst))
    if cfg.limit < 1:
        raise ConfigError("limits.ticks must be >= 1")
    wl = cfg.workload
    if not cfg.explicit:
        if wl.txs < 0 or wl.ops < 1 and wl.txs:
            raise ConfigError("workload needs ops >= 1")
        if not 0.0 <= wl.reads <= 1.0 or not 0.0 <= wl.contention <= 1.0:
            raise ConfigError("reads and contention must be fractions in [0, 1]")
        for d in wl.client_dcs:
            if not 1 <= d <= topo.n_dcs:
                raise ConfigError("workload dc %d out of range" % d)
    for d, _plan in cfg.explicit:
        if not 1 <= d <= topo.n_dcs:
            raise ConfigError("transaction dc %d out of range" % d)
    valid_nodes = set(topo.all_servers())
    for t, node in cfg.faults.crashes + cfg.faults.recovers:
        if t < 0:
            raise ConfigError("fault tick must be >= 0")
        if node not in valid_nodes:
            raise ConfigError("fault node %r is not a server" % node)
    for _kind, src, dst, times, after in cfg.faults.drops:
        for end in (src, dst):
            if end != "*" and end not in valid_nodes:
                raise ConfigError("drop endpoint %r is not a server" % end)
        if times < 1 or after < 0:
            raise ConfigError("drop times must be >= 1 and after >= 0")


def render_config(cfg: ScenarioConfig) -> str:
    """Scenario back to config text; parse(render(cfg)) == cfg.

    Only the uniform WAN delay is representable; per-pair overrides are a
    programmatic-only feature.
    """
    if cfg.wan_table:
        raise ValueError("wan_table overrides cannot be rendered to text")
    t, w, k = cfg.topo, cfg.workload, cfg.knobs
    out = [
        "[meta]",
        "name = %s" % cfg.name,
        "seed = %d" % cfg.seed,
        "",
        "[topology]",
        "dcs = %d" % t.n_dcs,
        "servers_per_dc = %d" % t.servers_per_dc,
        "groups = %d" % t.groups,
        "group_size = %d" % t.group_size,
        "partitions = %d" % t.partitions,
        "replication = %d" % t.replication,
        "",
        "[network]",
        "wan = %d" % cfg.wan,
        "lan = %d" % cfg.lan,
        "",
        "[timeouts]",
        "deadlock = %d" % k.deadlock,
        "gc = %d" % k.gc,
        "sync = %d" % k.sync,
        "progress = %d" % k.progress,
        "stagger = %d" % k.stagger,
        "",
        "[limits]",
        "ticks = %d" % cfg.limit,
    ]
    if cfg.explicit:
        out += ["", "[txs]"]
        for d, plan in cfg.explicit:
            head = "dc=%d" % d
            if plan.at is not None:
                head += " at=%d" % plan.at
            if plan.pace:
                head += " pace=%d" % plan.pace
            ops = ", ".join(
                "w %s %s" % (op[1], op[2]) if op[0] == "w" else "r %s" % op[1]
                for op in plan.ops)
            out.append("%s : %s" % (head, ops))
    elif cfg.workload.txs:
        out += [
            "",
            "[workload]",
            "txs = %d" % w.txs,
            "dcs = %s" % " ".join(str(d) for d in w.client_dcs),
            "keys = %d" % w.keys,
            "ops = %d" % w.ops,
            "reads = %s" % w.reads,
            "contention = %s" % w.contention,
            "hot_keys = %d" % w.hot_keys,
            "spacing = %d" % w.spacing,
            "pace = %d" % w.pace,
            "start = %d" % w.start,
        ]
    f = cfg.faults
    if f.crashes or f.recovers or f.drops:
        out += ["", "[faults]"]
        for tick, node in f.crashes:
            out.append("crash %d %s" % (tick, node))
        for tick, node in f.recovers:
            out.append("recover %d %s" % (tick, node))
        for kind, src, dst, times, after in f.drops:
            out.append("drop %s %s %s %d %d" % (kind, src, dst, times, after))
    return "\n".join(out) + "\n"


def load_config(path: str) -> ScenarioConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config(fh.read())


def bundled_scenarios() -> list:
    """Names of the scenario files shipped inside the package."""
    root = importlib.resources.files("consus_sim.harness") / "scenarios"
    return sorted(p.name[:-4] for p in root.iterdir() if p.name.endswith(".cfg"))


def scenario_path(name: str):
    """Traversable for a bundled scenario; accepts 'name' or 'name.cfg'."""
    if not name.endswith(".cfg"):
        name += ".cfg"
    return importlib.resources.files("consus_sim.harness") / "scenarios" / name


def load_bundled(name: str) -> ScenarioConfig:
    return parse_config(scenario_path(name).read_text(encoding="utf-8"))
