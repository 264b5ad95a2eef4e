"""Partition-map rebalancing as a harness subcommand.

Input is a map file::

    [partitions]
    count = 16

    [assignment]
    s1 = 0 4          # server owns partitions [0, 4)
    s2 = 4 8

    [members]
    s1 s2 s3 s4 s5 s6 s7

`[assignment]` is the current map; `[members]` the target membership.  The
output walks through the same stages the store applies: ideal ranges for the
new membership, the overlap preference matrix, the stable matching, and the
one-partition-at-a-time adoption schedule for each member.
"""

from __future__ import annotations

from ..kvstore import (
    PartitionMap,
    adoption_schedule,
    ideal_ranges,
    partitions_moved,
    plan_rebalance,
    preference_matrix,
)
from .config import ConfigError


def parse_mapfile(text: str):
    section = None
    count = None
    assignment = {}
    members = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            if section not in ("partitions", "assignment", "members"):
                raise ConfigError("line %d: unknown section [%s]" % (lineno, section))
            continue
        if section == "partitions":
            key, _, value = line.partition("=")
            if key.strip() != "count":
                raise ConfigError("line %d: expected count = N" % lineno)
            count = int(value.strip())
        elif section == "assignment":
            server, _, rng = line.partition("=")
            parts = rng.split()
            if len(parts) != 2:
                raise ConfigError("line %d: expected 'server = lo hi'" % lineno)
            assignment[server.strip()] = (int(parts[0]), int(parts[1]))
        elif section == "members":
            members.extend(line.split())
        else:
            raise ConfigError("line %d: content before any section" % lineno)
    if count is None:
        raise ConfigError("mapfile needs [partitions] count")
    if not assignment:
        raise ConfigError("mapfile needs an [assignment] section")
    if not members:
        raise ConfigError("mapfile needs a [members] section")
    if len(members) != len(set(members)):
        raise ConfigError("duplicate server in [members]")
    if count < len(members):
        raise ConfigError("partition count %d below member count %d"
                          % (count, len(members)))
    old = PartitionMap(p=count, assignment=assignment)
    return old, members


def plan(text: str) -> str:
    old, members = parse_mapfile(text)
    new = plan_rebalance(old, members)
    ranges = ideal_ranges(old.p, len(members))
    prefs = preference_matrix(old, ranges)
    survivors = sorted(s for s in members if s in old.assignment)

    out = ["[ideal_ranges]"]
    for idx, rng in enumerate(ranges):
        out.append("range%d = %d %d" % (idx, rng[0], rng[1]))
    out.append("")
    out.append("[preferences]")
    for s in survivors:
        row = " ".join(str(prefs.get((s, i), 0)) for i in range(len(ranges)))
        out.append("%s = %s" % (s, row))
    out.append("")
    out.append("[matching]")
    for s in sorted(new.assignment):
        lo, hi = new.assignment[s]
        out.append("%s = %d %d" % (s, lo, hi))
    out.append("")
    out.append("[migration]")
    moved = partitions_moved(old, new)
    out.append("partitions_moved = %d" % moved)
    for s in sorted(new.assignment):
        current = old.assignment.get(s, (new.assignment[s][0], new.assignment[s][0]))
        steps = adoption_schedule(current, new.assignment[s])
        if steps:
            rendered = " -> ".join("%d:%d" % st for st in [current] + steps)
            out.append("%s = %s" % (s, rendered))
    if moved == 0:
        out.append("plan = empty")
    return "\n".join(out) + "\n"
