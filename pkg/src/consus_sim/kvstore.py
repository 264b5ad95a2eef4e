"""Per-data-center partitioned store: routing math, rebalancing, shards, locks.

The key space is hashed into a constant number of partitions P; each server
owns one contiguous range of partition indices and replicates every object
to the r-1 servers adjacent in range order.  Growth and shrink keep P fixed
and reshuffle ranges instead: ideal equal ranges are computed for the new
server count, servers bid for the new range overlapping their old one most
(stable marriage on overlap counts), leftover ranges go to new servers in
id order, and each server then walks toward its assigned range one boundary
partition at a time, shedding before growing so concurrent steps never
overlap.

Everything in this module is simulation-agnostic; server nodes embed
StoreShard and LockTable and drive them from message handlers.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field


def key_to_partition(key: str, p: int) -> int:
    if p < 1:
        raise ValueError("partition count must be >= 1")
    digest = hashlib.md5(key.encode("utf-8")).hexdigest()
    return int(digest, 16) % p


# ranges are half-open (lo, hi) index pairs into [0, P)


def range_size(rng) -> int:
    return max(0, rng[1] - rng[0])


def overlap(a, b) -> int:
    return max(0, min(a[1], b[1]) - max(a[0], b[0]))


@dataclass
class PartitionMap:
    p: int
    assignment: dict  # server id -> (lo, hi)
    version: int = 0

    def validate(self) -> None:
        spans = sorted(
            (rng for rng in self.assignment.values() if range_size(rng) > 0)
        )
        cursor = 0
        for lo, hi in spans:
            if lo != cursor:
                raise ValueError("ranges must tile [0,P): gap/overlap at %d" % lo)
            cursor = hi
        if cursor != self.p:
            raise ValueError("ranges cover [0,%d) not [0,%d)" % (cursor, self.p))

    def owner_of(self, partition: int) -> str:
        for server, (lo, hi) in self.assignment.items():
            if lo <= partition < hi:
                return server
        raise KeyError("partition %d unassigned" % partition)

    def servers_in_range_order(self) -> list:
        live = [(rng, s) for s, rng in self.assignment.items() if range_size(rng)]
        return [s for _, s in sorted(live)]

    def replicas_of(self, partition: int, r: int) -> list:
        """Owner plus its r-1 successors in range order (wrapping)."""
        order = self.servers_in_range_order()
        owner = self.owner_of(partition)
        i = order.index(owner)
        return [order[(i + k) % len(order)] for k in range(min(r, len(order)))]


def ideal_ranges(p: int, n_servers: int) -> list:
    """Split [0,P) into n contiguous ranges whose sizes differ by at most 1."""
    if not 1 <= n_servers <= p:
        raise ValueError("need 1 <= servers <= P, got %d servers for P=%d" % (n_servers, p))
    base, extra = divmod(p, n_servers)
    out = []
    lo = 0
    for i in range(n_servers):
        hi = lo + base + (1 if i < extra else 0)
        out.append((lo, hi))
        lo = hi
    return out


def preference_matrix(old: PartitionMap, ranges) -> dict:
    """(server, range index) -> how many of the server's partitions fall inside."""
    prefs = {}
    for server, owned in old.assignment.items():
        for idx, rng in enumerate(ranges):
            prefs[(server, idx)] = overlap(owned, rng)
    return prefs


def stable_match(prefs: dict, servers, n_ranges: int) -> dict:
    """Server -> range index with no blocking pair under overlap preference.

    Servers propose in descending overlap (ties: lower range index); a range
    prefers higher overlap (ties: lower server id).  Gale-Shapley with the
    proposing side unmatched-first, so the result is server-optimal, which
    is the direction that minimizes data movement.
    """
    servers = sorted(servers)
    if len(servers) > n_ranges:
        raise ValueError("more servers than ranges")
    wishlists = {
        s: sorted(range(n_ranges), key=lambda idx: (-prefs.get((s, idx), 0), idx))
        for s in servers
    }
    engaged: dict = {}  # range idx -> server
    free = list(servers)
    while free:
        s = free.pop(0)
        while wishlists[s]:
            idx = wishlists[s].pop(0)
            cur = engaged.get(idx)
            if cur is None:
                engaged[idx] = s
                break
            if (-prefs.get((s, idx), 0), s) < (-prefs.get((cur, idx), 0), cur):
                engaged[idx] = s
                free.append(cur)
                break
        else:
            raise AssertionError("server %s exhausted all ranges" % s)
    return {s: idx for idx, s in engaged.items()}


def plan_rebalance(old: PartitionMap, new_servers) -> PartitionMap:
    """New map for the given membership: stable match survivors, fill with newcomers."""
    new_servers = sorted(new_servers)
    ranges = ideal_ranges(old.p, len(new_servers))
    survivors = [s for s in new_servers if s in old.assignment]
    prefs = preference_matrix(old, ranges)
    matched = stable_match(prefs, survivors, len(ranges))
    taken = set(matched.values())
    newcomers = [s for s in new_servers if s not in old.assignment]
    spare = [i for i in range(len(ranges)) if i not in taken]
    for s, idx in zip(newcomers, spare):
        matched[s] = idx
    assignment = {s: ranges[idx] for s, idx in matched.items()}
    return PartitionMap(p=old.p, assignment=assignment, version=old.version + 1)


def partitions_moved(old: PartitionMap, new: PartitionMap) -> int:
    """How many partitions change owner between two maps."""
    moved = 0
    for part in range(old.p):
        if old.owner_of(part) != new.owner_of(part):
            moved += 1
    return moved


def adopt_step(current, target):
    """One boundary move toward target; shed foreign partitions before growing."""
    if current == target or range_size(target) == 0:
        return target
    if range_size(current) == 0:
        return (target[0], target[0] + 1)
    lo, hi = current
    if lo < target[0]:
        return (lo + 1, hi)  # may pass through empty when ranges are disjoint
    if hi > target[1]:
        return (lo, hi - 1)
    if lo > target[0]:
        return (lo - 1, hi)
    return (lo, hi + 1)


def adoption_schedule(current, target, bound: int = 10_000) -> list:
    """Every intermediate range from current to target (exclusive of current)."""
    steps = []
    rng = current
    while rng != target:
        rng = adopt_step(rng, target)
        steps.append(rng)
        if len(steps) > bound:
            raise AssertionError("adoption does not terminate: %r -> %r" % (current, target))
    return steps


# -- in-memory shard and locks -------------------------------------------------

ABSENT_VERSION = (-1, -1, -1)


@dataclass
class StoreShard:
    """Versioned key space slice; last-writer-wins by version tuple."""

    data: dict = field(default_factory=dict)  # key -> (value, version)

    def get(self, key: str):
        return self.data.get(key)  # None means absent

    def put(self, key: str, value: str, version: tuple) -> bool:
        cur = self.data.get(key)
        if cur is not None and cur[1] >= version:
            return False
        self.data[key] = (value, version)
        return True

    def items_sorted(self):
        return sorted(self.data.items())


def store_digest(shards) -> str:
    """Order-independent digest of the union of shards' (key, value, version)."""
    merged: dict = {}
    for shard in shards:
        for key, pair in shard.data.items():
            cur = merged.get(key)
            if cur is None or pair[1] > cur[1]:
                merged[key] = pair
    h = hashlib.sha256()
    for key, (value, version) in sorted(merged.items()):
        h.update(repr((key, value, version)).encode("utf-8"))
    return h.hexdigest()


SHARED = "shared"
EXCLUSIVE = "exclusive"


class LockTable:
    """Two-phase locks with FIFO waiters; grant decisions are deterministic."""

    def __init__(self):
        self.holders: dict = {}  # key -> (mode, [tx ids])
        self.waiters: dict = {}  # key -> [(tx id, mode)]

    def acquire(self, tx: str, key: str, mode: str) -> bool:
        """True if granted now; False enqueues the request."""
        held = self.holders.get(key)
        if held is None:
            self.holders[key] = (mode, [tx])
            return True
        held_mode, txs = held
        if tx in txs:
            if mode == held_mode or held_mode == EXCLUSIVE:
                return True
            if mode == EXCLUSIVE and txs == [tx]:
                self.holders[key] = (EXCLUSIVE, [tx])  # upgrade alone
                return True
        elif mode == SHARED and held_mode == SHARED and not self.waiters.get(key):
            txs.append(tx)
            return True
        queue = self.waiters.setdefault(key, [])
        if (tx, mode) not in queue:
            queue.append((tx, mode))
        return False

    def waiting_on(self, tx: str) -> list:
        return sorted(k for k, q in self.waiters.items() if any(t == tx for t, _ in q))

    def holders_of(self, key: str) -> list:
        held = self.holders.get(key)
        return list(held[1]) if held else []

    def release_all(self, tx: str) -> list:
        """Drop tx everywhere; returns newly granted (tx, key, mode) in order."""
        granted = []
        for key in list(self.holders):
            mode, txs = self.holders[key]
            if tx in txs:
                txs.remove(tx)
                if not txs:
                    del self.holders[key]
        for key in list(self.waiters):
            queue = self.waiters[key]
            self.waiters[key] = [(t, m) for t, m in queue if t != tx]
        for key in list(self.waiters):
            queue = self.waiters[key]
            while queue:
                nxt_tx, nxt_mode = queue[0]
                held = self.holders.get(key)
                if held is None:
                    self.holders[key] = (nxt_mode, [nxt_tx])
                elif nxt_mode == SHARED and held[0] == SHARED:
                    held[1].append(nxt_tx)
                else:
                    break
                queue.pop(0)
                granted.append((nxt_tx, key, nxt_mode))
            if not queue:
                del self.waiters[key]
        return granted
