"""Deterministic discrete-event network hosting every simulated node.

Time is integer ticks.  Events are processed in (time, insertion sequence)
order, so a fixed seed and scenario always replay the same run.  Message
latency is WAN between data centers and LAN within one (defaults 1 and 0),
with optional seeded jitter; node computation costs zero ticks, which keeps
wide-area delay counts exact.

Hop accounting: every delivery carries the number of data-center crossings
on its causal path.  A handler inherits the count of the message (or timer)
that woke it, and anything it sends extends that count; the commit layer
resets the context to zero when a transaction's wide-area life begins, so
"decided at hop 3" can be asserted directly off the delivering message.

Crashes drop volatile state, pending timers, and in-flight deliveries that
arrive while the node is down.  Recovery re-runs the node's volatile
initializer, which must rebuild everything from ``node.durable`` — the only
state the framework preserves.  Durable writes are instantaneous but
counted by category so I/O-savings claims are assertable.
"""

from __future__ import annotations

import heapq
import random
from collections import Counter
from dataclasses import dataclass, field


class Node:
    """A simulated process. Subclasses keep all survivable state in self.durable."""

    def __init__(self, node_id: str, dc: int):
        self.node_id = node_id
        self.dc = dc
        self.up = True
        self.epoch = 0
        self.durable: dict = {}
        self.sim: "Sim" = None  # set on register

    def volatile_init(self) -> None:
        """(Re)build in-memory state; called at registration and on recovery."""

    def handle(self, src: str, msg, hops: int) -> None:
        raise NotImplementedError

    def on_timer(self, name: str, payload) -> None:
        raise NotImplementedError

    def on_recover(self) -> None:
        """Called after volatile_init when the node comes back up."""

    # -- conveniences ------------------------------------------------------

    def send(self, dst: str, msg, hops: int = None) -> None:
        self.sim.send(self.node_id, dst, msg, hops=hops)

    def after(self, delay: int, name: str, payload=None) -> int:
        return self.sim.after(self.node_id, delay, name, payload)

    def durable_write(self, category: str) -> None:
        self.sim.durable_counts[category] += 1


@dataclass
class DropRule:
    """Drop up to `times` matching sends, skipping the first `after` matches.

    None fields match anything; `after` lets a rule target e.g. the third
    LogOp to a node instead of the first.
    """

    src: str = None
    dst: str = None
    kind: str = None  # payload class name
    times: int = 1
    after: int = 0

    def matches(self, src: str, dst: str, msg) -> bool:
        if self.times <= 0:
            return False
        if self.src is not None and src != self.src:
            return False
        if self.dst is not None and dst != self.dst:
            return False
        if self.kind is not None and type(msg).__name__ != self.kind:
            return False
        if self.after > 0:
            self.after -= 1
            return False
        return True


@dataclass
class FaultPlan:
    drops: list = field(default_factory=list)
    duplicates: list = field(default_factory=list)  # same shape as drops

    def should_drop(self, src, dst, msg) -> bool:
        for rule in self.drops:
            if rule.matches(src, dst, msg):
                rule.times -= 1
                return True
        return False

    def should_duplicate(self, src, dst, msg) -> bool:
        for rule in self.duplicates:
            if rule.matches(src, dst, msg):
                rule.times -= 1
                return True
        return False


class Sim:
    def __init__(self, seed: int = 0, wan: int = 1, lan: int = 0,
                 wan_jitter: tuple = (0, 0), faults: FaultPlan = None,
                 wan_table: dict = None):
        self.now = 0
        self.seed = seed
        self.rng = random.Random(seed)
        self.wan = wan
        self.lan = lan
        self.wan_jitter = wan_jitter
        self.wan_table = wan_table or {}  # (src dc, dst dc) -> delay override
        self.faults = faults or FaultPlan()
        self.nodes: dict = {}
        self.heap: list = []
        self._seq = 0
        self._cancelled: set = set()
        self.ctx_hops = 0  # hop count of the event currently being handled
        self.msg_counts: Counter = Counter()
        self.durable_counts: Counter = Counter()
        self.dropped = 0
        self.trace_rows: list = []  # (time, node, kind, payload string)

    # -- registration ------------------------------------------------------

    def register(self, node: Node) -> Node:
        if node.node_id in self.nodes:
            raise ValueError("duplicate node id %s" % node.node_id)
        node.sim = self
        self.nodes[node.node_id] = node
        node.volatile_init()
        return node

    # -- tracing -----------------------------------------------------------

    def trace(self, node_id: str, kind: str, payload: str) -> None:
        self.trace_rows.append((self.now, node_id, kind, payload))

    # -- scheduling --------------------------------------------------------

    def _push(self, time: int, kind: str, dst: str, data) -> int:
        self._seq += 1
        heapq.heappush(self.heap, (time, self._seq, kind, dst, data))
        return self._seq

    def send(self, src: str, dst: str, msg, hops: int = None) -> None:
        sender = self.nodes[src]
        if not sender.up:
            return
        if hops is None:
            hops = self.ctx_hops
        crossing = self.nodes[dst].dc != sender.dc
        delay = self.lan
        if crossing:
            delay = self.wan_table.get((sender.dc, self.nodes[dst].dc), self.wan)
            if self.wan_jitter != (0, 0):
                delay += self.rng.randint(*self.wan_jitter)
            hops += 1
        self.msg_counts[type(msg).__name__] += 1
        if self.faults.should_drop(src, dst, msg):
            self.dropped += 1
            return
        self._push(self.now + delay, "msg", dst, (src, msg, hops))
        if self.faults.should_duplicate(src, dst, msg):
            self._push(self.now + delay, "msg", dst, (src, msg, hops))

    def broadcast(self, src: str, dsts, msg, hops: int = None) -> None:
        for dst in dsts:
            self.send(src, dst, msg, hops=hops)

    def after(self, node_id: str, delay: int, name: str, payload=None) -> int:
        node = self.nodes[node_id]
        return self._push(
            self.now + delay, "timer", node_id,
            (node.epoch, name, payload, self.ctx_hops),
        )

    def cancel(self, token: int) -> None:
        self._cancelled.add(token)

    # -- failures ----------------------------------------------------------

    def crash(self, node_id: str) -> None:
        node = self.nodes[node_id]
        if not node.up:
            return
        node.up = False
        node.epoch += 1  # orphans every pending timer
        self.trace(node_id, "crash", "")

    def recover(self, node_id: str) -> None:
        node = self.nodes[node_id]
        if node.up:
            return
        node.up = True
        node.volatile_init()
        self.trace(node_id, "recover", "")
        node.on_recover()

    def schedule_fault(self, time: int, action: str, node_id: str) -> None:
        if action not in ("crash", "recover"):
            raise ValueError(action)
        self._push(time, action, node_id, None)

    # -- main loop ---------------------------------------------------------

    def run(self, limit: int) -> tuple:
        """Process events until the queue drains. Returns (time, exceeded)."""
        while self.heap:
            time, seq, kind, dst, data = heapq.heappop(self.heap)
            if kind == "timer" and seq in self._cancelled:
                self._cancelled.discard(seq)
                continue
            if time > limit:
                heapq.heappush(self.heap, (time, seq, kind, dst, data))
                return self.now, True
            node = self.nodes[dst]
            if kind == "crash":
                self.now = time
                self.crash(dst)
                continue
            if kind == "recover":
                self.now = time
                self.recover(dst)
                continue
            if not node.up:
                continue  # lost in flight, or a timer of a dead incarnation
            if kind == "timer":
                epoch, name, payload, hops = data
                if epoch != node.epoch:
                    continue
                self.now = time
                self.ctx_hops = hops
                node.on_timer(name, payload)
            else:
                src, msg, hops = data
                self.now = time
                self.ctx_hops = hops
                node.handle(src, msg, hops)
            self.ctx_hops = 0
        return self.now, False
