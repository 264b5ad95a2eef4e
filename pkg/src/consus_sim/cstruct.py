"""Partially ordered command structures.

A command structure ("c-struct") is the equivalence class of a command
sequence under adjacent transpositions of commuting commands.  Two
sequences that differ only in the order of commuting neighbours denote
the same structure.  Structures are stored in a canonical normal form:
the unique linearization that greedily emits the smallest available
command (by the algebra's sort key) whose non-commuting predecessors
have all been emitted.

The partial order ``extends`` means "is reachable by appending": small
is a prefix of some linearization of big.  Greatest lower bounds always
exist; least upper bounds exist exactly when the inputs do not order
non-commuting commands inconsistently, otherwise ``lub`` returns the
distinguished ``BOTTOM`` marker.
"""

from __future__ import annotations

import weakref
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable, Sequence


class _Bottom:
    """Conflict marker returned by lub when no common upper bound exists."""

    __slots__ = ()

    def __repr__(self) -> str:
        return "BOT"

    def __bool__(self) -> bool:
        return False


BOTTOM = _Bottom()

COMMIT = "commit"
ABORT = "abort"


@dataclass(frozen=True, order=True)
class Result:
    """A data center's execution verdict for one transaction."""

    dc: int
    verdict: str  # COMMIT or ABORT


@dataclass(frozen=True, order=True)
class Retraction:
    """A data center's withdrawal of (or refusal to ever issue) a commit result."""

    dc: int


class Algebra:
    """Command semantics a c-struct needs: commutation, identity slots, ordering.

    ``fast_safe`` marks commands whose relative order can never matter: all
    fast-safe commands must commute with each other, and ``sort_key`` must
    place every fast-safe command before every order-sensitive one.  Learners
    use the flag to decide what partial evidence may teach them (see the
    consensus module); order-sensitive commands need unanimous evidence or a
    classic round.

    One more precondition rides on the proposers rather than the algebra:
    two *rival* fast-safe commands (same slot, different command) must never
    be in flight at once, since partial evidence cannot reveal which rival a
    quorum settled on.  Rival commands have to be funneled through a prior
    agreement so that at most one enters the system; the ensemble layer's
    local-first export rule does exactly that for verdicts.
    """

    name = "abstract"

    def commutes(self, a, b) -> bool:
        raise NotImplementedError

    def fast_safe(self, cmd) -> bool:
        return False

    def slot(self, cmd):
        """Identity slot: a structure keeps at most one command per slot."""
        return cmd

    def sort_key(self, cmd):
        raise NotImplementedError

    def render(self, cmd) -> str:
        return str(cmd)


class VerdictAlgebra(Algebra):
    """Results from any data centers commute; retractions order against everything."""

    name = "verdict"

    def commutes(self, a, b) -> bool:
        return isinstance(a, Result) and isinstance(b, Result)

    def fast_safe(self, cmd) -> bool:
        return isinstance(cmd, Result)

    def slot(self, cmd):
        if isinstance(cmd, Result):
            return ("result", cmd.dc)
        return ("retract", cmd.dc)

    def sort_key(self, cmd):
        if isinstance(cmd, Result):
            return (0, cmd.dc, cmd.verdict)
        return (1, cmd.dc, "")

    def render(self, cmd) -> str:
        if isinstance(cmd, Result):
            return ("Rc(%d)" if cmd.verdict == COMMIT else "Ra(%d)") % cmd.dc
        return "X(%d)" % cmd.dc


VERDICTS = VerdictAlgebra()


def _normalize(algebra: Algebra, seq: Sequence) -> tuple:
    """Greedy normal form of a command sequence under the algebra's commutation."""
    n = len(seq)
    direct = {c: set() for c in seq}
    for j in range(n):
        cj = seq[j]
        for i in range(j):
            if not algebra.commutes(seq[i], cj):
                direct[cj].add(seq[i])
    out: list = []
    emitted: set = set()
    remaining = list(seq)
    while remaining:
        best = None
        for c in remaining:
            if direct[c] <= emitted:
                if best is None or algebra.sort_key(c) < algebra.sort_key(best):
                    best = c
        out.append(best)
        emitted.add(best)
        remaining.remove(best)
    return tuple(out)


_intern: "weakref.WeakValueDictionary" = weakref.WeakValueDictionary()


class CStruct:
    """Immutable canonical c-struct over a fixed algebra.

    Instances are interned on their normal form, so equal structures are the
    same object and equality is (almost always) an identity check.
    """

    __slots__ = ("algebra", "cmds", "_set", "_slots", "_preds", "_hash", "__weakref__")

    def __new__(cls, algebra: Algebra, seq: Sequence = ()):
        cmds = _normalize(algebra, tuple(seq))
        key = (id(algebra), cmds)
        got = _intern.get(key)
        if got is not None:
            return got
        self = super().__new__(cls)
        self._build(algebra, cmds)
        _intern[key] = self
        return self

    def __init__(self, algebra: Algebra, seq: Sequence = ()):
        pass  # construction happens in __new__ so interning can short-circuit

    def _build(self, algebra: Algebra, cmds: tuple):
        self.algebra = algebra
        self.cmds = cmds
        self._set = frozenset(cmds)
        self._slots = frozenset(algebra.slot(c) for c in cmds)
        if len(self._slots) != len(cmds):
            raise ValueError("duplicate command slot in %r" % (cmds,))
        # transitive predecessor sets, keyed by command
        preds: dict = {}
        for j, cj in enumerate(cmds):
            p: set = set()
            for i in range(j):
                ci = cmds[i]
                if not algebra.commutes(ci, cj):
                    p.add(ci)
                    p |= preds[ci]
            preds[cj] = frozenset(p)
        self._preds = preds
        self._hash = hash((id(algebra), cmds))

    # -- basic protocol --------------------------------------------------

    def __len__(self) -> int:
        return len(self.cmds)

    def __iter__(self):
        return iter(self.cmds)

    def __contains__(self, cmd) -> bool:
        return cmd in self._set

    def __eq__(self, other) -> bool:
        if self is other:
            return True
        return (
            isinstance(other, CStruct)
            and self.algebra is other.algebra
            and self.cmds == other.cmds
        )

    def __hash__(self) -> int:
        return self._hash

    def __repr__(self) -> str:
        return "[" + " ".join(self.algebra.render(c) for c in self.cmds) + "]"

    @property
    def command_set(self) -> frozenset:
        return self._set

    def preds(self, cmd) -> frozenset:
        """Transitive non-commuting predecessors of cmd within this structure."""
        return self._preds[cmd]

    def has_slot(self, cmd) -> bool:
        return self.algebra.slot(cmd) in self._slots

    # -- construction ----------------------------------------------------

    def append(self, cmd) -> "CStruct":
        """Append one command; a command whose slot is already present is ignored."""
        if self.has_slot(cmd):
            return self
        return CStruct(self.algebra, self.cmds + (cmd,))

    def extend(self, cmds: Iterable) -> "CStruct":
        cur = self
        for c in cmds:
            cur = cur.append(c)
        return cur

    # -- order -----------------------------------------------------------

    def extends(self, other: "CStruct") -> bool:
        """True iff other is a prefix of this structure modulo commuting swaps."""
        if other.algebra is not self.algebra:
            raise ValueError("algebra mismatch")
        return _extends(self, other)

    def properly_extends(self, other: "CStruct") -> bool:
        return self != other and self.extends(other)

    def compatible(self, other: "CStruct") -> bool:
        """True iff the two structures have a common upper bound."""
        return lub([self, other]) is not BOTTOM

    def linearizations(self, bound: int = 8) -> list:
        """All command sequences equivalent to this structure.

        Enumeration is factorial; callers stay within the documented bound.
        """
        if len(self.cmds) > bound:
            raise ValueError("linearization bound %d exceeded" % bound)
        seqs: list = []
        direct = {c: set(p) for c, p in self._preds.items()}

        def rec(prefix, remaining):
            if not remaining:
                seqs.append(tuple(prefix))
                return
            for c in list(remaining):
                if direct[c] <= set(prefix):
                    prefix.append(c)
                    remaining.remove(c)
                    rec(prefix, remaining)
                    remaining.add(c)
                    prefix.pop()

        rec([], set(self.cmds))
        return seqs


@lru_cache(maxsize=1 << 18)
def _extends(big: CStruct, small: CStruct) -> bool:
    if not small._set <= big._set:
        return False
    for c in small.cmds:
        # small must be downward closed inside big
        if not big._preds[c] <= small._set:
            return False
    # induced order on shared non-commuting pairs must agree
    for j, cj in enumerate(small.cmds):
        for i in range(j):
            ci = small.cmds[i]
            if not big.algebra.commutes(ci, cj):
                if (ci in small._preds[cj]) != (ci in big._preds[cj]):
                    return False
    return True


def empty(algebra: Algebra) -> CStruct:
    return CStruct(algebra, ())


def equivalent(a: CStruct, b: CStruct) -> bool:
    """True iff a and b denote the same equivalence class."""
    return a == b


def extends(a: CStruct, b: CStruct) -> bool:
    """True iff a extends b (b is a prefix of a modulo commuting swaps)."""
    return a.extends(b)


def glb(values: Sequence[CStruct]) -> CStruct:
    """Greatest common prefix of the given structures (nonempty input)."""
    if not values:
        raise ValueError("glb of empty set")
    if len(values) == 1:
        return values[0]
    return _glb(tuple(values))


@lru_cache(maxsize=1 << 16)
def _glb(values: tuple) -> CStruct:
    first = values[0]
    algebra = first.algebra
    common = set(first._set)
    for v in values[1:]:
        if v.algebra is not algebra:
            raise ValueError("algebra mismatch")
        common &= v._set
    kept: set = set()
    changed = True
    while changed:
        changed = False
        for c in common:
            if c in kept:
                continue
            if all(v._preds[c] <= kept for v in values):
                kept.add(c)
                changed = True
    seq = [c for c in first.cmds if c in kept]
    return CStruct(algebra, seq)


def lub(values: Sequence[CStruct]):
    """Least upper bound of the given structures, or BOTTOM when none exists.

    BOTTOM arises when two inputs order a non-commuting pair differently, or
    when one input holds a command that cannot be pushed past another input's
    commands (each input must survive as a prefix of the result).
    """
    if not values:
        raise ValueError("lub of empty set")
    return _lub(tuple(values))


@lru_cache(maxsize=1 << 16)
def _lub(values: tuple):
    algebra = values[0].algebra
    by_slot: dict = {}
    for v in values:
        if v.algebra is not algebra:
            raise ValueError("algebra mismatch")
        for c in v.cmds:
            s = algebra.slot(c)
            if by_slot.setdefault(s, c) != c:
                return BOTTOM  # two distinct commands claim one slot
    union = list(by_slot.values())
    after: dict = {c: set() for c in union}  # edges c -> later commands
    for v in values:
        vset = v._set
        for j, cj in enumerate(v.cmds):
            for i in range(j):
                ci = v.cmds[i]
                if not algebra.commutes(ci, cj) and ci in v._preds[cj]:
                    after[ci].add(cj)
        for c in union:
            if c in vset:
                continue
            # c is outside v, so it must land after everything in v it
            # cannot commute past
            for z in v.cmds:
                if not algebra.commutes(z, c):
                    after[z].add(c)
    # Kahn's algorithm with the deterministic sort-key tie-break
    indeg = {c: 0 for c in union}
    for c, outs in after.items():
        for d in outs:
            if c is not d:
                indeg[d] += 1
    out: list = []
    avail = sorted((c for c in union if indeg[c] == 0), key=algebra.sort_key)
    while avail:
        c = avail.pop(0)
        out.append(c)
        for d in sorted(after[c], key=algebra.sort_key):
            indeg[d] -= 1
            if indeg[d] == 0:
                avail.append(d)
        avail.sort(key=algebra.sort_key)
    if len(out) != len(union):
        return BOTTOM  # cyclic ordering constraints
    result = CStruct(algebra, out)
    for v in values:
        if not result.extends(v):
            return BOTTOM
    return result
