"""Strict serializability checking by bounded search.

A history is a list of rows::

    {"tx": str, "begin": int, "end": int, "outcome": "commit" | "abort",
     "ops": [("w", key, value) | ("r", key, observed)]}

The committed rows pass iff some total order (a) respects real time — if T1
ended before T2 began, T1 comes first — and (b) replays every observed read,
ABSENT included.  Aborted transactions never installed anything and are not
ordered.

Search is depth-first over prefixes with incremental read validation, so
branches die as soon as a read cannot be explained.  Histories are first cut
into windows at real-time gaps (every transaction on one side ends before
everything on the other begins); windows are solved in sequence, threading
each candidate final store into the next window and backtracking across the
boundary if need be.
"""

from __future__ import annotations

import json

from ..commit import ABSENT


def history_from_trace(text: str) -> list:
    """Recover history rows from the `done` records of a trace file."""
    rows = []
    for line in text.splitlines():
        parts = line.split("|", 3)
        if len(parts) == 4 and parts[2] == "done":
            row = json.loads(parts[3])
            row["ops"] = [tuple(op) for op in row["ops"]]
            rows.append(row)
    return rows


def split_windows(rows: list) -> list:
    """Cut at points where every earlier transaction ended before the rest begin."""
    rows = sorted(rows, key=lambda r: (r["begin"], r["end"], r["tx"]))
    windows, current, frontier = [], [], None
    for row in rows:
        if current and frontier is not None and row["begin"] > frontier:
            windows.append(current)
            current = []
        current.append(row)
        frontier = row["end"] if frontier is None else max(frontier, row["end"])
    if current:
        windows.append(current)
    return windows


def _replays(row: dict, store: dict) -> bool:
    shadow = {}
    for op in row["ops"]:
        kind, key, value = op
        if kind == "w":
            shadow[key] = value
        elif shadow.get(key, store.get(key, ABSENT)) != value:
            return False
    return True


def _apply(row: dict, store: dict) -> dict:
    out = dict(store)
    for kind, key, value in row["ops"]:
        if kind == "w":
            out[key] = value
    return out


def _orders(window: list, store: dict):
    """Yield (order, final store) for every valid serialization of the window."""
    n = len(window)

    def extend(order, remaining, state):
        if not remaining:
            yield list(order), state
            return
        for i, row in enumerate(remaining):
            # real-time: nothing still unplaced may have ended before this began
            if any(other["end"] < row["begin"] for other in remaining if other is not row):
                continue
            if not _replays(row, state):
                continue
            order.append(row)
            rest = remaining[:i] + remaining[i + 1:]
            yield from extend(order, rest, _apply(row, state))
            order.pop()

    yield from extend([], window, store)


def components(window: list) -> list:
    """Split a window by key-access connectivity.

    Transactions touching disjoint keys serialize independently: any
    per-component order that respects real time merges into a global one
    (a cross-component cycle would need a real-time edge back into a
    component, contradicting that component orders already respect real
    time).  This keeps the brute-force bound on the component, where it
    belongs — concurrent but unrelated transactions don't inflate it.
    """
    parent = list(range(len(window)))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    by_key: dict = {}
    for i, row in enumerate(window):
        for _kind, key, _v in row["ops"]:
            j = by_key.setdefault(key, i)
            parent[find(i)] = find(j)
    groups: dict = {}
    for i, row in enumerate(window):
        groups.setdefault(find(i), []).append(row)
    return list(groups.values())


def _window_solutions(window: list, store: dict):
    """Yield (order, final store) for the window, component by component."""
    comps = components(window)

    def rec(i, state, acc):
        if i == len(comps):
            yield list(acc), state
            return
        seen = set()
        for order, st in _orders(comps[i], state):
            frozen = frozenset(st.items())
            if frozen in seen:
                continue
            seen.add(frozen)
            yield from rec(i + 1, st, acc + order)

    yield from rec(0, store, [])


def _solve(windows: list, idx: int, store: dict, prefix: list):
    if idx == len(windows):
        return list(prefix)
    seen_states = set()
    for order, state in _window_solutions(windows[idx], store):
        frozen = frozenset(state.items())
        if frozen in seen_states:
            continue  # same store, same future: no point re-exploring
        seen_states.add(frozen)
        result = _solve(windows, idx + 1, state, prefix + order)
        if result is not None:
            return result
    return None


def _core(window: list, store: dict) -> list:
    """Shrink an unserializable window: drop rows whose absence keeps it broken."""
    core = list(window)
    changed = True
    while changed:
        changed = False
        for row in list(core):
            trial = [r for r in core if r is not row]
            if trial and _solve([trial], 0, store, []) is None:
                core = trial
                changed = True
                break
    return core


def check_strict_serializability(history: list, bound: int = 10):
    """Return (True, order) or (False, witness dict)."""
    committed = [r for r in history if r["outcome"] == "commit"]
    windows = split_windows(committed)
    for w in windows:
        for comp in components(w):
            if len(comp) > bound:
                return False, {
                    "reason": "%d concurrent committed transactions share keys, "
                              "exceeding the brute-force bound %d" % (len(comp), bound),
                    "core": [r["tx"] for r in comp],
                }
    order = _solve(windows, 0, {}, [])
    if order is not None:
        return True, [r["tx"] for r in order]
    # Rebuild the store up to the first window that cannot be serialized.
    store: dict = {}
    for idx, w in enumerate(windows):
        if _solve([w], 0, store, []) is None:
            bad = next(
                (c for c in components(w) if _solve([c], 0, store, []) is None), w)
            core = _core(bad, store)
            return False, {
                "reason": "no serialization of window %d replays all reads" % idx,
                "core": [r["tx"] for r in core],
                "rows": core,
            }
        _ord, store = next(_window_solutions(w, store))
    # Each window passes alone but no threading works; report the whole tail.
    return False, {
        "reason": "windows are only serializable under incompatible store states",
        "core": [r["tx"] for w in windows for r in w],
    }
