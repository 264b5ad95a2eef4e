"""Command-line client for the scenario service.

By default the service app is mounted in-process, so `consus-sim run ...`
needs no running server; `--server http://host:port` points the same
commands at a remote instance instead.

Exit codes: 0 all checks pass, 1 a property failed, 2 bad config or usage.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import httpx


def _client(server: str | None) -> httpx.Client:
    if server:
        return httpx.Client(base_url=server, timeout=600.0)
    # sync bridge into the in-process ASGI app; starlette nags about a
    # future httpx2 backend, which is nothing the user can act on here
    import warnings

    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        from starlette.testclient import TestClient

    from .service.app import app

    return TestClient(app)


def _read_config(path: str) -> str:
    """A real file wins; otherwise fall back to a bundled scenario name."""
    if os.path.exists(path):
        with open(path, "r", encoding="utf-8") as fh:
            return fh.read()
    from .harness.config import scenario_path

    bundled = scenario_path(path)
    if bundled.is_file():
        return bundled.read_text(encoding="utf-8")
    print("no such config file or bundled scenario: %s" % path, file=sys.stderr)
    raise SystemExit(2)


def _post(client: httpx.Client, url: str, payload: dict) -> dict:
    resp = client.post(url, json=payload)
    if resp.status_code == 400:
        print("config error: %s" % resp.json().get("detail", ""), file=sys.stderr)
        raise SystemExit(2)
    resp.raise_for_status()
    return resp.json()


def cmd_run(args, client) -> int:
    body = _post(client, "/run", {
        "config": _read_config(args.config),
        "trace": bool(args.trace),
    })
    sys.stdout.write(body["report"])
    if args.trace:
        with open(args.trace, "w", encoding="utf-8") as fh:
            fh.write(body["trace"] or "")
        print("trace written to %s" % args.trace, file=sys.stderr)
    return body["exit_code"]


def cmd_check(args, client) -> int:
    try:
        with open(args.trace, "r", encoding="utf-8") as fh:
            trace = fh.read()
    except OSError as exc:
        print(str(exc), file=sys.stderr)
        return 2
    body = _post(client, "/check", {"trace": trace})
    if body["ok"]:
        print("serializable: %d transactions" % body["transactions"])
        return 0
    print("NOT serializable: %s" % body["witness"].get("reason", ""))
    print("core: %s" % " ".join(body["witness"].get("core", [])))
    return 1


def cmd_baseline(args, client) -> int:
    body = _post(client, "/baseline", {
        "config": _read_config(args.config),
        "coordinator": args.coordinator,
    })
    sys.stdout.write(body["report"])
    sys.stdout.write("\n[comparison]\n")
    for row in body["comparison"]["rows"]:
        print("%s consus=%s baseline=%s %s" % (
            row["tx"], row["consus_hops"], row["baseline_hops"],
            "ok" if row["beats"] else "NOT-BEATEN"))
    print("consus_beats_baseline = %s"
          % ("pass" if body["comparison"]["consus_beats_baseline"] else "FAIL"))
    return 0 if body["ok"] else 1


def cmd_rebalance(args, client) -> int:
    try:
        with open(args.mapfile, "r", encoding="utf-8") as fh:
            mapfile = fh.read()
    except OSError as exc:
        print(str(exc), file=sys.stderr)
        return 2
    body = _post(client, "/rebalance", {"mapfile": mapfile})
    sys.stdout.write(body["plan"])
    return 0


def _parse_seeds(spec: str):
    try:
        if ".." in spec:
            a, b = spec.split("..", 1)
            return int(a), int(b)
        n = int(spec)
        return n, n
    except ValueError:
        print("bad --seeds %r (want 'a..b' or a single seed)" % spec, file=sys.stderr)
        raise SystemExit(2) from None


def cmd_fuzz(args, client) -> int:
    start, end = _parse_seeds(args.seeds)
    body = _post(client, "/fuzz", {
        "config": _read_config(args.config),
        "seed_start": start,
        "seed_end": end,
    })
    sys.stdout.write(body["report"])
    if body["failures"] and args.witness_dir:
        os.makedirs(args.witness_dir, exist_ok=True)
        for f in body["failures"]:
            path = os.path.join(args.witness_dir, "seed%d.witness" % f["seed"])
            with open(path, "w", encoding="utf-8") as fh:
                fh.write(f["witness_config"])
                fh.write("\n# ---- report of the minimized scenario ----\n")
                fh.write("".join("# %s\n" % line for line in f["report"].splitlines()))
            print("witness: %s" % path, file=sys.stderr)
    elif body["failures"]:
        for f in body["failures"]:
            print(json.dumps({"seed": f["seed"], "checks": f["checks"]}), file=sys.stderr)
    return 0 if body["ok"] else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="consus-sim",
        description="Run, check, and fuzz simulated geo-replicated commit scenarios.",
    )
    p.add_argument("--server", default=None,
                   help="URL of a running service (default: in-process)")
    sub = p.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run one scenario and print its report")
    run_p.add_argument("config", help="config file path or bundled scenario name")
    run_p.add_argument("--trace", metavar="FILE", default=None,
                       help="also write the event trace to FILE")
    run_p.set_defaults(fn=cmd_run)

    check_p = sub.add_parser("check", help="re-check a trace for strict serializability")
    check_p.add_argument("trace", help="trace file from `run --trace`")
    check_p.set_defaults(fn=cmd_check)

    base_p = sub.add_parser("baseline", help="coordinator-commit hop model on the same workload")
    base_p.add_argument("config", help="config file path or bundled scenario name")
    base_p.add_argument("--coordinator", type=int, default=1,
                        help="which DC coordinates (default dc1)")
    base_p.set_defaults(fn=cmd_baseline)

    reb_p = sub.add_parser("rebalance", help="plan a partition-map change")
    reb_p.add_argument("mapfile", help="current map + target membership")
    reb_p.set_defaults(fn=cmd_rebalance)

    fuzz_p = sub.add_parser("fuzz", help="run seeded random scenarios")
    fuzz_p.add_argument("config", help="base config path or bundled scenario name")
    fuzz_p.add_argument("--seeds", default="0..199", help="seed range a..b (default 0..199)")
    fuzz_p.add_argument("--witness-dir", default=None,
                        help="directory for minimized failure witnesses")
    fuzz_p.set_defaults(fn=cmd_fuzz)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    with _client(args.server) as client:
        return args.fn(args, client)


if __name__ == "__main__":
    sys.exit(main())
