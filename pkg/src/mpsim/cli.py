"""Command line front end.

    mpsim adapt   --in prog.mpel --out prog.sealed [--seed N]
    mpsim verify  --in prog.sealed
    mpsim run     --scenario FILE|NAME [--json] [--log] [--out FILE]
    mpsim explore --scenario FILE|NAME [--depth N] [--max-runs N]
    mpsim report  --metrics FILE [--weights FILE]
"""

from __future__ import annotations

import argparse
import json
import sys

from . import adapter, harness, imagefmt, sealing


def _load_scenario(ref: str) -> tuple[dict, str]:
    known = harness.corpus()
    if ref in known:
        return known[ref], ref
    try:
        with open(ref, encoding="utf-8") as fh:
            return json.load(fh), ref.rsplit("/", 1)[-1]
    except OSError as err:
        raise SystemExit(f"error: cannot read scenario {ref!r}: {err.strerror}")
    except json.JSONDecodeError as err:
        raise SystemExit(f"error: scenario {ref!r} is not valid JSON: {err}")


def _cmd_adapt(args) -> int:
    with open(args.infile, "rb") as fh:
        blob = fh.read()
    keys = sealing.keygen(args.seed)
    sealed = adapter.adapt(blob, keys)
    with open(args.outfile, "wb") as fh:
        fh.write(sealed)
    print(f"adapted {args.infile} -> {args.outfile} "
          f"({len(blob)} -> {len(sealed)} bytes)")
    return 0


def _cmd_verify(args) -> int:
    with open(args.infile, "rb") as fh:
        blob = fh.read()
    try:
        report = adapter.verify_adapted(blob)
    except (adapter.AdapterError, sealing.TagMismatch) as err:
        print(f"REJECTED: {err}")
        return 1
    print(f"OK: entry=0x{report.original_entry:x} "
          f"trampoline=0x{report.trampoline_va:x} "
          f"load_pages={report.load_page_count}")
    return 0


def _cmd_run(args) -> int:
    scenario, name = _load_scenario(args.scenario)
    try:
        result = harness.run_scenario(scenario, name)
    except (harness.ScenarioError, adapter.AdapterError, sealing.TagMismatch,
            sealing.BadMetadataSignature, imagefmt.ImageFormatError) as err:
        print(f"REJECTED: {err}")
        return 1
    if args.json:
        json.dump(result.to_dict(), sys.stdout, indent=2)
        print()
    else:
        print(f"scenario {result.name}: {result.steps} steps, "
              f"deadlocked={result.deadlocked}")
        for pid, proc in sorted(result.processes.items()):
            status = (f"killed ({proc['killed']})" if proc["killed"]
                      else f"exit={proc['exit_code']}")
            print(f"  pid {pid} {proc['name']}: {status}")
            if proc["stdout"]:
                for line in proc["stdout"].decode("latin1").splitlines():
                    print(f"    | {line}")
        if result.attacks:
            print(f"  attacks recorded: {len(result.attacks)}")
    if args.log:
        sys.stdout.write("\n".join(result.log_lines) + "\n")
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            json.dump(result.to_dict(), fh, indent=2)
    return 0


def _cmd_explore(args) -> int:
    scenario, name = _load_scenario(args.scenario)
    result = harness.explore(scenario, depth=args.depth,
                             max_runs=args.max_runs)
    print(f"explored {len(result.runs)} schedules of {name} "
          f"(depth {args.depth})")
    for viol in result.violations:
        print(f"  VIOLATION: blocked threads {viol.blocked} "
              f"after choices {list(viol.choices)}")
    if not result.violations:
        print("  no lost wakeups found")
    return 1 if result.violations else 0


def _cmd_report(args) -> int:
    with open(args.metrics, encoding="utf-8") as fh:
        payload = json.load(fh)
    metrics = payload.get("metrics", payload)
    weights = None
    if args.weights:
        with open(args.weights, encoding="utf-8") as fh:
            weights = json.load(fh)
    report = harness.cycle_report(metrics, weights)
    width = max(len(r["event"]) for r in report["rows"]) if report["rows"] else 8
    for row in report["rows"]:
        print(f"{row['event']:<{width}}  x{row['count']:<8} "
              f"@{row['cycles_each']:<6} = {row['cycles']}")
    print(f"{'total':<{width}}  {report['total_cycles']} cycles")
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="mpsim")
    sub = parser.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("adapt", help="seal a program image")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", dest="outfile", required=True)
    p.add_argument("--seed", type=int, default=7)
    p.set_defaults(fn=_cmd_adapt)

    p = sub.add_parser("verify", help="check a sealed image end to end")
    p.add_argument("--in", dest="infile", required=True)
    p.set_defaults(fn=_cmd_verify)

    p = sub.add_parser("run", help="run a scenario file or corpus name")
    p.add_argument("--scenario", required=True)
    p.add_argument("--json", action="store_true")
    p.add_argument("--log", action="store_true")
    p.add_argument("--out")
    p.set_defaults(fn=_cmd_run)

    p = sub.add_parser("explore", help="enumerate thread interleavings")
    p.add_argument("--scenario", required=True)
    p.add_argument("--depth", type=int, default=6)
    p.add_argument("--max-runs", type=int, default=512)
    p.set_defaults(fn=_cmd_explore)

    p = sub.add_parser("report", help="cycle cost model over run metrics")
    p.add_argument("--metrics", required=True)
    p.add_argument("--weights")
    p.set_defaults(fn=_cmd_report)

    args = parser.parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
