"""Command-line front end: validate, run, sweep and compare scenarios.

Exit status is 0 on success, 1 when the scenario does not validate and 2 when
the run aborts or outputs cannot be written. ``UASR_LOG_LEVEL`` sets logging
verbosity (default WARNING).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence

from . import __version__
from .engine import run
from .errors import ScenarioError, SimulationAbort, UasrError
from .metrics import RECORD_SCHEMA_VERSION, rounded, summary_text, write_records
from .scenario import MODES, Scenario, digest, load, validate

EXIT_OK, EXIT_INVALID, EXIT_ABORT = 0, 1, 2
LOG_ENV = "UASR_LOG_LEVEL"

log = logging.getLogger("uasr")


@dataclass
class RunManifest:
    scenario_digest: str
    seeds: List[int]
    tool_version: str = __version__
    outputs: List[str] = field(default_factory=list)

    def to_json(self) -> str:
        doc = {
            "record_schema": RECORD_SCHEMA_VERSION,
            "scenario_digest": self.scenario_digest,
            "seeds": self.seeds,
            "tool_version": self.tool_version,
            "outputs": sorted(self.outputs),
        }
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def apply_overrides(scn: Scenario, mode: Optional[str] = None, dt: Optional[float] = None) -> Scenario:
    """Mode and tick overrides, re-validated like the file itself."""
    if mode is not None:
        scn = replace(scn, mode=mode)
    if dt is not None:
        scn = replace(scn, engine=replace(scn.engine, dt=dt))
    if mode is not None or dt is not None:
        errors, warnings = validate(scn)
        if errors:
            raise ScenarioError(errors)
        scn.warnings = warnings
    return scn


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def run_one(scn: Scenario, seed: int, out: Path, fmt: str = "records", tag: str = "") -> Dict:
    """Run one replication and write its file pair; returns the summary."""
    report = run(scn, seed, keep_records=(fmt == "records"))
    summary = dict(report.summary, scenario_digest=digest(scn))
    stem = f"{tag}seed{seed}"
    files = []
    if fmt == "records":
        p = out / f"records_{stem}.csv"
        p.parent.mkdir(parents=True, exist_ok=True)
        with open(p, "w", encoding="utf-8", newline="") as fh:
            write_records(report.records, fh)
        files.append(p.name)
    p = out / f"summary_{stem}.json"
    _write(p, summary_text(summary))
    files.append(p.name)
    return {"summary": summary, "files": files}


def _job(args):
    scn, seed, out, fmt = args
    return run_one(scn, seed, Path(out), fmt)


def aggregate(summaries: Sequence[dict]) -> dict:
    """Mean, min and max of the headline numbers across replications."""

    def stats(vals):
        return {"mean": sum(vals) / len(vals), "min": min(vals), "max": max(vals)} if vals else {}

    keys = ("offered_bytes", "delivered_bytes", "dropped_bytes", "outage_probability", "throughput_bps", "per_proxy")
    out = {
        "seeds": [s["seed"] for s in summaries],
        "totals": {k: stats([s["totals"][k] for s in summaries]) for k in keys},
        "handovers_total": stats([s["handovers_total"] for s in summaries]),
        "delay_max_ms": stats([s["totals"]["delay"].get("max_ms", 0.0) for s in summaries]),
    }
    return out


def compare_summaries(uasr: dict, baseline: dict) -> dict:
    a, b = uasr["handovers_total"], baseline["handovers_total"]
    pick = ("handovers", "handovers_total", "events", "totals")
    return {
        "uasr": {k: uasr[k] for k in pick},
        "cellular-baseline": {k: baseline[k] for k in pick},
        "handover_counts": {"uasr": a, "cellular-baseline": b, "uasr_strictly_lower": a < b},
    }


# ------------------------------------------------------------------ commands


def cmd_validate(args) -> int:
    scn = load(args.scenario)
    if args.strict:
        scn = replace(scn, world=replace(scn.world, strict_preset=True))
        scn.warnings = validate(scn)[1]
    for w in scn.warnings:
        print(f"warning: {w}", file=sys.stderr)
    print(f"ok {scn.name} digest={digest(scn)}")
    return EXIT_OK


def cmd_run(args) -> int:
    scn = apply_overrides(load(args.scenario), args.mode, args.dt)
    for w in scn.warnings:
        log.warning("%s", w)
    out = Path(args.out)
    log.info("run %s seed=%d dt=%s", scn.name, args.seed, scn.engine.dt)
    res = run_one(scn, args.seed, out, args.format)
    man = RunManifest(digest(scn), [args.seed], outputs=res["files"] + ["manifest.json"])
    _write(out / "manifest.json", man.to_json())
    s = res["summary"]
    print(f"{scn.name}: {s['ticks']} ticks, {s['handovers_total']} handovers, "
          f"outage {s['totals']['outage_probability']:.6f}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    scn = apply_overrides(load(args.scenario), args.mode, args.dt)
    out = Path(args.out)
    seeds = sorted(set(args.seeds))
    jobs = [(scn, s, str(out), args.format) for s in seeds]
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as ex:
            results = list(ex.map(_job, jobs))
    else:
        results = [_job(j) for j in jobs]
    agg = aggregate([r["summary"] for r in results])
    _write(out / "aggregate.json", json.dumps(rounded(agg), indent=2, sort_keys=True) + "\n")
    files = [f for r in results for f in r["files"]] + ["aggregate.json", "manifest.json"]
    _write(out / "manifest.json", RunManifest(digest(scn), seeds, outputs=files).to_json())
    print(f"{len(seeds)} replications written to {out}")
    return EXIT_OK


def cmd_compare(args) -> int:
    base = apply_overrides(load(args.scenario), None, args.dt)
    out = Path(args.out)
    files = []
    summaries = {}
    for mode in MODES:
        scn = apply_overrides(base, mode)
        res = run_one(scn, args.seed, out, args.format, tag=f"{mode}_")
        summaries[mode] = res["summary"]
        files += res["files"]
    cmp = compare_summaries(summaries["uasr"], summaries["cellular-baseline"])
    _write(out / "comparison.json", json.dumps(rounded(cmp), indent=2, sort_keys=True) + "\n")
    files += ["comparison.json", "manifest.json"]
    _write(out / "manifest.json", RunManifest(digest(base), [args.seed], outputs=files).to_json())
    h = cmp["handover_counts"]
    print(f"handovers: uasr {h['uasr']}, cellular-baseline {h['cellular-baseline']}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="uasr", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    v = sub.add_parser("validate", help="check a scenario file")
    v.add_argument("scenario")
    v.add_argument("--strict", action="store_true", help="warn on departures from the UAS-R parameter preset")
    v.set_defaults(func=cmd_validate)

    def common(sp, seeds=False):
        sp.add_argument("scenario")
        if seeds:
            sp.add_argument("--seeds", type=int, nargs="+", required=True)
            sp.add_argument("--jobs", type=int, default=1)
        else:
            sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--out", default="out")
        sp.add_argument("--dt", type=float, default=None, help="tick override (s)")
        sp.add_argument("--format", choices=("records", "summary-only"), default="records")

    r = sub.add_parser("run", help="single run")
    common(r)
    r.add_argument("--mode", choices=MODES, default=None)
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("sweep", help="one run per seed plus an aggregate")
    common(s, seeds=True)
    s.add_argument("--mode", choices=MODES, default=None)
    s.set_defaults(func=cmd_sweep)

    c = sub.add_parser("compare", help="uasr against the trackside cellular baseline")
    common(c)
    c.set_defaults(func=cmd_compare)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    level = getattr(logging, os.environ.get(LOG_ENV, "WARNING").upper(), logging.WARNING)
    logging.basicConfig(format="%(levelname)s %(name)s: %(message)s")
    log.setLevel(level if isinstance(level, int) else logging.WARNING)
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ScenarioError as exc:
        for path, reason in exc.errors:
            print(f"error: {path}: {reason}", file=sys.stderr)
        return EXIT_INVALID
    except (SimulationAbort, OSError) as exc:
        print(f"abort: {exc}", file=sys.stderr)
        return EXIT_ABORT
    except UasrError as exc:
        print(f"abort: {exc}", file=sys.stderr)
        return EXIT_ABORT


if __name__ == "__main__":
    sys.exit(main())
