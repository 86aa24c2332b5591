"""Command-line driver: ``perwave run | verify | inspect``.

Exit codes: 0 ok (including gate skips), 1 a check or computation failed, 2 configuration error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .config import STAGES, load_config
from .errors import ConfigError

EXIT_OK, EXIT_FAILED, EXIT_CONFIG = 0, 1, 2


def _stages(text: str | None):
    if not text or text == "all":
        return STAGES
    out = tuple(s.strip() for s in text.split(",") if s.strip())
    bad = [s for s in out if s not in STAGES]
    if bad:
        raise ConfigError(f"unknown stages {bad}; known: {list(STAGES)}")
    return out


def cmd_run(args) -> int:
    from .pipeline import run_pipeline

    try:
        cfg = load_config(args.config)
        stages = _stages(args.stages)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.out:
        from dataclasses import replace
        cfg = replace(cfg, output=replace(cfg.output, directory=args.out))
    report, status = run_pipeline(cfg, stages, args.jobs)
    for e in report["gate_ledger"]:
        tag = e["status"] if e["status"] != "ran" else ("ok" if e.get("passed") in (True, None) else "FAILED")
        text = e.get("detail") or e.get("reason", "")
        if e.get("fallback"):
            text += "; " + e["fallback"]
        print(f"{tag:8s} {e['check']}: {text}")
    print(f"report: {cfg.out_dir / 'report.json'}")
    return status


def cmd_verify(args) -> int:
    from .acceptance import SUITES, run_suite

    name = args.suite
    if name not in SUITES and name != "all":
        print(f"config error: unknown suite {name!r}; known: {sorted(SUITES)} or 'all'", file=sys.stderr)
        return EXIT_CONFIG
    results = run_suite(name)
    failed = False
    for r in results:
        print(r.line())
        failed |= r.passed is False
    skipped = [r for r in results if r.passed is None]
    if skipped:
        fallback = next((r for r in results if r.number == 13), None)
        note = "rate checks skipped: gate failed"
        if fallback is not None:
            note += "; fallback growth-match ran and " + ("passed" if fallback.passed else "failed")
        print(note)
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        doc = [{"number": r.number, "title": r.title, "status": r.status, "measured": r.measured,
                "detail": r.detail, "seconds": r.seconds} for r in results]
        (Path(args.out) / f"verify_{name}.json").write_text(json.dumps(doc, indent=2, default=str))
    return EXIT_FAILED if failed else EXIT_OK


def cmd_inspect(args) -> int:
    path = Path(args.path)
    target = path / "report.json" if path.is_dir() else path
    if not target.exists():
        print(f"config error: {target} not found", file=sys.stderr)
        return EXIT_CONFIG
    doc = json.loads(target.read_text())
    if "provenance" in doc:
        prov = doc["provenance"]
        print(f"config {prov['config_hash'][:12]}  version {prov['code_version']}  stages {prov['stages']}")
        if "profile" in doc:
            p = doc["profile"]
            print(f"profile: X = {p['X']:.12g}, s = {p['s']:.3g}, residual = {p['residual']:.2e}")
        if "verdict" in doc:
            print("verdict: " + ", ".join(f"{k} {v['status']}" for k, v in doc["verdict"].items() if k != "overall"))
        for e in doc.get("gate_ledger", []):
            print(f"  {e['status']:8s} {e['check']}")
    else:
        print(json.dumps(doc, indent=2)[:4000])
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="perwave", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run pipeline stages from a config file")
    r.add_argument("--config", required=True)
    r.add_argument("--stages", default="all", help=f"comma list from {','.join(STAGES)} or 'all'")
    r.add_argument("--out", default=None)
    r.add_argument("--jobs", type=int, default=1)
    r.set_defaults(func=cmd_run)
    v = sub.add_parser("verify", help="run an acceptance suite")
    v.add_argument("suite", help="identities, structure, rates or all")
    v.add_argument("--out", default=None)
    v.add_argument("--jobs", type=int, default=1)
    v.set_defaults(func=cmd_verify)
    i = sub.add_parser("inspect", help="summarise a report or run directory")
    i.add_argument("path")
    i.set_defaults(func=cmd_inspect)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
