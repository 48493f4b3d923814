"""Command-line entry point: ``qvote <subcommand> ...``.

Exit status is 1 whenever an invariant check fails, 2 on usage errors.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys

import numpy as np

from . import adversary as adv
from .coincidence import (
    ChannelMap,
    StreamConfig,
    generate_stream,
    iter_stream_file,
    process_stream,
    write_stream,
)
from .harness import ExperimentConfig, run_experiment, verify_properties


def _config(args, **overrides) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config).to_dict() if args.config else {}
    for key, val in overrides.items():
        if val is not None:
            cfg[key] = val
    return ExperimentConfig.from_dict(cfg)


def _finish(result, args) -> int:
    summary = result.summary()
    if args.out:
        result.write(args.out)
    print(json.dumps({"outcome": summary["outcome"], "invariants": summary["invariants"],
                      "invariants_ok": summary["invariants_ok"]}, indent=2, default=str))
    return 0 if result.ok else 1


def cmd_elect(args) -> int:
    source = None
    if args.source == "ideal":
        source = {"kind": "ideal"}
    elif args.source == "werner":
        source = {"kind": "werner", "fidelity": args.fidelity}
    elif args.source == "dephasing":
        source = {"kind": "dephasing", "sigma": args.sigma}
    cfg = _config(
        args,
        mode="coincidence" if args.via_stream else None,
        intents=args.intents,
        n_agents=len(args.intents) if args.intents else None,
        source=source,
        rounds=args.rounds,
        m=args.m,
        tau=args.tau,
        master_seed=args.seed,
        workers=args.workers,
    )
    return _finish(run_experiment(cfg), args)


def cmd_attack(args) -> int:
    cfg = _config(args, mode="attack", scenario=args.scenario, trials=args.trials, rounds=args.rounds,
                  master_seed=args.seed)
    result = run_experiment(cfg)
    rc = _finish(result, args)
    if result.audit:
        print(json.dumps({k: v for k, v in result.audit.items() if k != "arms"} | {
            "arms": [{k: a[k] for k in ("intent", "p_value", "mi_bits", "mi_ci95", "exact_mi_bits", "leak")}
                     for a in result.audit.get("arms", [])]
        }, indent=2))
    return rc


def cmd_verify(args) -> int:
    results = verify_properties(args.seed)
    for name, ok, detail in results:
        print(f"{'PASS' if ok else 'FAIL'}  {name:32s} {detail}")
    return 0 if all(ok for _, ok, _ in results) else 1


def cmd_coincidence_generate(args) -> int:
    cfg = StreamConfig(
        fourfold_rate_hz=args.rate_hz,
        dark_rate_hz=args.dark_hz,
        jitter_ps=args.jitter_ps,
        window_ps=args.window_ps,
        duration_s=args.duration_s,
    )
    cmap = ChannelMap.agent_major()
    gen = generate_stream(cfg, seed=args.seed, channel_map=cmap)
    write_stream(args.output, gen.events, cmap)
    if args.truth:
        np.save(args.truth, gen.truth)
    print(json.dumps({"events": int(gen.events.size), "planted": int(gen.truth.size),
                      "duration_s": gen.duration_ps / 1e12, "output": args.output}))
    return 0


def cmd_coincidence_filter(args) -> int:
    cmap, chunks = iter_stream_file(args.input, args.chunk)
    fourfolds, pipe = process_stream(chunks, args.window_ps, cmap)
    out = open(args.output, "w", encoding="utf-8") if args.output else sys.stdout
    try:
        for row in fourfolds:
            out.write(json.dumps({"channels": row["channel"].tolist(), "t_ps": row["t"].tolist()},
                                 separators=(",", ":")) + "\n")
    finally:
        if args.output:
            out.close()
    print(json.dumps({"fourfolds": int(fourfolds.size), "vetoed": pipe.vetoed, "survivors": pipe.survivors,
                      "peak_buffer": pipe.peak_buffer}), file=sys.stderr)
    return 0


def cmd_report(args) -> int:
    with open(args.summary, encoding="utf-8") as fh:
        s = json.load(fh)
    cfg = s["config"]
    print(f"mode={cfg['mode']} source={cfg['source']} rounds={cfg['rounds']} seed={cfg['master_seed']}")
    if s.get("outcome"):
        o = s["outcome"]
        print(f"status: {o['status']}   votes E={o['votes']['E']} F={o['votes']['F']}   "
              f"pass rate: {o['verification_pass_rate']}")
    for rep in s["reports"]:
        est = rep["estimate"]
        est = "n/a" if est is None else f"{est:.6g}"
        print(f"  [{rep['status']:>17s}] {rep['metric']}: {est}")
        for ref in rep["references"]:
            print(f"      ref {ref['value']} ({ref['provenance']}) {ref['note']}")
        for note in rep["notes"]:
            print(f"      - {note}")
    for name, ok in s["invariants"].items():
        print(f"  {'PASS' if ok else 'FAIL'} {name}")
    if s.get("audit"):
        print(f"  audit: leak={s['audit'].get('leak')} {s['audit'].get('refused', '')}")
    return 0 if s.get("invariants_ok", True) else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="qvote", description="Anonymous voting over GHZ-family states: simulator and audits")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    e = sub.add_parser("elect", help="run an election")
    e.add_argument("--config")
    e.add_argument("--intents", help="one letter (E/F) per agent, e.g. EFEF")
    e.add_argument("--source", choices=["ideal", "werner", "dephasing"])
    e.add_argument("--fidelity", type=float, default=0.89)
    e.add_argument("--sigma", type=float, default=0.1)
    e.add_argument("--rounds", type=int)
    e.add_argument("--m", type=int)
    e.add_argument("--tau", type=float)
    e.add_argument("--seed", type=int)
    e.add_argument("--workers", type=int)
    e.add_argument("--via-stream", action="store_true", help="route events through the coincidence pipeline")
    e.add_argument("--out", help="directory for transcript.jsonl and summary.json")
    e.set_defaults(func=cmd_elect)

    a = sub.add_parser("attack", help="adversary run plus anonymity audit")
    a.add_argument("scenario", choices=adv.SCENARIOS)
    a.add_argument("--config")
    a.add_argument("--trials", type=int)
    a.add_argument("--rounds", type=int)
    a.add_argument("--seed", type=int)
    a.add_argument("--out")
    a.set_defaults(func=cmd_attack)

    v = sub.add_parser("verify-properties", help="run the invariant suite")
    v.add_argument("--seed", type=int, default=7)
    v.set_defaults(func=cmd_verify)

    c = sub.add_parser("coincidence", help="generate or filter time-tag streams")
    csub = c.add_subparsers(dest="action", required=True)
    g = csub.add_parser("generate")
    g.add_argument("output")
    g.add_argument("--window-ps", type=int, default=1000)
    g.add_argument("--dark-hz", type=float, default=300.0)
    g.add_argument("--duration-s", type=float, default=10.0)
    g.add_argument("--rate-hz", type=float, default=0.3, help="planted fourfold rate")
    g.add_argument("--jitter-ps", type=float, default=50.0)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--truth", help="save planted fourfolds as .npy")
    g.set_defaults(func=cmd_coincidence_generate)
    f = csub.add_parser("filter")
    f.add_argument("input")
    f.add_argument("--window-ps", type=int, default=1000)
    f.add_argument("--chunk", type=int, default=1 << 20)
    f.add_argument("--output", help="JSON-lines fourfold list (default stdout)")
    f.set_defaults(func=cmd_coincidence_filter)

    r = sub.add_parser("report", help="render a summary.json")
    r.add_argument("summary")
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
