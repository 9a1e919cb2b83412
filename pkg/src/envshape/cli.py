"""Command-line entry point ``envshape``."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import io as eio
from .abstraction import analyze_abstraction
from .envs import EpisodicEnvConfig, build_env, builtin_abstraction, to_tabular
from .experiment import (
    PRESETS,
    aggregate,
    format_summary,
    load_config,
    preset,
    run_experiment,
    write_aggregate,
)
from .guarantees import LEMMA_IDS, format_reports, verify_all
from .shaping import ShapingConfig, shape_environment


def _cmd_run(args) -> int:
    if args.config:
        cfg = load_config(args.config)
    else:
        cfg = preset(args.preset)
    if args.runs is not None:
        cfg.runs = args.runs
    if args.iterations is not None:
        cfg.train = cfg.train.replace(iterations=args.iterations)
    if args.output_dir is not None:
        cfg.output_dir = args.output_dir
    if args.workers is not None:
        cfg.workers = args.workers
    res = run_experiment(cfg)
    print(format_summary(res.summary))
    print(f"curves: {res.curves_path}")
    return 1 if res.violations else 0


def _cmd_aggregate(args) -> int:
    rows = aggregate(args.files)
    if args.out:
        write_aggregate(rows, args.out)
    print(f"{'method':<18} {'iteration':>9} {'runs':>5} {'disc. mean':>11} {'stderr':>9}")
    for r in rows:
        if args.every and r["iteration"] % args.every:
            continue
        print(f"{r['method']:<18} {r['iteration']:>9d} {r['runs']:>5d} "
              f"{r['mean_discounted_return']:>11.4f} {r['stderr_discounted_return']:>9.4f}")
    return 0


def _cmd_shape(args) -> int:
    m = eio.load_mdp(args.mdp)
    phi = eio.load_abstraction(args.abstraction)
    pi = eio.load_policy(args.policy) if args.policy else None
    cfg = ShapingConfig(mode=args.mode, delta=args.delta, teach_norm=args.teach_norm,
                        teach_strategy=args.teach_strategy)
    shaped, report = shape_environment(m, phi, pi, cfg)
    eio.save_mdp(args.out, shaped)
    text = json.dumps(report.as_dict(), indent=1)
    if args.report:
        Path(args.report).write_text(text + "\n")
    else:
        print(text)
    return 0


def _cmd_verify(args) -> int:
    reports = verify_all(args.trials, args.seed, args.which)
    print(format_reports(reports))
    bad = [r for r in reports if r.violations]
    for r in bad:
        print(f"{r.lemma}: worst case {json.dumps(r.worst_case)}")
    return 1 if bad else 0


def _cmd_analyze(args) -> int:
    m = eio.load_mdp(args.mdp)
    phi = eio.load_abstraction(args.abstraction)
    pi = eio.load_policy(args.policy) if args.policy else None
    rep = analyze_abstraction(m, phi, pi).as_dict()
    width = max(len(k) for k in rep)
    for k, v in rep.items():
        print(f"{k:<{width}}  {v}")
    print(json.dumps(rep))
    return 0


def _env_config(args) -> EpisodicEnvConfig:
    if args.config:
        return EpisodicEnvConfig.from_dict(json.loads(Path(args.config).read_text()))
    kw = {}
    if args.n_cells is not None:
        kw["n_cells"] = args.n_cells
        kw["plus_offset"] = min(4, args.n_cells - 2)
    return EpisodicEnvConfig.gathering(**kw) if args.env == "gathering" else EpisodicEnvConfig.catcher(**kw)


def _cmd_export(args) -> int:
    cfg = _env_config(args)
    env = build_env(cfg)
    m, codec = to_tabular(env)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    eio.save_mdp(out / "mdp.json", m)
    eio.save_abstraction(out / "abstraction.json", builtin_abstraction(env, codec))
    (out / "codec.json").write_text(codec.to_json() + "\n")
    (out / "env.json").write_text(json.dumps(cfg.to_dict(), indent=1) + "\n")
    print(f"{m.n_states} states, {m.n_actions} actions, encoding length {env.encoding_length} -> {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="envshape", description="Abstraction-based environment shaping.")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="train all methods over several seeds")
    src = r.add_mutually_exclusive_group(required=True)
    src.add_argument("--config", help="experiment config JSON")
    src.add_argument("--preset", choices=PRESETS)
    r.add_argument("--runs", type=int)
    r.add_argument("--iterations", type=int)
    r.add_argument("--output-dir")
    r.add_argument("--workers", type=int)
    r.set_defaults(fn=_cmd_run)

    a = sub.add_parser("aggregate", help="mean and stderr per method and iteration")
    a.add_argument("files", nargs="+")
    a.add_argument("--out", help="write the aggregate CSV here")
    a.add_argument("--every", type=int, default=0, help="print only every k-th iteration")
    a.set_defaults(fn=_cmd_aggregate)

    s = sub.add_parser("shape", help="shape an MDP through an abstraction")
    s.add_argument("--mdp", required=True)
    s.add_argument("--abstraction", required=True)
    s.add_argument("--policy")
    s.add_argument("--mode", default="full", choices=["full", "reward-only", "dynamics-only"])
    s.add_argument("--delta", type=float)
    s.add_argument("--teach-norm", default="sup", choices=["sup", "l1"])
    s.add_argument("--teach-strategy", default="lp", choices=["lp", "boost"])
    s.add_argument("--out", required=True)
    s.add_argument("--report")
    s.set_defaults(fn=_cmd_shape)

    v = sub.add_parser("verify-bounds", help="check the bounds on random instances")
    v.add_argument("--which", default="all", choices=("all",) + LEMMA_IDS)
    v.add_argument("--trials", type=int, default=1000)
    v.add_argument("--seed", type=int, default=0)
    v.set_defaults(fn=_cmd_verify)

    z = sub.add_parser("analyze-abstraction", help="irrelevance coefficients of an abstraction")
    z.add_argument("--mdp", required=True)
    z.add_argument("--abstraction", required=True)
    z.add_argument("--policy")
    z.set_defaults(fn=_cmd_analyze)

    e = sub.add_parser("export-mdp", help="write the tabular model of a benchmark task")
    e.add_argument("--config", help="environment config JSON")
    e.add_argument("--env", default="gathering", choices=["gathering", "catcher"])
    e.add_argument("--n-cells", type=int)
    e.add_argument("--out-dir", required=True)
    e.set_defaults(fn=_cmd_export)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ValueError, FileNotFoundError, KeyError) as exc:
        print(f"envshape: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
