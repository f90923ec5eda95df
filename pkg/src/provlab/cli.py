"""provlab command line: run, sweep, gen-env, solve."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import harness
from .environments import GuardrailError, generate, load_spec
from .mdp import ModelError, dump_model, load_model, optimal_policy, solve_exact


def _cmd_run(args) -> int:
    cfg = harness.load_config(args.config)
    if args.output:
        cfg.output = args.output
    return harness.run(cfg)


def _cmd_sweep(args) -> int:
    cfg = harness.load_config(args.config)
    if args.output:
        cfg.output = args.output
    return harness.sweep(cfg)


def _cmd_gen_env(args) -> int:
    spec = load_spec(args.spec)
    model, dist = generate(spec)
    doc = dump_model(model)
    doc["instance_distribution"] = {str(i): float(w) for i, w in enumerate(dist.weights) if w > 0}
    Path(args.output).write_text(json.dumps(doc))
    print(f"wrote {args.output}: {model.n_states} states, {model.max_actions} actions, horizon {model.horizon}")
    return 0


def _cmd_solve(args) -> int:
    model = load_model(Path(args.model).read_text())
    if args.horizon is not None:
        model = model.with_horizon(args.horizon)
    tables = solve_exact(model)
    pol = optimal_policy(model, tables)
    B = model.horizon
    out = {
        "horizon": B,
        "states": [str(s) for s in model.states],
        "v_star": tables.v_star.tolist(),
        "argmax": tables.argmax.tolist(),
    }
    if args.json:
        print(json.dumps(out))
    else:
        print("state,v_star_B,best_action")
        for i, s in enumerate(model.states):
            a = int(np.argmax(pol.probs[B, i]))
            print(f"{s},{float(tables.v_star[B, i])!r},{model.action_labels[i][a]}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="provlab", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run a bound-verification experiment")
    r.add_argument("config")
    r.add_argument("-o", "--output", help="override the output prefix")
    r.set_defaults(fn=_cmd_run)
    s = sub.add_parser("sweep", help="run a scaling sweep and fit the log-log slope")
    s.add_argument("config")
    s.add_argument("-o", "--output")
    s.set_defaults(fn=_cmd_sweep)
    g = sub.add_parser("gen-env", help="generate an environment model from a spec")
    g.add_argument("spec")
    g.add_argument("-o", "--output", required=True)
    g.set_defaults(fn=_cmd_gen_env)
    v = sub.add_parser("solve", help="solve a model file exactly")
    v.add_argument("model")
    v.add_argument("--horizon", type=int)
    v.add_argument("--json", action="store_true")
    v.set_defaults(fn=_cmd_solve)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.fn(args)
    except (harness.ConfigError, GuardrailError, ModelError, FileNotFoundError) as e:
        print(f"provlab: error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
