"""Command line entry point: ``gdod run | compare | descent-check | gen-data``.

Exit codes: 0 success, 1 every seed of some run failed, 2 bad config or
input, 3 a descent check failed. ``GDOD_OUTPUT_DIR`` overrides where ``run``
and ``descent-check`` write their files.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path

from . import plotting
from .data import SyntheticSpec, generate_synthetic, write_csv
from .descent import QuadraticProblem, descent_check
from .errors import ConfigError, InvalidInputError
from .experiment import (
    ExperimentConfig,
    compare,
    compare_csv,
    load_report,
    run_single,
    write_report,
)

EXIT_OK = 0
EXIT_RUN_FAILED = 1
EXIT_CONFIG = 2
EXIT_CHECK_FAILED = 3

OUTPUT_ENV = "GDOD_OUTPUT_DIR"


def _seed_list(text):
    try:
        return [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _output_dir(flag, fallback):
    return Path(os.environ.get(OUTPUT_ENV) or flag or fallback)


def _log(msg):
    print(msg, file=sys.stderr, flush=True)


# -- run ------------------------------------------------------------------------


def _run_overrides(args, config):
    overrides = {}
    if args.seed_list is not None:
        overrides["seeds"] = args.seed_list
    if args.epochs is not None:
        overrides["epochs"] = args.epochs
    if args.profile is not None:
        overrides["profile"] = args.profile
    opt = {k: v for k, v in (("kind", args.optimizer), ("lr", args.lr), ("batch_size", args.batch_size)) if v is not None}
    if opt:
        overrides["optimizer"] = {**config.raw["optimizer"], **opt}
    knobs = {k: v for k, v in (
        ("basis", args.basis), ("mask_rule", args.mask_rule), ("groups", args.groups), ("cagrad_c", args.cagrad_c),
    ) if v is not None}
    if args.combiner is not None or knobs:
        if args.combiner is not None:
            combiners = [{"name": name} for name in args.combiner]
        else:
            raw = config.raw["combiner"]
            combiners = [dict(c) if isinstance(c, dict) else {"name": c} for c in (raw if isinstance(raw, list) else [raw])]
        for c in combiners:
            c.update({k: v for k, v in knobs.items() if c["name"] in ("gdod", "wgdod") or k == "cagrad_c"})
        overrides["combiner"] = combiners
    return config.with_overrides(**overrides)


def cmd_run(args):
    config = _run_overrides(args, ExperimentConfig.load(args.config))
    out = _output_dir(args.out, config.output_dir)
    reports, timings = [], {}
    for entry in config.combiners:
        start = time.perf_counter()
        report = run_single(config, entry, progress=lambda label, seed, status: _log(f"{label} seed {seed}: {status}"))
        timings[entry.label] = time.perf_counter() - start
        path = write_report(report, out)
        _log(f"wrote {path}")
        reports.append(report)
        if not args.no_plots:
            plotting.plot_curves([report], path.parent / "auc.png", "test_auc")
            plotting.plot_curves([report], path.parent / "logloss.png", "test_logloss")

    # Wall-clock lives apart from the reports so that they stay reproducible byte for byte.
    (out / "timing.json").write_text(json.dumps(timings, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    labels = [r["label"] for r in reports]
    baseline = args.baseline if args.baseline in labels else None
    if len(reports) > 1 and baseline and all(r["summary"]["seeds_ok"] for r in reports):
        rows = compare(reports, baseline)
        (out / "compare.csv").write_text(compare_csv(rows), encoding="utf-8")
        if not args.no_plots:
            plotting.plot_compare(rows, out / "compare.png")
            plotting.plot_curves(reports, out / "auc.png", "test_auc")
            plotting.plot_curves(reports, out / "logloss.png", "test_logloss")
        print(compare_csv(rows), end="")
    for r in reports:
        s = r["summary"]
        if "final_test_auc_mean" in s:
            aucs = " ".join(f"{a:.4f}" for a in s["final_test_auc_mean"])
            print(f"{r['label']}: final test AUC {aucs} ({s['seeds_ok']} seeds)")
    failed = [r["label"] for r in reports if r["summary"]["seeds_ok"] == 0]
    if failed:
        for r in reports:
            for run in r["runs"]:
                if run["status"] != "ok":
                    _log(f"{r['label']} seed {run['seed']} failed: {run['reason']}")
        return EXIT_RUN_FAILED
    return EXIT_OK


# -- compare ----------------------------------------------------------------------


def cmd_compare(args):
    reports = [load_report(p) for p in args.inputs]
    rows = compare(reports, args.baseline)
    text = compare_csv(rows)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(text, encoding="utf-8")
    if not args.no_plots:
        plotting.plot_compare(rows, out.with_suffix(".png"))
    print(text, end="")
    return EXIT_OK


# -- descent-check ----------------------------------------------------------------


def cmd_descent(args):
    traces = []
    for seed in args.seed_list:
        problem = QuadraticProblem.random(seed, dim=args.dim)
        trace = descent_check(problem, args.gamma, args.steps)
        traces.append((seed, trace))
        status = "pass" if trace.passed else f"FAIL ({len(trace.violations)} violating steps, first at {trace.violations[0][0]})"
        print(f"seed {seed}: L={trace.lipschitz:.6g} gamma={trace.gamma:.6g} "
              f"loss {trace.losses[0]:.6g} -> {trace.losses[-1]:.6g}: {status}")
    out = os.environ.get(OUTPUT_ENV) or args.out
    if out:
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
        payload = [{
            "seed": seed, "passed": t.passed, "gamma": t.gamma, "lipschitz": t.lipschitz,
            "losses": t.losses, "shared_sq_norms": t.shared_sq_norms, "violations": t.violations,
        } for seed, t in traces]
        (out / "descent.json").write_text(json.dumps(payload, indent=1) + "\n", encoding="utf-8")
        if not args.no_plots:
            plotting.plot_descent(traces, out / "descent.png")
    return EXIT_OK if all(t.passed for _, t in traces) else EXIT_CHECK_FAILED


# -- gen-data -----------------------------------------------------------------------


def cmd_gen_data(args):
    try:
        with open(args.spec, encoding="utf-8") as fh:
            params = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read spec {args.spec}: {exc}") from exc
    try:
        spec = SyntheticSpec(**params)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
    ds = generate_synthetic(spec)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_csv(ds, out)
    print(f"wrote {ds.N} rows, {ds.F} features, {ds.K} tasks to {out}")
    return EXIT_OK


# -- parser -------------------------------------------------------------------------


def build_parser():
    parser = argparse.ArgumentParser(prog="gdod", description="Multi-task gradient combination experiments.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="train every configured combiner over every seed")
    p.add_argument("--config", required=True)
    p.add_argument("--combiner", nargs="+", help="replace the configured combiners by these names")
    p.add_argument("--seed-list", type=_seed_list)
    p.add_argument("--epochs", type=int)
    p.add_argument("--profile")
    p.add_argument("--optimizer", choices=("adam", "sgd"))
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--basis")
    p.add_argument("--mask-rule", choices=("all_agree", "literal_product"))
    p.add_argument("--groups", type=int)
    p.add_argument("--cagrad-c", type=float)
    p.add_argument("--baseline", default="sum", help="label used as the baseline of compare.csv")
    p.add_argument("--out", help="output directory (default: config output_dir)")
    p.add_argument("--no-plots", action="store_true")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("compare", help="AUC and gain table from saved reports")
    p.add_argument("--baseline", default="sum")
    p.add_argument("--inputs", nargs="+", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--no-plots", action="store_true")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("descent-check", help="full-batch GDOD descent bound on random quadratics")
    p.add_argument("--gamma", type=float, help="step size (default 1/L per problem)")
    p.add_argument("--steps", type=int, default=500)
    p.add_argument("--seed-list", type=_seed_list, default=[0])
    p.add_argument("--dim", type=int, default=10)
    p.add_argument("--out")
    p.add_argument("--no-plots", action="store_true")
    p.set_defaults(func=cmd_descent)

    p = sub.add_parser("gen-data", help="write a synthetic dataset as CSV")
    p.add_argument("--spec", required=True, help="JSON object with N, F, K, rho, alpha, seed, signal")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_data)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, InvalidInputError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
