"""Command-line entry point.

Subcommands: plan, simulate, validate, metrics, profile-gen.  Machine output
goes to files (deterministic schema-1 JSON, see io), human summaries to
stdout.  Exit codes: 0 success, 1 no-feasible-plan or validation disagreement,
2 malformed input.
"""
from __future__ import annotations

import argparse
import sys
from dataclasses import replace

from . import io
from .cluster import GIB, synthesize_profile
from .errors import InfeasibleError, ProfileLookupError, ValidationError
from .instances import random_instance
from .metrics import hetero_speedup_ratio, load_series, mean_relative_error
from .search import brute_force_oracle, search_plan, two_stage_search
from .simulator import CommConfig, export_trace, simulate_iteration, trace_metrics


def _build_parser() -> argparse.ArgumentParser:
    top = argparse.ArgumentParser(
        prog="heteroplan",
        description="Pipeline-parallel planning and simulation for mixed-chip clusters. "
        "All files use the schema-1 JSON layout (top-level \"schema\": 1).",
    )
    sub = top.add_subparsers(dest="command", required=True)

    plan = sub.add_parser("plan", help="search the best parallel plan for a cluster")
    plan.add_argument("--cluster", required=True, help="cluster spec file")
    plan.add_argument("--profile", required=True, help="profile table file")
    plan.add_argument("--workload", required=True, help="workload spec file")
    plan.add_argument("--two-stage", action="store_true", help="refine with grouped chip types")
    plan.add_argument("--group-size", type=int, default=128, help="chips per group (default 128)")
    plan.add_argument(
        "--alpha",
        type=float,
        default=None,
        help="bubble coefficient (default 1.0, or the workload file's value)",
    )
    plan.add_argument("--workers", type=int, default=1, help="concurrent dp candidates")
    plan.add_argument("--out", default=None, help="write the plan as JSON")
    plan.add_argument("--breakdown-out", default=None, help="write the cost breakdown as JSON")

    sim = sub.add_parser("simulate", help="simulate one 1F1B iteration of a plan")
    sim.add_argument("--plan", required=True, help="plan file")
    sim.add_argument("--profile", required=True, help="profile table file")
    sim.add_argument("--comm", default=None, help="comm config file (default: zero communication)")
    sim.add_argument("--overlap", type=float, default=0.0, help="transfer fraction hidden by compute")
    sim.add_argument("--trace-out", default=None, help="write a Trace Event Format file")

    val = sub.add_parser("validate", help="cross-check the search against exhaustive enumeration")
    val.add_argument("--seed", type=int, default=0, help="instance seed")
    val.add_argument("--workers", type=int, default=1, help="concurrent dp candidates")

    met = sub.add_parser("metrics", help="evaluation formulas over measured series")
    metsub = met.add_subparsers(dest="metric", required=True)
    ratio = metsub.add_parser("speedup-ratio", help="mixed-cluster speedup over per-type baselines")
    ratio.add_argument("--hetero-tgs", type=float, required=True, help="tokens/chip/s of the mixed run")
    ratio.add_argument("--total-chips", type=int, required=True)
    ratio.add_argument(
        "--baseline",
        action="append",
        required=True,
        metavar="COUNT:TGS",
        help="per-type baseline, repeatable",
    )
    mre = metsub.add_parser("mre", help="mean relative error between two series files")
    mre.add_argument("--reference", required=True, help="two-column (iteration, value) file")
    mre.add_argument("--candidate", required=True, help="two-column (iteration, value) file")

    gen = sub.add_parser("profile-gen", help="write a synthetic profile table")
    gen.add_argument("--chip", default="chip")
    gen.add_argument("--flops-ratio", type=float, required=True)
    gen.add_argument("--memory-gib", type=float, required=True)
    gen.add_argument("--tp-efficiency", type=float, default=0.9, help="per-doubling retention in (0,1]")
    gen.add_argument("--base-layer-seconds", type=float, required=True)
    gen.add_argument("--tp-max", type=int, default=8)
    gen.add_argument("--out", required=True)
    return top


def _cmd_plan(args: argparse.Namespace) -> int:
    cluster = io.load_cluster(args.cluster)
    profile = io.load_profile(args.profile)
    workload = io.load_workload(args.workload)
    if args.alpha is not None:
        workload = replace(workload, bubble_coefficient=args.alpha)
        workload.validate()
    if args.two_stage:
        result = two_stage_search(
            cluster, profile, workload, group_size=args.group_size, workers=args.workers
        )
    else:
        result = search_plan(cluster, profile, workload, workers=args.workers)

    plan = result.plan
    print(f"dp={plan.dp} microbatches={plan.microbatches} stages={plan.total_stages}")
    for seg in plan.segments:
        rec = " recompute" if seg.recompute else ""
        print(
            f"  {seg.chip}: pp={seg.pp} tp={seg.tp} layers={seg.layers}"
            f" ({seg.layers_per_stage}/stage){rec}"
        )
    if result.two_stage:
        print("two-stage refinement applied (grouped chip types)")
    print(f"estimated iteration time: {result.cost.total:.6f} s")
    if args.out:
        io.save_plan(plan, args.out)
    if args.breakdown_out:
        io.save(io.dump_breakdown(result.cost), args.breakdown_out)
    return 0


def _cmd_simulate(args: argparse.Namespace) -> int:
    plan = io.load_plan(args.plan)
    profile = io.load_profile(args.profile)
    comm = io.load_comm(args.comm) if args.comm else CommConfig.zero()
    trace = simulate_iteration(plan, profile, comm, overlap_fraction=args.overlap)
    stats = trace_metrics(trace)
    print(f"iteration time: {stats['iteration_time']:.6f} s")
    for i, (bf, pk) in enumerate(zip(stats["bubble_fraction"], stats["peak_in_flight"]), 1):
        print(f"  stage {i}: bubble={bf:.4f} peak_in_flight={pk}")
    if args.trace_out:
        export_trace(trace, args.trace_out)
        print(f"trace written to {args.trace_out}")
    return 0


def _cmd_validate(args: argparse.Namespace) -> int:
    cluster, profile, workload = random_instance(args.seed)
    try:
        got = search_plan(cluster, profile, workload, workers=args.workers)
    except InfeasibleError:
        got = None
    try:
        want = brute_force_oracle(cluster, profile, workload)
    except InfeasibleError:
        want = None
    if got is None and want is None:
        print(f"seed {args.seed}: AGREE (both infeasible)")
        return 0
    if got is None or want is None:
        which = "search" if got is None else "oracle"
        print(f"seed {args.seed}: DISAGREE ({which} reports infeasible)")
        return 1
    if got.cost.total == want.cost.total:
        print(f"seed {args.seed}: AGREE cost={got.cost.total:.9f} s")
        return 0
    print(
        f"seed {args.seed}: DISAGREE search={got.cost.total:.9f} s"
        f" oracle={want.cost.total:.9f} s"
    )
    return 1


def _cmd_metrics(args: argparse.Namespace) -> int:
    if args.metric == "speedup-ratio":
        baselines = []
        for item in args.baseline:
            try:
                count_s, tgs_s = item.split(":", 1)
                baselines.append((int(count_s), float(tgs_s)))
            except ValueError:
                raise ValidationError(f"--baseline expects COUNT:TGS, got {item!r}") from None
        ratio = hetero_speedup_ratio(args.hetero_tgs, args.total_chips, baselines)
        print(f"speedup ratio: {ratio:.6f}")
    else:
        ref = load_series(args.reference)
        cand = load_series(args.candidate)
        print(f"mre: {mean_relative_error(ref, cand):.6f}")
    return 0


def _cmd_profile_gen(args: argparse.Namespace) -> int:
    table = synthesize_profile(
        args.flops_ratio,
        args.memory_gib * GIB,
        args.tp_efficiency,
        args.base_layer_seconds,
        chip=args.chip,
        tp_max=args.tp_max,
    )
    io.save_profile(table, args.out)
    print(f"profile for {args.chip!r} written to {args.out}")
    return 0


_COMMANDS = {
    "plan": _cmd_plan,
    "simulate": _cmd_simulate,
    "validate": _cmd_validate,
    "metrics": _cmd_metrics,
    "profile-gen": _cmd_profile_gen,
}


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except InfeasibleError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ValidationError, ProfileLookupError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
