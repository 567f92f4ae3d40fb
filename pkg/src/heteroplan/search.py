"""Plan search over data-parallel width, per-type TP, recompute, and layers.

The planner walks dp candidates (divisors of the global batch), and for each
dp enumerates per-type (tp, pp) pairs (power-of-two tp up to tp_max, with
tp*dp dividing the type's chip count) and recompute flags depth-first; every
complete configuration is handed to the exact layer-split kernel.  Costs are
compared with a deterministic tie-break (smaller iteration time, then smaller
dp, then lexicographically smaller tp vector, then fewer recomputes, then the
lexicographically smaller recompute vector), so results do not depend on
enumeration schedule or worker count.

two_stage_search re-runs the per-type search with each chip type split into
fixed-size groups, dp pinned to the stage-1 winner, and TP forced
non-increasing across groups of one type; it returns whichever stage's plan
is cheaper.  brute_force_oracle is the independent ground truth: exhaustive
enumeration of every configuration and every integer layer split, no
heuristics, usable on small instances only.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

from . import _core
from .cluster import (
    ChipTypeSpec,
    ClusterSpec,
    ProfileTable,
    WorkloadSpec,
    grouped_cluster,
    grouped_profile,
)
from .cost_model import (
    CostBreakdown,
    ParallelPlan,
    PlanSegment,
    estimate_iteration_time,
    in_flight_microbatches,
    max_layers_per_stage,
    stage_memory_bytes,
)
from .errors import InfeasibleError, ProfileLookupError, ValidationError

_INF = float("inf")


def divisors(x: int) -> list[int]:
    """Ascending divisors of a positive integer."""
    if x < 1:
        raise ValidationError(f"expected a positive integer, got {x}")
    small, large = [], []
    d = 1
    while d * d <= x:
        if x % d == 0:
            small.append(d)
            if d != x // d:
                large.append(x // d)
        d += 1
    return small + large[::-1]


def feasible_tp_pp(chip: ChipTypeSpec, dp: int) -> list[tuple[int, int]]:
    """(pp, tp) pairs for one chip type at a given dp, tp ascending.

    tp ranges over powers of two up to tp_max with tp*dp dividing the chip
    count; pp is the forced quotient count/(tp*dp), always >= 1.
    """
    if dp < 1:
        raise ValidationError(f"dp must be >= 1, got {dp}")
    out: list[tuple[int, int]] = []
    tp = 1
    while tp <= chip.tp_max:
        group = tp * dp
        if group <= chip.count and chip.count % group == 0:
            out.append((chip.count // group, tp))
        tp *= 2
    return out


def enumerate_dp(global_batch: int, cluster: ClusterSpec) -> list[int]:
    """dp candidates: divisors of the global batch where every chip type
    admits at least one (tp, pp) pair."""
    return [
        dp
        for dp in divisors(global_batch)
        if all(feasible_tp_pp(chip, dp) for chip in cluster.chip_types)
    ]


@dataclass(frozen=True)
class SearchResult:
    """A found plan plus the cluster/profile it refers to.

    cluster and profile echo the inputs for a plain search; a winning stage-2
    plan references the derived grouped cluster instead.  two_stage reports
    whether the plan came from stage 2; stage2_feasible is None when stage 2
    never ran (plain search or nothing needed grouping).
    """

    plan: ParallelPlan
    cost: CostBreakdown
    cluster: ClusterSpec
    profile: ProfileTable
    two_stage: bool = False
    stage2_feasible: bool | None = None


@dataclass(frozen=True)
class _Option:
    pp: int
    tp: int
    recompute: bool
    comp: float
    upd: float
    mem_act: float
    mem_model: float


def _type_options(chip: ChipTypeSpec, dp: int, profile: ProfileTable) -> list[_Option]:
    """All (tp, pp, recompute) settings for one type, with profile numbers.

    Settings whose profile entries are absent are skipped (treated as
    infeasible, not an error), as are settings that cannot fit even one layer
    on the final stage.
    """
    out: list[_Option] = []
    for pp, tp in feasible_tp_pp(chip, dp):
        try:
            f, b, rc = profile.compute_times(chip.name, tp)
            upd = profile.update_time(chip.name, dp, tp)
            mem_model = profile.model_bytes(chip.name, dp, tp)
        except ProfileLookupError:
            continue
        for recompute in (False, True):
            try:
                mem_act = profile.activation_bytes(chip.name, tp, recompute)
            except ProfileLookupError:
                continue
            if stage_memory_bytes(1, 1, mem_model, mem_act) > chip.safe_memory:
                continue
            comp = (f + b) + (rc if recompute else 0.0)
            out.append(_Option(pp, tp, recompute, comp, upd, mem_act, mem_model))
    return out


_BestEntry = tuple[float, tuple[int, ...], int, tuple[bool, ...], list[_Option], list[int]]


def _search_fixed_dp(
    cluster: ClusterSpec,
    profile: ProfileTable,
    workload: WorkloadSpec,
    dp: int,
    monotone_parents: dict[str, str] | None = None,
    initial_cutoff: float = _INF,
) -> _BestEntry | None:
    """Best configuration at one dp strictly cheaper than initial_cutoff.

    monotone_parents marks grouped runs: when consecutive types share a
    parent, the later one's tp may not exceed the earlier one's.  The walk
    over per-type options carries a real-valued cost lower bound; branches
    that provably cannot beat the incumbent are cut before the exact
    layer-split kernel runs.  The bound is deflated by a small relative
    margin so float rounding in the bound itself can never discard a
    configuration whose exact cost ties or beats the incumbent.
    """
    microbatches = workload.global_batch // dp
    alpha = workload.bubble_coefficient
    total = workload.total_layers
    types = cluster.chip_types
    n = len(types)

    options = [_type_options(chip, dp, profile) for chip in types]
    if any(not opts for opts in options):
        return None
    min_pp_suffix = [0] * (n + 1)
    for i in range(n - 1, -1, -1):
        min_pp_suffix[i] = min_pp_suffix[i + 1] + min(o.pp for o in options[i])
    if min_pp_suffix[0] > total:
        return None

    # per-option bound ingredients: beta_low is a k-independent floor of the
    # option's head term (k >= 1; a negative beta is scaled by the largest
    # k any stage could hold, which total_layers caps)
    bcoef = float(microbatches) - alpha
    beta_low: list[list[float]] = []
    for opts in options:
        row = []
        for o in opts:
            bt = bcoef * o.comp + o.upd
            row.append(bt if bt >= 0.0 else bt * total)
        beta_low.append(row)
    sfx_ppc = [0.0] * (n + 1)
    sfx_minc = [_INF] * (n + 1)
    sfx_bmax = [-_INF] * (n + 1)
    for i in range(n - 1, -1, -1):
        sfx_ppc[i] = sfx_ppc[i + 1] + min(o.pp * o.comp for o in options[i])
        sfx_minc[i] = min(sfx_minc[i + 1], min(o.comp for o in options[i]))
        sfx_bmax[i] = max(sfx_bmax[i + 1], min(beta_low[i]))

    chosen: list[_Option] = [options[0][0]] * n
    best: _BestEntry | None = None
    cutoff = initial_cutoff

    def walk(i: int, used_pp: int, part_ppc: float, part_minc: float, part_beta: float) -> None:
        nonlocal best, cutoff
        if i == n:
            pps = [o.pp for o in chosen]
            stage_count = used_pp
            kmax: list[int] = []
            first = 1
            feasible = True
            for t, o in enumerate(chosen):
                w = in_flight_microbatches(first, stage_count, microbatches)
                cap = max_layers_per_stage(o.mem_model, o.mem_act, w, types[t].safe_memory)
                if cap < 1:
                    feasible = False
                    break
                kmax.append(cap)
                first += o.pp
            if not feasible:
                return
            comps = [o.comp for o in chosen]
            upds = [o.upd for o in chosen]
            if cutoff < _INF:
                # relaxed-split bound: skips the exact solve for the bulk of
                # configurations that provably cannot beat the incumbent
                lb = _core.split_lower_bound(pps, comps, upds, kmax, total, microbatches, alpha)
                if lb == _INF or lb - 1e-9 * abs(lb) >= cutoff:
                    return
            solved = _core.solve_layer_split(
                pps,
                comps,
                upds,
                kmax,
                total,
                microbatches,
                alpha,
                None,
                cutoff,
            )
            if solved is None:
                return
            t_val, k = solved
            entry: _BestEntry = (
                t_val,
                tuple(o.tp for o in chosen),
                sum(1 for o in chosen if o.recompute),
                tuple(o.recompute for o in chosen),
                list(chosen),
                k,
            )
            if best is None or entry[:4] < best[:4]:
                best = entry
                cutoff = t_val
            return
        prev = chosen[i - 1] if i > 0 else None
        same_parent = (
            monotone_parents is not None
            and prev is not None
            and monotone_parents.get(types[i].name) == monotone_parents.get(types[i - 1].name)
        )
        for oi, opt in enumerate(options[i]):
            if same_parent and prev is not None and opt.tp > prev.tp:
                continue
            stages_min = used_pp + opt.pp + min_pp_suffix[i + 1]
            if stages_min > total:
                continue
            ppc = part_ppc + opt.pp * opt.comp
            minc = part_minc if part_minc < opt.comp else opt.comp
            pbeta = part_beta if part_beta > beta_low[i][oi] else beta_low[i][oi]
            if cutoff < _INF:
                cmin = minc if minc < sfx_minc[i + 1] else sfx_minc[i + 1]
                g_lb = ppc + sfx_ppc[i + 1] + (total - stages_min) * cmin
                head = pbeta if pbeta > sfx_bmax[i + 1] else sfx_bmax[i + 1]
                lb = head + alpha * g_lb
                if lb - 1e-9 * abs(lb) >= cutoff:
                    continue
            chosen[i] = opt
            walk(i + 1, used_pp + opt.pp, ppc, minc, pbeta)

    walk(0, 0, 0.0, _INF, -_INF)
    return best


def _split_exists(pps: list[int], kmax: list[int], total: int) -> bool:
    """Whether integers k with sum(pp*k) == total, 1 <= k <= kmax exist."""
    n = len(pps)
    suf_min = [0] * (n + 1)
    suf_max = [0] * (n + 1)
    for i in range(n - 1, -1, -1):
        suf_min[i] = suf_min[i + 1] + pps[i]
        suf_max[i] = suf_max[i + 1] + pps[i] * kmax[i]

    def fill(i: int, rem: int) -> bool:
        if i == n:
            return rem == 0
        ppi = pps[i]
        khi = min(kmax[i], (rem - suf_min[i + 1]) // ppi)
        need = rem - suf_max[i + 1]
        klo = max(1, (need + ppi - 1) // ppi if need > 0 else 1)
        for v in range(klo, khi + 1):
            if fill(i + 1, rem - ppi * v):
                return True
        return False

    return fill(0, total)


def _any_feasible_config(
    cluster: ClusterSpec,
    profile: ProfileTable,
    workload: WorkloadSpec,
    dp: int,
    monotone_parents: dict[str, str] | None,
) -> bool:
    """Existence check: does any configuration at this dp admit a valid
    layer split within memory?  Used to tell 'infeasible' apart from
    'feasible but no better than the incumbent'."""
    microbatches = workload.global_batch // dp
    total = workload.total_layers
    types = cluster.chip_types
    n = len(types)
    options = [_type_options(chip, dp, profile) for chip in types]
    if any(not opts for opts in options):
        return False
    min_pp_suffix = [0] * (n + 1)
    for i in range(n - 1, -1, -1):
        min_pp_suffix[i] = min_pp_suffix[i + 1] + min(o.pp for o in options[i])

    chosen: list[_Option] = [options[0][0]] * n

    def walk(i: int, used_pp: int) -> bool:
        if i == n:
            kmax: list[int] = []
            first = 1
            for t, o in enumerate(chosen):
                w = in_flight_microbatches(first, used_pp, microbatches)
                cap = max_layers_per_stage(o.mem_model, o.mem_act, w, types[t].safe_memory)
                if cap < 1:
                    return False
                kmax.append(cap)
                first += o.pp
            return _split_exists([o.pp for o in chosen], kmax, total)
        prev = chosen[i - 1] if i > 0 else None
        same_parent = (
            monotone_parents is not None
            and prev is not None
            and monotone_parents.get(types[i].name) == monotone_parents.get(types[i - 1].name)
        )
        for opt in options[i]:
            if same_parent and prev is not None and opt.tp > prev.tp:
                continue
            if used_pp + opt.pp + min_pp_suffix[i + 1] > total:
                continue
            chosen[i] = opt
            if walk(i + 1, used_pp + opt.pp):
                return True
        return False

    return walk(0, 0)


def _plan_from_entry(dp: int, microbatches: int, types: Sequence[ChipTypeSpec], entry: _BestEntry) -> ParallelPlan:
    _, _, _, _, opts, k = entry
    segments = tuple(
        PlanSegment(chip.name, o.pp, o.tp, o.recompute, o.pp * kv)
        for chip, o, kv in zip(types, opts, k)
    )
    return ParallelPlan(dp=dp, microbatches=microbatches, segments=segments)


def search_plan(
    cluster: ClusterSpec,
    profile: ProfileTable,
    workload: WorkloadSpec,
    *,
    workers: int = 1,
) -> SearchResult:
    """Best plan over all dp candidates; raises InfeasibleError if none exists.

    workers > 1 evaluates dp candidates concurrently; each candidate is
    searched sequentially and the reduction uses the deterministic tie-break,
    so the result is identical for any worker count.
    """
    workload.validate()
    if workers < 1:
        raise ValidationError(f"workers must be >= 1, got {workers}")
    dps = enumerate_dp(workload.global_batch, cluster)

    if workers == 1 or len(dps) <= 1:
        # sequential mode threads the incumbent across dp candidates; only a
        # strictly cheaper entry can come back, which is the same winner the
        # (T, dp, ...) reduction below picks, so worker count stays irrelevant
        found = []
        incumbent = _INF
        for dp in dps:
            entry = _search_fixed_dp(cluster, profile, workload, dp, initial_cutoff=incumbent)
            found.append((dp, entry))
            if entry is not None:
                incumbent = entry[0]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = pool.map(lambda dp: _search_fixed_dp(cluster, profile, workload, dp), dps)
            found = list(zip(dps, results))

    best: tuple | None = None
    for dp, entry in found:
        if entry is None:
            continue
        key = (entry[0], dp, entry[1], entry[2], entry[3])
        if best is None or key < best[0]:
            best = (key, dp, entry)
    if best is None:
        raise InfeasibleError("no feasible plan: every (dp, tp, recompute, sharding) candidate violates a constraint")
    _, dp, entry = best
    plan = _plan_from_entry(dp, workload.global_batch // dp, cluster.chip_types, entry)
    cost = estimate_iteration_time(plan, profile, workload)
    return SearchResult(plan=plan, cost=cost, cluster=cluster, profile=profile)


def two_stage_search(
    cluster: ClusterSpec,
    profile: ProfileTable,
    workload: WorkloadSpec,
    *,
    group_size: int = 128,
    workers: int = 1,
) -> SearchResult:
    """Stage 1 plus a grouped refinement pass at the stage-1 dp.

    Each chip type is split into groups of group_size chips (remainder last);
    groups inherit the parent profile, and TP must be non-increasing across a
    type's groups.  Returns the cheaper of the two plans (stage 1 on ties);
    when stage 2 finds nothing feasible the stage-1 result is returned with
    stage2_feasible=False.
    """
    stage1 = search_plan(cluster, profile, workload, workers=workers)
    gcluster, parents = grouped_cluster(cluster, group_size)
    if all(g == p for g, p in parents.items()):
        return stage1
    gprofile = grouped_profile(profile, parents)
    dp = stage1.plan.dp
    # the stage-1 cost seeds the incumbent: only strictly cheaper grouped
    # plans are worth materializing, and the bound prunes everything else
    stage1_t = max(stage1.cost.stage_total)
    entry = _search_fixed_dp(gcluster, gprofile, workload, dp, parents, initial_cutoff=stage1_t)
    if entry is None:
        feasible = _any_feasible_config(gcluster, gprofile, workload, dp, parents)
        return SearchResult(
            plan=stage1.plan,
            cost=stage1.cost,
            cluster=cluster,
            profile=profile,
            stage2_feasible=feasible,
        )
    plan2 = _plan_from_entry(dp, workload.global_batch // dp, gcluster.chip_types, entry)
    cost2 = estimate_iteration_time(plan2, gprofile, workload)
    if cost2.total < stage1.cost.total:
        return SearchResult(
            plan=plan2, cost=cost2, cluster=gcluster, profile=gprofile, two_stage=True, stage2_feasible=True
        )
    return SearchResult(
        plan=stage1.plan,
        cost=stage1.cost,
        cluster=cluster,
        profile=profile,
        stage2_feasible=True,
    )


def brute_force_oracle(
    cluster: ClusterSpec,
    profile: ProfileTable,
    workload: WorkloadSpec,
    *,
    max_types: int = 3,
    max_total_chips: int = 256,
    max_layers: int = 64,
) -> SearchResult:
    """Exhaustive ground truth for small instances.

    Enumerates every dp divisor, every per-type (tp, pp, recompute) setting,
    and every integer layer split (multiples of pp, at least one layer per
    stage, within memory); evaluates each with the canonical cost expression
    and keeps the best under the same tie-break as search_plan.  No pruning
    and no heuristic sharding, so the size limits are enforced.
    """
    workload.validate()
    if len(cluster.chip_types) > max_types:
        raise ValidationError(f"oracle limit: at most {max_types} chip types")
    if cluster.total_chips > max_total_chips:
        raise ValidationError(f"oracle limit: at most {max_total_chips} chips")
    if workload.total_layers > max_layers:
        raise ValidationError(f"oracle limit: at most {max_layers} layers")

    total = workload.total_layers
    alpha = workload.bubble_coefficient
    types = cluster.chip_types
    n = len(types)
    best: tuple | None = None

    for dp in divisors(workload.global_batch):
        microbatches = workload.global_batch // dp
        per_type: list[list[_Option]] = []
        ok = True
        for chip in types:
            opts: list[_Option] = []
            tp = 1
            while tp <= chip.tp_max:
                group = tp * dp
                if group <= chip.count and chip.count % group == 0:
                    try:
                        f, b, rc = profile.compute_times(chip.name, tp)
                        upd = profile.update_time(chip.name, dp, tp)
                        mem_model = profile.model_bytes(chip.name, dp, tp)
                        for recompute in (False, True):
                            mem_act = profile.activation_bytes(chip.name, tp, recompute)
                            comp = (f + b) + (rc if recompute else 0.0)
                            opts.append(
                                _Option(chip.count // group, tp, recompute, comp, upd, mem_act, mem_model)
                            )
                    except ProfileLookupError:
                        pass
                tp *= 2
            if not opts:
                ok = False
                break
            per_type.append(opts)
        if not ok:
            continue

        chosen: list[_Option] = [per_type[0][0]] * n

        def eval_config() -> None:
            nonlocal best
            pps = [o.pp for o in chosen]
            stage_count = sum(pps)
            if stage_count > total:
                return
            kmax: list[int] = []
            first = 1
            for t, o in enumerate(chosen):
                w = in_flight_microbatches(first, stage_count, microbatches)
                kmax.append(max_layers_per_stage(o.mem_model, o.mem_act, w, types[t].safe_memory))
                first += o.pp
            if any(c < 1 for c in kmax):
                return
            comp = [o.comp for o in chosen]
            upd = [o.upd for o in chosen]
            suffix_min = [0] * (n + 1)
            suffix_max = [0] * (n + 1)
            for t in range(n - 1, -1, -1):
                suffix_min[t] = suffix_min[t + 1] + pps[t]
                suffix_max[t] = suffix_max[t + 1] + pps[t] * kmax[t]
            if suffix_max[0] < total:
                return
            k = [0] * n
            best_local: tuple[float, list[int]] | None = None

            def split(t: int, rem: int, grand: float) -> None:
                nonlocal best_local
                if t == n:
                    worst = -_INF
                    for u in range(n):
                        tc = k[u] * comp[u]
                        tot = microbatches * tc + k[u] * upd[u] + alpha * (grand - tc)
                        if tot > worst:
                            worst = tot
                    if best_local is None or worst < best_local[0]:
                        best_local = (worst, k.copy())
                    return
                lo_rem = rem - suffix_max[t + 1]
                klo = max(1, -((-lo_rem) // pps[t]) if lo_rem > 0 else 1)
                khi = min(kmax[t], (rem - suffix_min[t + 1]) // pps[t])
                for v in range(klo, khi + 1):
                    tc = v * comp[t]
                    g2 = grand
                    for _ in range(pps[t]):
                        g2 += tc
                    k[t] = v
                    split(t + 1, rem - pps[t] * v, g2)
                k[t] = 0

            split(0, total, 0.0)
            if best_local is None:
                return
            t_val, kbest = best_local
            key = (
                t_val,
                dp,
                tuple(o.tp for o in chosen),
                sum(1 for o in chosen if o.recompute),
                tuple(o.recompute for o in chosen),
            )
            if best is None or key < best[0]:
                best = (key, dp, microbatches, list(chosen), kbest)

        def walk(i: int) -> None:
            for opt in per_type[i]:
                chosen[i] = opt
                if i + 1 == n:
                    eval_config()
                else:
                    walk(i + 1)

        walk(0)

    if best is None:
        raise InfeasibleError("no feasible plan: exhaustive enumeration found no valid configuration")
    _, dp, microbatches, opts, k = best
    segments = tuple(
        PlanSegment(chip.name, o.pp, o.tp, o.recompute, o.pp * kv)
        for chip, o, kv in zip(types, opts, k)
    )
    plan = ParallelPlan(dp=dp, microbatches=microbatches, segments=segments)
    cost = estimate_iteration_time(plan, profile, workload)
    return SearchResult(plan=plan, cost=cost, cluster=cluster, profile=profile)
