"""Layer assignment across heterogeneous pipeline stages.

Types host different per-layer step times, so splitting L layers evenly is
wrong; the goal is equal per-stage time.  equalize_layers computes the
real-valued ideal and rounds it; refine_layers repairs the rounded total,
walks steepest-descent moves of whole-stage layer blocks between types, and
finishes with an exact polish so the returned split minimizes the analytic
iteration time over every valid integer assignment.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

from . import _core
from .cluster import ClusterSpec, ProfileTable, WorkloadSpec
from .cost_model import in_flight_microbatches, max_layers_per_stage
from .errors import InfeasibleError, ValidationError


@dataclass(frozen=True)
class TypeConfig:
    """Per-type pipeline settings for a sharding problem, in cluster order."""

    chip: str
    pp: int
    tp: int
    recompute: bool


def _per_layer_times(config: Sequence[TypeConfig], profile: ProfileTable) -> list[float]:
    out = []
    for tc in config:
        f, b, rc = profile.compute_times(tc.chip, tc.tp)
        out.append((f + b) + (rc if tc.recompute else 0.0))
    return out


def _half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def equalize_layers(
    config: Sequence[TypeConfig],
    dp: int,
    total_layers: int,
    profile: ProfileTable,
) -> list[int]:
    """Rounded equal-time layer split.

    Solves sum_i pp_i * tau / c_i = L for the ideal per-stage time tau, where
    c_i is type i's per-layer compute time, then returns l_i = pp_i *
    round(tau / c_i) with at least one layer per stage.  The rounded total may
    miss L; refine_layers repairs that.
    """
    if not config:
        raise ValidationError("config must contain at least one type")
    if dp < 1:
        raise ValidationError(f"dp must be >= 1, got {dp}")
    sum_pp = sum(tc.pp for tc in config)
    for tc in config:
        if tc.pp < 1:
            raise ValidationError(f"type {tc.chip!r}: pp must be >= 1, got {tc.pp}")
    if total_layers < sum_pp:
        raise ValidationError(
            f"cannot give each of {sum_pp} stages a layer: only {total_layers} layers"
        )
    comp = _per_layer_times(config, profile)
    denom = sum(tc.pp / c for tc, c in zip(config, comp))
    tau = total_layers / denom
    return [tc.pp * max(1, _half_up(tau / c)) for tc, c in zip(config, comp)]


def _memory_caps(
    config: Sequence[TypeConfig],
    dp: int,
    cluster: ClusterSpec,
    profile: ProfileTable,
    microbatches: int,
) -> list[int]:
    """Per-type cap on layers per stage from the safe-memory constraint.

    A type's stages share one layer count, so the binding stage is the type's
    first (largest 1F1B in-flight count).
    """
    total_stages = sum(tc.pp for tc in config)
    caps = []
    first = 1
    for tc in config:
        w = in_flight_microbatches(first, total_stages, microbatches)
        mem_act = profile.activation_bytes(tc.chip, tc.tp, tc.recompute)
        mem_model = profile.model_bytes(tc.chip, dp, tc.tp)
        caps.append(max_layers_per_stage(mem_model, mem_act, w, cluster.chip(tc.chip).safe_memory))
        first += tc.pp
    return caps


def _descent(
    pp: list[int],
    comp: list[float],
    upd: list[float],
    kmax: list[int],
    k: list[int],
    microbatches: int,
    alpha: float,
) -> list[int]:
    """Steepest descent over pairwise whole-stage layer moves.

    One move shifts lcm(pp_src, pp_dst) layers from src to dst, keeping every
    type's count a multiple of its stage count.  On cost ties the move toward
    the smaller destination index wins, then the smaller source index.
    """
    n = len(pp)
    cur = _core.split_cost(pp, comp, upd, k, microbatches, alpha)
    for _ in range(256):
        best_cost = cur
        best_move = None
        for dst in range(n):
            for src in range(n):
                if src == dst:
                    continue
                g = math.lcm(pp[src], pp[dst])
                dsrc = g // pp[src]
                ddst = g // pp[dst]
                if k[src] - dsrc < 1 or k[dst] + ddst > kmax[dst]:
                    continue
                k[src] -= dsrc
                k[dst] += ddst
                cost = _core.split_cost(pp, comp, upd, k, microbatches, alpha)
                k[src] += dsrc
                k[dst] -= ddst
                if cost < best_cost:
                    best_cost = cost
                    best_move = (src, dst, dsrc, ddst)
        if best_move is None:
            break
        src, dst, dsrc, ddst = best_move
        k[src] -= dsrc
        k[dst] += ddst
        cur = best_cost
    return k


def refine_layers(
    initial: Sequence[int],
    total_layers: int,
    config: Sequence[TypeConfig],
    dp: int,
    cluster: ClusterSpec,
    profile: ProfileTable,
    workload: WorkloadSpec,
) -> list[int]:
    """Optimal integer layer split, seeded by an initial assignment.

    Repairs the initial total to exactly total_layers in whole-stage units,
    runs steepest descent over pairwise moves, then an exact branch-and-bound
    polish; the result minimizes estimate_iteration_time over all splits
    satisfying divisibility, one-layer-per-stage, and safe memory.  Raises
    InfeasibleError when no valid assignment exists.
    """
    if len(initial) != len(config):
        raise ValidationError(f"initial has {len(initial)} entries for {len(config)} types")
    if workload.global_batch % dp != 0:
        raise ValidationError(f"dp {dp} does not divide global batch {workload.global_batch}")
    microbatches = workload.global_batch // dp
    alpha = workload.bubble_coefficient

    pp = [tc.pp for tc in config]
    comp = _per_layer_times(config, profile)
    upd = [profile.update_time(tc.chip, dp, tc.tp) for tc in config]
    kmax = _memory_caps(config, dp, cluster, profile, microbatches)

    seed = None
    if all(l >= p and l % p == 0 for l, p in zip(initial, pp)):
        k0 = [l // p for l, p in zip(initial, pp)]
        k0 = [min(v, km) if km >= 1 else v for v, km in zip(k0, kmax)]
        if all(km >= 1 for km in kmax):
            delta = total_layers - sum(p * v for p, v in zip(pp, k0))
            guard = 0
            while delta != 0 and guard < 4 * total_layers + 16:
                guard += 1
                direction = 1 if delta > 0 else -1
                best = None
                for t in range(len(pp)):
                    if direction > 0 and (k0[t] >= kmax[t] or pp[t] > delta):
                        continue
                    if direction < 0 and (k0[t] <= 1 or pp[t] > -delta):
                        continue
                    k0[t] += direction
                    cost = _core.split_cost(pp, comp, upd, k0, microbatches, alpha)
                    k0[t] -= direction
                    if best is None or cost < best[0]:
                        best = (cost, t)
                if best is None:
                    break
                t = best[1]
                k0[t] += direction
                delta -= direction * pp[t]
            if delta == 0:
                seed = _descent(pp, comp, upd, kmax, k0, microbatches, alpha)

    result = _core.solve_layer_split(pp, comp, upd, kmax, total_layers, microbatches, alpha, seed)
    if result is None:
        raise InfeasibleError(
            f"sharding infeasible: no integer layer split of {total_layers} layers over "
            f"stage counts {pp} fits memory caps {kmax}"
        )
    _, k = result
    return [p * v for p, v in zip(pp, k)]
