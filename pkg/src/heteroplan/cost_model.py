"""Analytic iteration-time and memory model for heterogeneous pipelines.

A plan divides the model's L layers over a pipeline whose stages may sit on
different chip types.  Stages of one chip type form a contiguous run with a
shared tensor-parallel width, recompute flag, and per-stage layer count; the
plan stores those runs as segments.  For a stage holding `lps` layers:

    T_comp   = lps * (t_fwd + t_bwd + r * t_recomp)
    T_update = lps * t_update(dp, tp)
    total    = b * T_comp + T_update + alpha * (sum of every other stage's T_comp)

with b microbatches per data-parallel replica and alpha weighting the bubble
term (1 for 1F1B).  The estimated iteration time is the max stage total.

The exact floating-point evaluation order used here is the reference: the
per-layer compute time is (t_fwd + t_bwd) + r * t_recomp, the compute-time
grand total G accumulates one stage at a time in stage order, and a stage
total is (b * T_comp + T_update) + alpha * (G - T_comp).  The search kernels
and the exhaustive oracle replicate this order so their costs compare equal
bitwise, which the tests pin.

Peak stage memory follows the 1F1B in-flight rule: stage s (1-based) of p
holds at most w = min(b, p - s + 1) microbatches of activations, so

    peak(s) = lps * mem_model + (w * lps) * mem_act
"""
from __future__ import annotations

from dataclasses import dataclass

from .cluster import ClusterSpec, ProfileTable, WorkloadSpec
from .errors import ValidationError


def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise ValidationError(msg)


def _is_pow2(x: int) -> bool:
    return x >= 1 and x & (x - 1) == 0


@dataclass(frozen=True)
class PlanSegment:
    """A contiguous run of pipeline stages with identical settings.

    Uses pp stages of `chip`, each at tensor-parallel width tp, together
    holding `layers` layers (pp | layers, so every stage gets layers/pp).
    """

    chip: str
    pp: int
    tp: int
    recompute: bool
    layers: int

    @property
    def layers_per_stage(self) -> int:
        return self.layers // self.pp

    def validate(self) -> None:
        _require(self.pp >= 1, f"segment on {self.chip!r}: pp must be >= 1, got {self.pp}")
        _require(_is_pow2(self.tp), f"segment on {self.chip!r}: tp must be a power of two, got {self.tp}")
        _require(self.layers >= self.pp, f"segment on {self.chip!r}: needs >= 1 layer per stage")
        _require(
            self.layers % self.pp == 0,
            f"segment on {self.chip!r}: {self.layers} layers not divisible by {self.pp} stages",
        )


@dataclass(frozen=True)
class StageView:
    """One pipeline stage, expanded from a segment. index is 1-based."""

    index: int
    chip: str
    tp: int
    recompute: bool
    layers_per_stage: int


@dataclass(frozen=True)
class ParallelPlan:
    """A full parallelization: dp replicas, each a pipeline over the segments."""

    dp: int
    microbatches: int
    segments: tuple[PlanSegment, ...]

    def validate_structure(self) -> None:
        _require(self.dp >= 1, f"dp must be >= 1, got {self.dp}")
        _require(self.microbatches >= 1, f"microbatches must be >= 1, got {self.microbatches}")
        _require(len(self.segments) >= 1, "plan must have at least one segment")
        for seg in self.segments:
            seg.validate()
        chips = [seg.chip for seg in self.segments]
        seen: set[str] = set()
        for i, chip in enumerate(chips):
            if i > 0 and chip == chips[i - 1]:
                continue
            _require(chip not in seen, f"segments of chip {chip!r} are not contiguous")
            seen.add(chip)

    @property
    def total_stages(self) -> int:
        return sum(seg.pp for seg in self.segments)

    @property
    def total_layers(self) -> int:
        return sum(seg.layers for seg in self.segments)

    @property
    def stages(self) -> list[StageView]:
        out: list[StageView] = []
        idx = 1
        for seg in self.segments:
            lps = seg.layers_per_stage
            for _ in range(seg.pp):
                out.append(StageView(idx, seg.chip, seg.tp, seg.recompute, lps))
                idx += 1
        return out

    def segment_of_stage(self, stage_index: int) -> PlanSegment:
        _require(
            1 <= stage_index <= self.total_stages,
            f"stage index {stage_index} out of range 1..{self.total_stages}",
        )
        idx = stage_index
        for seg in self.segments:
            if idx <= seg.pp:
                return seg
            idx -= seg.pp
        raise AssertionError("unreachable")


@dataclass(frozen=True)
class CostBreakdown:
    """Per-stage terms of the analytic model, all in seconds.

    Lists are indexed by stage (0-based list position, stage 1 first).
    total = max(stage_total) + overhead; overhead defaults to 0.
    """

    compute_time: tuple[float, ...]
    update_time: tuple[float, ...]
    bubble_term: tuple[float, ...]
    stage_total: tuple[float, ...]
    total: float
    overhead: float = 0.0


def stage_compute_time(chip: str, tp: int, recompute: bool, layers_per_stage: int, profile: ProfileTable) -> float:
    """One microbatch's forward+backward (+recompute) time for one stage."""
    _require(layers_per_stage >= 1, f"layers_per_stage must be >= 1, got {layers_per_stage}")
    f, b, rc = profile.compute_times(chip, tp)
    per_layer = (f + b) + (rc if recompute else 0.0)
    return layers_per_stage * per_layer


def stage_update_time(chip: str, dp: int, tp: int, layers_per_stage: int, profile: ProfileTable) -> float:
    """Optimizer-step time for one stage."""
    _require(layers_per_stage >= 1, f"layers_per_stage must be >= 1, got {layers_per_stage}")
    return layers_per_stage * profile.update_time(chip, dp, tp)


def in_flight_microbatches(stage_index: int, total_stages: int, microbatches: int) -> int:
    """Peak live microbatches at a stage under 1F1B: min(b, p - s + 1)."""
    _require(1 <= stage_index <= total_stages, f"stage index {stage_index} out of range 1..{total_stages}")
    _require(microbatches >= 1, "microbatches must be >= 1")
    return min(microbatches, total_stages - stage_index + 1)


def stage_memory_bytes(layers_per_stage: int, in_flight: int, mem_model: float, mem_act: float) -> float:
    """Canonical stage-memory expression: lps*mem_model + (w*lps)*mem_act."""
    return layers_per_stage * mem_model + (in_flight * layers_per_stage) * mem_act


def max_layers_per_stage(mem_model: float, mem_act: float, in_flight: int, safe_memory: float) -> int:
    """Largest lps with stage_memory_bytes(lps, w, ...) <= safe_memory (0 if none).

    The floor of the float division is verified against the canonical memory
    expression at the boundary so this cap never disagrees with the check it
    summarizes.
    """
    denom = mem_model + in_flight * mem_act
    if denom <= 0.0:
        raise ValidationError("memory per layer must be positive")
    k = int(safe_memory / denom)
    while stage_memory_bytes(k + 1, in_flight, mem_model, mem_act) <= safe_memory:
        k += 1
    while k > 0 and stage_memory_bytes(k, in_flight, mem_model, mem_act) > safe_memory:
        k -= 1
    return k


def stage_peak_memory(plan: ParallelPlan, stage_index: int, profile: ProfileTable) -> float:
    """Peak bytes resident on the given stage (1-based) during one iteration."""
    seg = plan.segment_of_stage(stage_index)
    w = in_flight_microbatches(stage_index, plan.total_stages, plan.microbatches)
    mem_act = profile.activation_bytes(seg.chip, seg.tp, seg.recompute)
    mem_model = profile.model_bytes(seg.chip, plan.dp, seg.tp)
    return stage_memory_bytes(seg.layers_per_stage, w, mem_model, mem_act)


def estimate_iteration_time(plan: ParallelPlan, profile: ProfileTable, workload: WorkloadSpec) -> CostBreakdown:
    """Evaluate the analytic model for a plan.

    Validates plan structure and its consistency with the workload (layer
    count, microbatches * dp == global batch); profile lookup misses propagate
    as ProfileLookupError.
    """
    plan.validate_structure()
    workload.validate()
    _require(
        plan.total_layers == workload.total_layers,
        f"plan holds {plan.total_layers} layers, workload has {workload.total_layers}",
    )
    _require(
        plan.microbatches * plan.dp == workload.global_batch,
        f"microbatches {plan.microbatches} * dp {plan.dp} != global_batch {workload.global_batch}",
    )
    b = plan.microbatches
    alpha = workload.bubble_coefficient

    seg_comp: list[float] = []
    seg_upd: list[float] = []
    for seg in plan.segments:
        lps = seg.layers_per_stage
        seg_comp.append(stage_compute_time(seg.chip, seg.tp, seg.recompute, lps, profile))
        seg_upd.append(stage_update_time(seg.chip, plan.dp, seg.tp, lps, profile))

    grand = 0.0
    for seg, tc in zip(plan.segments, seg_comp):
        for _ in range(seg.pp):
            grand += tc

    compute_time: list[float] = []
    update_time: list[float] = []
    bubble_term: list[float] = []
    stage_total: list[float] = []
    for seg, tc, tu in zip(plan.segments, seg_comp, seg_upd):
        bub = alpha * (grand - tc)
        tot = b * tc + tu + alpha * (grand - tc)
        for _ in range(seg.pp):
            compute_time.append(tc)
            update_time.append(tu)
            bubble_term.append(bub)
            stage_total.append(tot)

    total = max(stage_total) + workload.pipeline_overhead
    return CostBreakdown(
        compute_time=tuple(compute_time),
        update_time=tuple(update_time),
        bubble_term=tuple(bubble_term),
        stage_total=tuple(stage_total),
        total=total,
        overhead=workload.pipeline_overhead,
    )


@dataclass(frozen=True)
class FeasibilityReport:
    """Outcome of check_plan_feasibility.

    memory_slack[i] is safe_memory - peak for stage i+1 (present when the
    checks reached the memory pass).  reason/stage_index describe the first
    violation when infeasible.
    """

    feasible: bool
    reason: str | None = None
    stage_index: int | None = None
    memory_slack: tuple[float, ...] | None = None


def check_plan_feasibility(
    plan: ParallelPlan,
    cluster: ClusterSpec,
    profile: ProfileTable,
    workload: WorkloadSpec,
) -> FeasibilityReport:
    """Validate a plan against cluster, profile, and workload.

    Checks, in order: segment structure, workload consistency, chip-count
    products (pp*tp*dp chips per segment, summing to each type's count), type
    ordering, tp limits, profile availability, then per-stage memory against
    safe capacity.  Returns a report instead of raising so callers can surface
    the reason.
    """
    try:
        plan.validate_structure()
        workload.validate()
    except ValidationError as exc:
        return FeasibilityReport(False, str(exc))

    if plan.total_layers != workload.total_layers:
        return FeasibilityReport(
            False, f"plan holds {plan.total_layers} layers, workload has {workload.total_layers}"
        )
    if plan.microbatches * plan.dp != workload.global_batch:
        return FeasibilityReport(
            False,
            f"microbatches {plan.microbatches} * dp {plan.dp} != global_batch {workload.global_batch}",
        )
    if plan.total_stages > workload.total_layers:
        return FeasibilityReport(False, "more pipeline stages than layers")

    chip_order = [c.name for c in cluster.chip_types]
    used: dict[str, int] = {}
    seg_order: list[str] = []
    for seg in plan.segments:
        if seg.chip not in chip_order:
            return FeasibilityReport(False, f"plan references unknown chip type {seg.chip!r}")
        chip = cluster.chip(seg.chip)
        if seg.tp > chip.tp_max:
            return FeasibilityReport(False, f"segment on {seg.chip!r}: tp {seg.tp} exceeds tp_max {chip.tp_max}")
        used[seg.chip] = used.get(seg.chip, 0) + seg.pp * seg.tp * plan.dp
        if not seg_order or seg_order[-1] != seg.chip:
            seg_order.append(seg.chip)
    for chip_name, n in used.items():
        expected = cluster.chip(chip_name).count
        if n != expected:
            return FeasibilityReport(
                False, f"chip {chip_name!r}: plan uses pp*tp*dp = {n} chips, cluster has {expected}"
            )
    positions = [chip_order.index(c) for c in seg_order]
    if positions != sorted(positions):
        return FeasibilityReport(False, f"chip types out of cluster order: {seg_order}")

    p = plan.total_stages
    slack: list[float] = []
    for stage in plan.stages:
        seg = plan.segment_of_stage(stage.index)
        try:
            mem_act = profile.activation_bytes(seg.chip, seg.tp, seg.recompute)
            mem_model = profile.model_bytes(seg.chip, plan.dp, seg.tp)
            profile.compute_times(seg.chip, seg.tp)
            profile.update_time(seg.chip, plan.dp, seg.tp)
        except Exception as exc:
            return FeasibilityReport(False, str(exc), stage.index)
        w = in_flight_microbatches(stage.index, p, plan.microbatches)
        peak = stage_memory_bytes(stage.layers_per_stage, w, mem_model, mem_act)
        safe = cluster.chip(seg.chip).safe_memory
        slack.append(safe - peak)
        if peak > safe:
            return FeasibilityReport(
                False,
                f"stage {stage.index} on {seg.chip!r} needs {peak:.3e} bytes, safe capacity {safe:.3e}",
                stage.index,
                tuple(slack),
            )
    return FeasibilityReport(True, None, None, tuple(slack))
