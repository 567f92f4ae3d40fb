"""Discrete-event simulation of one 1F1B pipeline iteration under a plan.

Each stage runs its own instruction list: min(b, p - s) warmup forwards, a
steady one-forward-one-backward phase, the backward drain, then the optimizer
update immediately after that stage's last backward.  Activation recompute,
when a stage's segment asks for it, runs fused directly before each backward
and waits for the output gradient to arrive, matching how the analytic model
charges it.  Cross-stage transfers take the communication model's resharding
time, scaled by (1 - overlap_fraction) for the part computation cannot hide;
transfer events sit on the sending stage's timeline and links are assumed
contention-free.

The simulator is the reference the analytic estimate is validated against:
with zero communication and uniform stages the two agree exactly.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

from .cluster import ProfileTable
from .comm import (
    DEVICE_DIRECT_RDMA,
    NAIVE,
    RESHARD_METHODS,
    SEND_RECV_ALL_GATHER,
    LinkModel,
    p2p_transfer_time,
    resharding_time,
)
from .cost_model import ParallelPlan, StageView
from .errors import ValidationError

GIB = 1024 ** 3

FORWARD = "forward"
RECOMPUTE = "recompute"
BACKWARD = "backward"
TRANSFER_FWD = "transfer_fwd"
TRANSFER_BWD = "transfer_bwd"
UPDATE = "update"
COMPUTE_KINDS = (FORWARD, RECOMPUTE, BACKWARD, UPDATE)
EVENT_KINDS = COMPUTE_KINDS + (TRANSFER_FWD, TRANSFER_BWD)


@dataclass(frozen=True)
class CommConfig:
    """Boundary-transfer settings for the simulator.

    activation_bytes is the size of one microbatch's boundary tensor; the
    profile tables store resident memory, not boundary tensors, so this is an
    explicit input.  dst_nic_count caps the parallel shard streams of
    send_recv_all_gather resharding.
    """

    link: LinkModel
    method: str = SEND_RECV_ALL_GATHER
    intra_bandwidth: float = 64.0 * GIB
    activation_bytes: float = 0.0
    dst_nic_count: int = 8

    def __post_init__(self) -> None:
        if self.method not in RESHARD_METHODS:
            raise ValidationError(f"unknown resharding method {self.method!r}")
        if self.intra_bandwidth <= 0:
            raise ValidationError("intra_bandwidth must be positive")
        if self.activation_bytes < 0:
            raise ValidationError("activation_bytes must be >= 0")
        if self.dst_nic_count < 1:
            raise ValidationError("dst_nic_count must be >= 1")

    @classmethod
    def zero(cls) -> "CommConfig":
        """The zero-communication limit: every transfer takes 0 seconds."""
        return cls(
            link=LinkModel(DEVICE_DIRECT_RDMA, 0.0, 1.0, 0.0),
            method=NAIVE,
            intra_bandwidth=1.0,
            activation_bytes=0.0,
        )

    def boundary_time(self, tp_src: int, tp_dst: int) -> float:
        """Seconds to move one microbatch's activation (or gradient) across
        one stage boundary.  Equal TP widths need no resharding."""
        if tp_src == tp_dst:
            return p2p_transfer_time(self.activation_bytes, self.link)
        return resharding_time(
            self.activation_bytes,
            tp_src,
            tp_dst,
            self.dst_nic_count,
            self.link,
            self.intra_bandwidth,
            self.method,
        )


@dataclass(frozen=True)
class TraceEvent:
    """One scheduled interval. stage and microbatch are 1-based; update
    events carry microbatch 0."""

    stage: int
    microbatch: int
    kind: str
    start: float
    end: float


@dataclass(frozen=True)
class ScheduleTrace:
    """Events of one iteration plus per-stage aggregates.

    peak_in_flight[s-1] counts microbatches whose forward has finished at
    stage s but whose backward has not; busy_time[s-1] sums compute event
    durations (transfers excluded).
    """

    events: tuple[TraceEvent, ...]
    iteration_time: float
    peak_in_flight: tuple[int, ...]
    busy_time: tuple[float, ...]

    @classmethod
    def from_events(cls, events: tuple[TraceEvent, ...] | list[TraceEvent]) -> "ScheduleTrace":
        events = tuple(events)
        stage_count = max((e.stage for e in events), default=0)
        for e in events:
            if e.kind not in EVENT_KINDS:
                raise ValidationError(f"unknown event kind {e.kind!r}")
            if e.end < e.start:
                raise ValidationError(f"event ends before it starts: {e}")
            if e.stage < 1:
                raise ValidationError(f"stage indices are 1-based: {e}")

        # one compute event at a time per stage
        for s in range(1, stage_count + 1):
            compute = sorted(
                (e for e in events if e.stage == s and e.kind in COMPUTE_KINDS),
                key=lambda e: (e.start, e.end),
            )
            for prev, cur in zip(compute, compute[1:]):
                if cur.start < prev.end - 1e-12:
                    raise ValidationError(
                        f"overlapping compute events on stage {s}: {prev} and {cur}"
                    )

        peaks = []
        busy = []
        for s in range(1, stage_count + 1):
            deltas = []
            busy_s = 0.0
            for e in events:
                if e.stage != s:
                    continue
                if e.kind in COMPUTE_KINDS:
                    busy_s += e.end - e.start
                if e.kind == FORWARD:
                    deltas.append((e.end, 1))
                elif e.kind == BACKWARD:
                    deltas.append((e.end, -1))
            # sort decrements first on time ties
            deltas.sort()
            level = peak = 0
            for _, d in deltas:
                level += d
                peak = max(peak, level)
            peaks.append(peak)
            busy.append(busy_s)
        iteration = max((e.end for e in events), default=0.0)
        return cls(
            events=events,
            iteration_time=iteration,
            peak_in_flight=tuple(peaks),
            busy_time=tuple(busy),
        )


@dataclass
class _StageState:
    view: StageView
    t_fwd: float
    t_bwd: float
    t_recomp: float
    t_update: float
    program: list[tuple[str, int]] = field(default_factory=list)
    pc: int = 0
    clock: float = 0.0


def _build_program(stage: int, total_stages: int, microbatches: int) -> list[tuple[str, int]]:
    warmup = min(microbatches, total_stages - stage)
    prog = [(FORWARD, m) for m in range(1, warmup + 1)]
    for k in range(1, microbatches - warmup + 1):
        prog.append((FORWARD, warmup + k))
        prog.append((BACKWARD, k))
    for m in range(microbatches - warmup + 1, microbatches + 1):
        prog.append((BACKWARD, m))
    prog.append((UPDATE, 0))
    return prog


def simulate_iteration(
    plan: ParallelPlan,
    profile: ProfileTable,
    comm: CommConfig,
    overlap_fraction: float = 0.0,
) -> ScheduleTrace:
    """Run one training iteration of the plan and return its full trace.

    overlap_fraction in [0, 1] is the share of every transfer hidden under
    computation; only the remainder delays the consumer and shows up as the
    transfer event's duration.
    """
    plan.validate_structure()
    if not 0.0 <= overlap_fraction <= 1.0:
        raise ValidationError(f"overlap_fraction must be in [0, 1], got {overlap_fraction}")
    b = plan.microbatches
    stages = plan.stages
    p = len(stages)

    states: list[_StageState] = []
    for view in stages:
        f, bw, rc = profile.compute_times(view.chip, view.tp)
        lps = view.layers_per_stage
        states.append(
            _StageState(
                view=view,
                t_fwd=lps * f,
                t_bwd=lps * bw,
                t_recomp=lps * rc if view.recompute else 0.0,
                t_update=lps * profile.update_time(view.chip, plan.dp, view.tp),
                program=_build_program(view.index, p, b),
            )
        )

    visible = 1.0 - overlap_fraction
    fwd_eff = [visible * comm.boundary_time(stages[s].tp, stages[s + 1].tp) for s in range(p - 1)]
    bwd_eff = [visible * comm.boundary_time(stages[s + 1].tp, stages[s].tp) for s in range(p - 1)]

    # dependency times, filled in as producers execute
    fwd_ready = [[None] * (b + 1) for _ in range(p + 1)]  # [stage][microbatch]
    bwd_ready = [[None] * (b + 1) for _ in range(p + 1)]
    fwd_done = [[None] * (b + 1) for _ in range(p + 1)]

    events: list[TraceEvent] = []
    remaining = sum(len(st.program) for st in states)
    while remaining:
        progressed = False
        for st in states:
            while st.pc < len(st.program):
                kind, m = st.program[st.pc]
                s = st.view.index
                if kind == FORWARD:
                    dep = 0.0 if s == 1 else fwd_ready[s - 1][m]
                    if dep is None:
                        break
                    start = max(st.clock, dep)
                    end = start + st.t_fwd
                    events.append(TraceEvent(s, m, FORWARD, start, end))
                    fwd_done[s][m] = end
                    if s < p:
                        events.append(TraceEvent(s, m, TRANSFER_FWD, end, end + fwd_eff[s - 1]))
                        fwd_ready[s][m] = end + fwd_eff[s - 1]
                elif kind == BACKWARD:
                    dep = fwd_done[s][m] if s == p else bwd_ready[s + 1][m]
                    if dep is None:
                        break
                    start = max(st.clock, dep)
                    if st.view.recompute:
                        events.append(TraceEvent(s, m, RECOMPUTE, start, start + st.t_recomp))
                        start += st.t_recomp
                    end = start + st.t_bwd
                    events.append(TraceEvent(s, m, BACKWARD, start, end))
                    if s > 1:
                        events.append(TraceEvent(s, m, TRANSFER_BWD, end, end + bwd_eff[s - 2]))
                        bwd_ready[s][m] = end + bwd_eff[s - 2]
                else:
                    end = st.clock + st.t_update
                    events.append(TraceEvent(s, 0, UPDATE, st.clock, end))
                st.clock = end
                st.pc += 1
                remaining -= 1
                progressed = True
        if not progressed:
            raise RuntimeError("schedule deadlock; instruction dependencies are inconsistent")

    return ScheduleTrace.from_events(events)


def trace_metrics(trace: ScheduleTrace) -> dict:
    """Aggregates read off a trace: iteration time, per-stage bubble
    fraction (idle share of the iteration), peak in-flight microbatches."""
    it = trace.iteration_time
    bubble = tuple(
        (1.0 - busy / it) if it > 0 else 0.0 for busy in trace.busy_time
    )
    return {
        "iteration_time": it,
        "bubble_fraction": bubble,
        "peak_in_flight": trace.peak_in_flight,
        "busy_time": trace.busy_time,
    }


def export_trace(trace: ScheduleTrace, path: str) -> None:
    """Write the trace in the Trace Event Format (timestamps in microseconds;
    one pid per stage, tid 0 for compute, tid 1 for transfers)."""
    records = []
    for e in trace.events:
        name = e.kind if e.kind == UPDATE else f"{e.kind} mb{e.microbatch}"
        records.append(
            {
                "name": name,
                "ph": "X",
                "ts": e.start * 1e6,
                "dur": (e.end - e.start) * 1e6,
                "pid": e.stage,
                "tid": 1 if e.kind in (TRANSFER_FWD, TRANSFER_BWD) else 0,
            }
        )
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(records, sort_keys=True, indent=1) + "\n")


def load_trace_events(path: str) -> list[dict]:
    """Parse an exported trace file back into its raw records."""
    with open(path, "r", encoding="utf-8") as fh:
        data = json.load(fh)
    if not isinstance(data, list):
        raise ValidationError(f"{path}: expected a JSON array of trace records")
    return data
