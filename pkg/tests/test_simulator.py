"""Event-level 1F1B simulator against closed forms and the analytic model."""
import math

import pytest

from heteroplan.cluster import GIB, ProfileTable, WorkloadSpec, synthesize_profile
from heteroplan.comm import CPU_MEDIATED_TCP, DEVICE_DIRECT_RDMA, LinkModel
from heteroplan.cost_model import ParallelPlan, PlanSegment, estimate_iteration_time
from heteroplan.errors import ValidationError
from heteroplan.simulator import (
    BACKWARD,
    FORWARD,
    RECOMPUTE,
    TRANSFER_FWD,
    UPDATE,
    CommConfig,
    ScheduleTrace,
    TraceEvent,
    load_trace_events,
    simulate_iteration,
    export_trace,
    trace_metrics,
)


def uniform_profile(update=0.03, chip="u", tp=2):
    prof = ProfileTable()
    prof.compute[(chip, tp)] = (0.1, 0.2, 0.1)
    for dp in (1, 2, 4):
        prof.update[(chip, dp, tp)] = update
        prof.model[(chip, dp, tp)] = 1.0
    prof.activation[(chip, tp, False)] = 1.0
    prof.activation[(chip, tp, True)] = 0.25
    return prof


def uniform_plan(pp=4, b=8, lps=2, tp=2, recompute=False):
    return ParallelPlan(
        dp=2,
        microbatches=b,
        segments=(PlanSegment("u", pp, tp, recompute, pp * lps),),
    )


def test_homogeneous_closed_form_and_model_agreement():
    # zero comm, uniform stages: makespan = (b + p - 1)*Tc + Tu
    prof = uniform_profile()
    plan = uniform_plan(pp=4, b=8, lps=2)
    trace = simulate_iteration(plan, prof, CommConfig.zero())
    tc, tu = 2 * 0.3, 2 * 0.03
    want = (8 + 4 - 1) * tc + tu
    assert math.isclose(trace.iteration_time, want, rel_tol=1e-12)
    model = estimate_iteration_time(plan, prof, WorkloadSpec(8, 16))
    assert math.isclose(trace.iteration_time, model.total, rel_tol=1e-12)


def test_single_microbatch_equals_sum_of_parts():
    prof = uniform_profile()
    plan = uniform_plan(pp=3, b=1, lps=2)
    trace = simulate_iteration(plan, prof, CommConfig.zero())
    # one microbatch walks down and back with no pipelining at all
    assert math.isclose(trace.iteration_time, 3 * 0.6 + 0.06, rel_tol=1e-12)
    model = estimate_iteration_time(plan, prof, WorkloadSpec(6, 2))
    assert math.isclose(trace.iteration_time, model.total, rel_tol=1e-12)


def test_bubble_fraction_closed_form():
    # with zero update time every stage idles exactly (p-1)/(b+p-1)
    prof = uniform_profile()
    for dp in (1, 2, 4):
        prof.update[("u", dp, 2)] = 1e-15
    p, b = 4, 8
    trace = simulate_iteration(uniform_plan(pp=p, b=b), prof, CommConfig.zero())
    stats = trace_metrics(trace)
    want = (p - 1) / (b + p - 1)
    for frac in stats["bubble_fraction"]:
        assert math.isclose(frac, want, rel_tol=1e-9)


def test_peak_in_flight_matches_1f1b_window():
    prof = uniform_profile()
    p, b = 5, 3
    plan = ParallelPlan(dp=2, microbatches=b, segments=(PlanSegment("u", p, 2, False, 5),))
    trace = simulate_iteration(plan, prof, CommConfig.zero())
    assert trace.peak_in_flight == tuple(min(b, p - s + 1) for s in range(1, p + 1))
    p2, b2 = 3, 8
    trace = simulate_iteration(uniform_plan(pp=p2, b=b2, lps=1), prof, CommConfig.zero())
    assert trace.peak_in_flight == (3, 2, 1)


def test_recompute_runs_before_each_backward():
    prof = uniform_profile()
    plan = uniform_plan(pp=2, b=3, lps=2, recompute=True)
    trace = simulate_iteration(plan, prof, CommConfig.zero())
    recs = [e for e in trace.events if e.kind == RECOMPUTE]
    bwds = {(e.stage, e.microbatch): e for e in trace.events if e.kind == BACKWARD}
    assert len(recs) == 2 * 3  # every stage recomputes every microbatch
    for r in recs:
        assert math.isclose(r.end - r.start, 2 * 0.1, rel_tol=1e-12)
        b = bwds[(r.stage, r.microbatch)]
        assert math.isclose(b.start, r.end, rel_tol=1e-12)
    # recompute time counts toward the stage's busy time
    assert math.isclose(
        trace.busy_time[0],
        sum(e.end - e.start for e in trace.events if e.stage == 1 and e.kind != TRANSFER_FWD),
        rel_tol=1e-12,
    )


def test_transfers_delay_consumers_but_not_busy_time():
    prof = uniform_profile()
    plan = uniform_plan(pp=2, b=2, lps=1)
    link = LinkModel(CPU_MEDIATED_TCP, 0.05, 1 * GIB, 1e-12)
    slow = simulate_iteration(plan, prof, CommConfig(link=link, activation_bytes=0.0))
    fast = simulate_iteration(plan, prof, CommConfig.zero())
    assert slow.iteration_time > fast.iteration_time
    # same stage work, only shifted in time (1 ulp drift from the shift)
    for a, b in zip(slow.busy_time, fast.busy_time):
        assert math.isclose(a, b, rel_tol=1e-12)
    # fully overlapped transfers recover the zero-comm makespan
    hidden = simulate_iteration(
        plan, prof, CommConfig(link=link, activation_bytes=0.0), overlap_fraction=1.0
    )
    assert math.isclose(hidden.iteration_time, fast.iteration_time, rel_tol=1e-12)
    with pytest.raises(ValidationError):
        simulate_iteration(plan, prof, CommConfig.zero(), overlap_fraction=1.5)


def test_heterogeneous_stages_and_resharding_boundary():
    prof = uniform_profile(chip="u", tp=1)
    prof.compute[("v", 2)] = (0.05, 0.1, 0.05)
    for dp in (1, 2):
        prof.update[("v", dp, 2)] = 0.01
        prof.model[("v", dp, 2)] = 1.0
    prof.activation[("v", 2, False)] = 1.0
    prof.activation[("v", 2, True)] = 0.25
    plan = ParallelPlan(
        dp=2,
        microbatches=4,
        segments=(PlanSegment("u", 2, 1, False, 4), PlanSegment("v", 1, 2, False, 3)),
    )
    link = LinkModel(DEVICE_DIRECT_RDMA, 0.01, 1 * GIB, 0.0)
    comm = CommConfig(link=link, activation_bytes=float(GIB))
    trace = simulate_iteration(plan, prof, comm)
    # widening tp 1 -> 2 reshards over two parallel streams; the 1 -> 1
    # boundary ships the tensor whole
    t_plain = [e for e in trace.events if e.kind == TRANSFER_FWD and e.stage == 1]
    t_reshard = [e for e in trace.events if e.kind == TRANSFER_FWD and e.stage == 2]
    assert math.isclose(t_plain[0].end - t_plain[0].start, comm.boundary_time(1, 1), rel_tol=1e-12)
    assert math.isclose(t_reshard[0].end - t_reshard[0].start, comm.boundary_time(1, 2), rel_tol=1e-12)
    assert comm.boundary_time(1, 2) < comm.boundary_time(1, 1)


def test_from_events_validation():
    ok = TraceEvent(1, 1, FORWARD, 0.0, 1.0)
    with pytest.raises(ValidationError):
        ScheduleTrace.from_events([TraceEvent(1, 1, "loiter", 0.0, 1.0)])
    with pytest.raises(ValidationError):
        ScheduleTrace.from_events([TraceEvent(1, 1, FORWARD, 1.0, 0.5)])
    with pytest.raises(ValidationError):
        ScheduleTrace.from_events([TraceEvent(0, 1, FORWARD, 0.0, 1.0)])
    with pytest.raises(ValidationError):
        ScheduleTrace.from_events([ok, TraceEvent(1, 2, BACKWARD, 0.5, 1.5)])
    trace = ScheduleTrace.from_events([ok, TraceEvent(1, 1, BACKWARD, 1.0, 2.0)])
    assert trace.iteration_time == 2.0
    assert trace.peak_in_flight == (1,)


def test_update_runs_after_drain():
    prof = uniform_profile()
    trace = simulate_iteration(uniform_plan(pp=2, b=4, lps=1), prof, CommConfig.zero())
    for s in (1, 2):
        upd = [e for e in trace.events if e.kind == UPDATE and e.stage == s]
        assert len(upd) == 1
        last_bwd = max(e.end for e in trace.events if e.kind == BACKWARD and e.stage == s)
        assert upd[0].start >= last_bwd


def test_trace_export_round_trip(tmp_path):
    prof = uniform_profile()
    trace = simulate_iteration(uniform_plan(pp=2, b=2, lps=1), prof, CommConfig.zero())
    path = str(tmp_path / "trace.json")
    export_trace(trace, path)
    records = load_trace_events(path)
    assert len(records) == len(trace.events)
    by_name = {}
    for rec in records:
        assert rec["ph"] == "X"
        assert rec["tid"] in (0, 1)
        by_name.setdefault(rec["name"], []).append(rec)
    # timestamps are microseconds
    fwd = by_name["forward mb1"][0]
    src = next(e for e in trace.events if e.kind == FORWARD and e.microbatch == 1 and e.stage == 1)
    assert math.isclose(fwd["ts"], src.start * 1e6, rel_tol=1e-12)
    assert math.isclose(fwd["dur"], (src.end - src.start) * 1e6, rel_tol=1e-12)
    assert "update" in by_name
    bad = tmp_path / "bad.json"
    bad.write_text('{"not": "a list"}')
    with pytest.raises(ValidationError):
        load_trace_events(str(bad))


def test_simulator_matches_model_on_a_mixed_recompute_plan():
    # mixed recompute and unequal layer counts, still zero comm: the analytic
    # stage bound and the event schedule must agree on the makespan
    prof = synthesize_profile(1.0, 32 * GIB, 0.9, 0.1, chip="a", tp_max=2)
    prof = prof.merged_with(synthesize_profile(0.5, 16 * GIB, 0.9, 0.1, chip="b", tp_max=2))
    plan = ParallelPlan(
        dp=2,
        microbatches=16,
        segments=(PlanSegment("a", 2, 2, True, 6), PlanSegment("b", 2, 1, False, 2)),
    )
    trace = simulate_iteration(plan, prof, CommConfig.zero())
    model = estimate_iteration_time(plan, prof, WorkloadSpec(8, 32))
    assert abs(trace.iteration_time - model.total) / trace.iteration_time < 0.02
