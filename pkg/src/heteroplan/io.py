"""File formats: schema-1 JSON for every object the CLI reads or writes.

Every file is a JSON object with "schema": 1 and a "kind" discriminator.
Units are bytes and seconds throughout (link files spell the unit in the
field name).  Serialization is deterministic: sorted keys, two-space indent,
trailing newline, so identical inputs produce byte-identical files.
Malformed input raises ValidationError naming the file and the field path.
"""
from __future__ import annotations

import json
from importlib import resources
from typing import Any

from .cluster import ChipTypeSpec, ClusterSpec, ProfileTable, WorkloadSpec
from .comm import LinkModel
from .cost_model import CostBreakdown, ParallelPlan, PlanSegment
from .errors import ValidationError

SCHEMA = 1


def dumps(payload: dict) -> str:
    return json.dumps(payload, sort_keys=True, indent=2) + "\n"


def save(payload: dict, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps(payload))


def _load_json(path: str) -> Any:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: not valid JSON: {exc}") from None


def _check_header(data: Any, kind: str, path: str) -> dict:
    if not isinstance(data, dict):
        raise ValidationError(f"{path}: expected a JSON object, got {type(data).__name__}")
    if data.get("schema") != SCHEMA:
        raise ValidationError(f"{path}: schema: expected {SCHEMA}, got {data.get('schema')!r}")
    if data.get("kind") != kind:
        raise ValidationError(f"{path}: kind: expected {kind!r}, got {data.get('kind')!r}")
    return data


def _get(obj: dict, key: str, path: str, where: str) -> Any:
    try:
        return obj[key]
    except KeyError:
        raise ValidationError(f"{path}: {where}: missing field {key!r}") from None


# ---------------------------------------------------------------- cluster

def dump_cluster(cluster: ClusterSpec) -> dict:
    return {
        "schema": SCHEMA,
        "kind": "cluster",
        "chip_types": [
            {
                "name": c.name,
                "count": c.count,
                "safe_memory": c.safe_memory,
                "tp_max": c.tp_max,
                "chips_per_node": c.chips_per_node,
                "nic_count_per_node": c.nic_count_per_node,
                "affinity_bandwidth": c.affinity_bandwidth,
                "non_affinity_bandwidth": c.non_affinity_bandwidth,
                "intra_node_bandwidth": c.intra_node_bandwidth,
            }
            for c in cluster.chip_types
        ],
    }


def parse_cluster(data: Any, path: str = "<data>") -> ClusterSpec:
    data = _check_header(data, "cluster", path)
    raw = _get(data, "chip_types", path, "cluster")
    if not isinstance(raw, list) or not raw:
        raise ValidationError(f"{path}: chip_types: expected a non-empty array")
    chips = []
    for i, item in enumerate(raw):
        where = f"chip_types[{i}]"
        if not isinstance(item, dict):
            raise ValidationError(f"{path}: {where}: expected an object")
        kwargs = {
            "name": str(_get(item, "name", path, where)),
            "count": int(_get(item, "count", path, where)),
            "safe_memory": float(_get(item, "safe_memory", path, where)),
            "tp_max": int(_get(item, "tp_max", path, where)),
        }
        for opt in (
            "chips_per_node",
            "nic_count_per_node",
            "affinity_bandwidth",
            "non_affinity_bandwidth",
            "intra_node_bandwidth",
        ):
            if opt in item:
                conv = int if opt in ("chips_per_node", "nic_count_per_node") else float
                kwargs[opt] = conv(item[opt])
        chips.append(ChipTypeSpec(**kwargs))
    return ClusterSpec.build(chips)


def load_cluster(path: str) -> ClusterSpec:
    return parse_cluster(_load_json(path), path)


def save_cluster(cluster: ClusterSpec, path: str) -> None:
    save(dump_cluster(cluster), path)


# ---------------------------------------------------------------- workload

def dump_workload(workload: WorkloadSpec) -> dict:
    return {
        "schema": SCHEMA,
        "kind": "workload",
        "total_layers": workload.total_layers,
        "global_batch": workload.global_batch,
        "bubble_coefficient": workload.bubble_coefficient,
        "pipeline_overhead": workload.pipeline_overhead,
    }


def parse_workload(data: Any, path: str = "<data>") -> WorkloadSpec:
    data = _check_header(data, "workload", path)
    wl = WorkloadSpec(
        total_layers=int(_get(data, "total_layers", path, "workload")),
        global_batch=int(_get(data, "global_batch", path, "workload")),
        bubble_coefficient=float(data.get("bubble_coefficient", 1.0)),
        pipeline_overhead=float(data.get("pipeline_overhead", 0.0)),
    )
    wl.validate()
    return wl


def load_workload(path: str) -> WorkloadSpec:
    return parse_workload(_load_json(path), path)


def save_workload(workload: WorkloadSpec, path: str) -> None:
    save(dump_workload(workload), path)


# ---------------------------------------------------------------- profile

def dump_profile(profile: ProfileTable) -> dict:
    return {
        "schema": SCHEMA,
        "kind": "profile",
        "compute": [
            {"chip": chip, "tp": tp, "t_fwd": v[0], "t_bwd": v[1], "t_recomp": v[2]}
            for (chip, tp), v in sorted(profile.compute.items())
        ],
        "update": [
            {"chip": chip, "dp": dp, "tp": tp, "t_update": v}
            for (chip, dp, tp), v in sorted(profile.update.items())
        ],
        "activation": [
            {"chip": chip, "tp": tp, "recompute": rec, "bytes": v}
            for (chip, tp, rec), v in sorted(profile.activation.items())
        ],
        "model": [
            {"chip": chip, "dp": dp, "tp": tp, "bytes": v}
            for (chip, dp, tp), v in sorted(profile.model.items())
        ],
    }


def parse_profile(data: Any, path: str = "<data>") -> ProfileTable:
    data = _check_header(data, "profile", path)
    table = ProfileTable()
    for i, item in enumerate(_get(data, "compute", path, "profile")):
        where = f"compute[{i}]"
        key = (str(_get(item, "chip", path, where)), int(_get(item, "tp", path, where)))
        table.compute[key] = (
            float(_get(item, "t_fwd", path, where)),
            float(_get(item, "t_bwd", path, where)),
            float(_get(item, "t_recomp", path, where)),
        )
    for i, item in enumerate(_get(data, "update", path, "profile")):
        where = f"update[{i}]"
        key = (
            str(_get(item, "chip", path, where)),
            int(_get(item, "dp", path, where)),
            int(_get(item, "tp", path, where)),
        )
        table.update[key] = float(_get(item, "t_update", path, where))
    for i, item in enumerate(_get(data, "activation", path, "profile")):
        where = f"activation[{i}]"
        key = (
            str(_get(item, "chip", path, where)),
            int(_get(item, "tp", path, where)),
            bool(_get(item, "recompute", path, where)),
        )
        table.activation[key] = float(_get(item, "bytes", path, where))
    for i, item in enumerate(_get(data, "model", path, "profile")):
        where = f"model[{i}]"
        key = (
            str(_get(item, "chip", path, where)),
            int(_get(item, "dp", path, where)),
            int(_get(item, "tp", path, where)),
        )
        table.model[key] = float(_get(item, "bytes", path, where))
    table.validate()
    return table


def load_profile(path: str) -> ProfileTable:
    return parse_profile(_load_json(path), path)


def save_profile(profile: ProfileTable, path: str) -> None:
    save(dump_profile(profile), path)


# ---------------------------------------------------------------- plan

def dump_plan(plan: ParallelPlan) -> dict:
    return {
        "schema": SCHEMA,
        "kind": "plan",
        "dp": plan.dp,
        "microbatches": plan.microbatches,
        "stages": [
            {
                "chip": s.chip,
                "tp": s.tp,
                "recompute": s.recompute,
                "layers_per_stage": s.layers_per_stage,
            }
            for s in plan.stages
        ],
    }


def parse_plan(data: Any, path: str = "<data>") -> ParallelPlan:
    data = _check_header(data, "plan", path)
    raw = _get(data, "stages", path, "plan")
    if not isinstance(raw, list) or not raw:
        raise ValidationError(f"{path}: stages: expected a non-empty array")
    rows = []
    for i, item in enumerate(raw):
        where = f"stages[{i}]"
        rows.append(
            (
                str(_get(item, "chip", path, where)),
                int(_get(item, "tp", path, where)),
                bool(_get(item, "recompute", path, where)),
                int(_get(item, "layers_per_stage", path, where)),
            )
        )
    # run-length compress equal consecutive stage rows back into segments
    segments: list[PlanSegment] = []
    for chip, tp, rec, lps in rows:
        if segments and (segments[-1].chip, segments[-1].tp, segments[-1].recompute, segments[-1].layers_per_stage) == (chip, tp, rec, lps):
            last = segments[-1]
            segments[-1] = PlanSegment(chip, last.pp + 1, tp, rec, last.layers + lps)
        else:
            segments.append(PlanSegment(chip, 1, tp, rec, lps))
    plan = ParallelPlan(
        dp=int(_get(data, "dp", path, "plan")),
        microbatches=int(_get(data, "microbatches", path, "plan")),
        segments=tuple(segments),
    )
    plan.validate_structure()
    return plan


def load_plan(path: str) -> ParallelPlan:
    return parse_plan(_load_json(path), path)


def save_plan(plan: ParallelPlan, path: str) -> None:
    save(dump_plan(plan), path)


# ---------------------------------------------------------------- breakdown

def dump_breakdown(cost: CostBreakdown) -> dict:
    return {
        "schema": SCHEMA,
        "kind": "breakdown",
        "compute_time": list(cost.compute_time),
        "update_time": list(cost.update_time),
        "bubble_term": list(cost.bubble_term),
        "stage_total": list(cost.stage_total),
        "overhead": cost.overhead,
        "total": cost.total,
    }


def parse_breakdown(data: Any, path: str = "<data>") -> CostBreakdown:
    data = _check_header(data, "breakdown", path)
    return CostBreakdown(
        compute_time=tuple(float(x) for x in _get(data, "compute_time", path, "breakdown")),
        update_time=tuple(float(x) for x in _get(data, "update_time", path, "breakdown")),
        bubble_term=tuple(float(x) for x in _get(data, "bubble_term", path, "breakdown")),
        stage_total=tuple(float(x) for x in _get(data, "stage_total", path, "breakdown")),
        total=float(_get(data, "total", path, "breakdown")),
        overhead=float(data.get("overhead", 0.0)),
    )


# ---------------------------------------------------------------- links

def dump_links(links: dict[str, LinkModel]) -> dict:
    return {
        "schema": SCHEMA,
        "kind": "links",
        "links": {
            name: {
                "mode": lk.mode,
                "base_latency_s": lk.base_latency,
                "bandwidth_Bps": lk.bandwidth,
                "staging_penalty_s_per_B": lk.staging_penalty,
            }
            for name, lk in sorted(links.items())
        },
    }


def parse_links(data: Any, path: str = "<data>") -> dict[str, LinkModel]:
    data = _check_header(data, "links", path)
    raw = _get(data, "links", path, "links")
    if not isinstance(raw, dict):
        raise ValidationError(f"{path}: links: expected an object of named link models")
    out: dict[str, LinkModel] = {}
    for name, item in raw.items():
        where = f"links[{name!r}]"
        out[name] = LinkModel(
            mode=str(_get(item, "mode", path, where)),
            base_latency=float(_get(item, "base_latency_s", path, where)),
            bandwidth=float(_get(item, "bandwidth_Bps", path, where)),
            staging_penalty=float(_get(item, "staging_penalty_s_per_B", path, where)),
        )
    return out


def load_links(path: str) -> dict[str, LinkModel]:
    return parse_links(_load_json(path), path)


def save_links(links: dict[str, LinkModel], path: str) -> None:
    save(dump_links(links), path)


def load_default_links() -> dict[str, LinkModel]:
    """The calibration constants shipped with the package (synthetic)."""
    text = resources.files("heteroplan.data").joinpath("default_links.json").read_text("utf-8")
    return parse_links(json.loads(text), "heteroplan/data/default_links.json")


# ---------------------------------------------------------------- comm config

def dump_comm(comm: "CommConfig") -> dict:  # noqa: F821 (see simulator)
    return {
        "schema": SCHEMA,
        "kind": "comm",
        "link": {
            "mode": comm.link.mode,
            "base_latency_s": comm.link.base_latency,
            "bandwidth_Bps": comm.link.bandwidth,
            "staging_penalty_s_per_B": comm.link.staging_penalty,
        },
        "method": comm.method,
        "intra_bandwidth": comm.intra_bandwidth,
        "activation_bytes": comm.activation_bytes,
        "dst_nic_count": comm.dst_nic_count,
    }


def parse_comm(data: Any, path: str = "<data>") -> "CommConfig":  # noqa: F821
    from .simulator import CommConfig

    data = _check_header(data, "comm", path)
    raw = _get(data, "link", path, "comm")
    link = LinkModel(
        mode=str(_get(raw, "mode", path, "link")),
        base_latency=float(_get(raw, "base_latency_s", path, "link")),
        bandwidth=float(_get(raw, "bandwidth_Bps", path, "link")),
        staging_penalty=float(_get(raw, "staging_penalty_s_per_B", path, "link")),
    )
    return CommConfig(
        link=link,
        method=str(_get(data, "method", path, "comm")),
        intra_bandwidth=float(_get(data, "intra_bandwidth", path, "comm")),
        activation_bytes=float(_get(data, "activation_bytes", path, "comm")),
        dst_nic_count=int(data.get("dst_nic_count", 8)),
    )


def load_comm(path: str) -> "CommConfig":  # noqa: F821
    return parse_comm(_load_json(path), path)


def save_comm(comm: "CommConfig", path: str) -> None:  # noqa: F821
    save(dump_comm(comm), path)
