import argparse
import logging
import sys
from collections.abc import Callable
from pathlib import Path

import numpy as np

from .boundary import export_boundary_csv
from .config import RunConfig, TrajectoryMode, load_run_config, settings
from .errors import AtlasError, ConfigInvalid, FileUnreadable
from .library import SolutionLibrary, decompose, expand_control_region, plan_trajectory
from .oracle import grid_audit, mc_audit, write_audit_csv
from .persistence import load_library, save_library
from .plant import Plant, build_plant
from .runtime import drift_monitor, simulate, simulate_trajectory, write_trace_csv
from .search import acceptable_controls
from .workers import child_seed

logger = logging.getLogger(__name__)

COMMANDS = ("learn", "expand", "decompose", "trajectory", "simulate", "audit", "export")


def _fmt(v) -> str:
    return np.array2string(np.asarray(v), precision=6, separator=",", max_line_width=10_000)


def _plant(cfg: RunConfig) -> Plant:
    return build_plant(cfg.plant, budget=cfg.eval_budget or settings.eval_budget)


def _library_path(cfg: RunConfig, out: Path) -> Path:
    return out / cfg.library_file


def _record_lines(lib: SolutionLibrary) -> list[str]:
    lines = []
    for r in lib.records:
        traces = r.provenance.get("fit_traces", [{}])
        lines.append(
            f"record={r.id} control={_fmt(r.control_region.vertices[0])} vertices={len(r.control_region.vertices)} "
            f"surfaces={len(r.surfaces)} rms={r.surfaces[0].rms_residual:.6g} "
            f"stabilized={traces[0].get('stabilized')} evals={r.provenance.get('evals')}"
        )
    return lines


def _learn(cfg: RunConfig, out: Path, workers: int, expand: bool = False) -> list[str]:
    if not cfg.origins:
        raise ConfigInvalid(["origins: at least one origin is needed"])
    plant = _plant(cfg)
    boxes = [cfg.box_for(k) for k in range(len(cfg.origins))]
    lib = decompose(plant, cfg.origins, boxes, cfg.learn_config(), expand=expand, workers=workers)
    save_library(lib, _library_path(cfg, out))
    lines = [f"records={len(lib)} plant={plant.plant_id} plant_evals={plant.counter.count}"] + _record_lines(lib)
    if cfg.search.scan:
        for k, (origin, box) in enumerate(zip(cfg.origins, boxes, strict=True)):
            found = acceptable_controls(plant, origin, box, cfg.search.scan, seed=child_seed(cfg.seed, k))
            lines.append(f"origin={k} acceptable_controls={len(found)}/{cfg.search.scan}")
    return lines


def _decompose(cfg: RunConfig, out: Path, workers: int) -> list[str]:
    return _learn(cfg, out, workers, expand=True)


def _expand(cfg: RunConfig, out: Path, workers: int) -> list[str]:
    plant = _plant(cfg)
    lib = load_library(_library_path(cfg, out))
    for record in lib.records:
        lib = lib.with_record(expand_control_region(plant, record, cfg.learn_config(), workers=workers))
    save_library(lib, _library_path(cfg, out))
    lines = [f"records={len(lib)} plant_evals={plant.counter.count}"]
    for r in lib.records:
        validation = r.provenance.get("expansion", {}).get("validation", {})
        lines.append(
            f"record={r.id} vertices={len(r.control_region.vertices)} surfaces={len(r.surfaces)} "
            f"vertex_pass_rate={validation.get('vertex_pass_rate')} combo_pass_rate={validation.get('combo_pass_rate')}"
        )
    return lines


def _trajectory(cfg: RunConfig, out: Path, workers: int) -> list[str]:
    if cfg.trajectory is None:
        raise ConfigInvalid(["trajectory: section missing"])
    plant = _plant(cfg)
    spec = cfg.trajectory
    plan = plan_trajectory(plant, spec.start_state, spec.waypoints, cfg.learn_config(), spec.mode, workers=workers)
    save_library(SolutionLibrary(plant_id=plant.plant_id, records=plan.records), _library_path(cfg, out))
    lines = [f"waypoints={len(plan.waypoints)} mode={plan.mode}"]
    lines += [f"waypoint={k} control={_fmt(r.control_region.vertices[0])}" for k, (_, r) in enumerate(plan.waypoints)]
    if plan.mode == TrajectoryMode.STATE_FEEDBACK:
        trace = simulate_trajectory(plant, plan, spec.start_state, cfg=cfg.learn_config())
        write_trace_csv(trace, out / "trajectory_trace.csv")
        lines.append(f"steps={len(trace)} in_box={sum(s.in_box for s in trace.steps)}")
    lines.append(f"plant_evals={plant.counter.count}")
    return lines


def _simulate(cfg: RunConfig, out: Path, workers: int) -> list[str]:
    if cfg.simulation is None:
        raise ConfigInvalid(["simulation: section missing"])
    plant = _plant(cfg)
    lib = load_library(_library_path(cfg, out))
    spec = cfg.simulation
    trace = simulate(plant, lib, spec.inputs, spec.policy, spec.fallback)
    write_trace_csv(trace, out / "trace.csv")
    lines = [
        f"steps={len(trace)} in_box={sum(s.in_box for s in trace.steps)} "
        f"fallbacks={sum(s.dispatch.fallback_used for s in trace.steps)} halted_at={trace.halted_at}"
    ]
    if trace.steps:
        request = drift_monitor(trace.steps[-spec.drift_window :], spec.drift_threshold)
        if request is not None:
            lines.append(f"adaptation_origin={_fmt(request.origin)} median_depth={request.median_depth:.6g}")
    return lines


def _audit(cfg: RunConfig, out: Path, workers: int) -> list[str]:
    plant = _plant(cfg)
    lib = load_library(_library_path(cfg, out))
    rows = []
    lines = []
    for record in lib.records:
        report = mc_audit(plant, record, cfg.audit.n_samples, cfg.audit.seed, workers=workers)
        rows.append((record.id, "mc", report))
        lines += [f"record={record.id} audit=mc", report.to_text()]
        if cfg.audit.points_per_dim is not None and plant.n_in <= 3:
            grid = grid_audit(plant, record, cfg.audit.points_per_dim, workers=workers)
            rows.append((record.id, "grid", grid))
            lines += [f"record={record.id} audit=grid", grid.to_text()]
    write_audit_csv(rows, out / "audit.csv")
    return lines


def _export(cfg: RunConfig, out: Path, workers: int) -> list[str]:
    lib = load_library(_library_path(cfg, out))
    written = 0
    for record in lib.records:
        stem = record.id.replace("/", "_")
        for j, surface in enumerate(record.surfaces):
            export_boundary_csv(surface, out / f"{stem}_s{j}_samples.csv", out / f"{stem}_s{j}_curve.csv")
            written += 1
    return [f"surfaces_exported={written}"]


PIPELINES: dict[str, Callable[[RunConfig, Path, int], list[str]]] = {
    "learn": _learn,
    "expand": _expand,
    "decompose": _decompose,
    "trajectory": _trajectory,
    "simulate": _simulate,
    "audit": _audit,
    "export": _export,
}


def run(
    command: str,
    config_path: Path,
    out_dir: Path | None = None,
    workers: int | None = None,
    seed: int | None = None,
) -> int:
    """Run one pipeline; returns the process exit status."""
    try:
        cfg = load_run_config(Path(config_path), seed_override=seed)
        out = Path(out_dir) if out_dir is not None else Path(config_path).parent
        out.mkdir(parents=True, exist_ok=True)
        lines = PIPELINES[command](cfg, out, workers or settings.workers)
    except (ConfigInvalid, FileUnreadable) as e:
        logger.error(f"{command} failed: {e}")
        print(e.line(), file=sys.stderr)
        return 2
    except AtlasError as e:
        logger.error(f"{command} failed: {e}")
        print(e.line(), file=sys.stderr)
        return 1
    except ValueError as e:
        logger.error(f"{command} failed: {e}")
        print(f"error={type(e).__name__} module=cli detail={e}", file=sys.stderr)
        return 1
    print("\n".join(lines))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bounded-atlas", description=__doc__)
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", required=True, type=Path, help="JSON run configuration")
    parser.add_argument("--out", type=Path, default=None, help="artifact directory (default: next to the config)")
    parser.add_argument("--workers", type=int, default=None, help="worker threads (env BOUNDED_ATLAS_WORKERS)")
    parser.add_argument("--seed", type=int, default=None, help="override the config's master seed")
    return parser


def cli(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=settings.log_level,
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
    )
    return run(args.command, args.config, args.out, args.workers, args.seed)


if __name__ == "__main__":
    sys.exit(cli())
