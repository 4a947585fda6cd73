"""
Parameter sweep driver: one run directory per value of one config key
"""
import os
import re
from typing import Any, List, Optional, Sequence

import pandas as pd

from .config_manager import SIM_SCHEMA, SimConfig
from .errors import ConfigError
from .field_io import write_table
from .progress_tracker import ProgressTracker
from .run_manager import EXIT_USAGE, RunManager, RunResult
from .utils import log_message
from .worker_planner import WorkerPlanner, run_jobs

SUMMARY_NAME = "sweep_summary.csv"


def _directory_name(index: int, key: str, value: Any) -> str:
    label = re.sub(r"[^A-Za-z0-9_.\-]+", "_", f"{key}={value}")
    return f"{index:03d}_{label}"


def parse_values(text: str) -> List[str]:
    """'0.5, 1.0,1.5' -> ['0.5', '1.0', '1.5']"""
    return [v.strip() for v in text.split(",") if v.strip()]


def plan_sweep(template: SimConfig, key: str, values: Sequence[Any]) -> List[SimConfig]:
    """Validate every member config before anything runs"""
    if key not in SIM_SCHEMA:
        raise ConfigError(f"unknown sweep key '{key}'")
    if not values:
        raise ConfigError(f"sweep over '{key}' needs at least one value")
    configs = []
    for i, value in enumerate(values):
        cfg = template.override(key, value)
        configs.append(cfg.override("name", f"{template.name}_{i:03d}"))
    return configs


def _run_member(member: tuple) -> dict:
    cfg, directory, key, value, progress = member
    row = {"key": key, "value": str(value)}
    try:
        result = RunManager(cfg, directory, progress).execute()
    except Exception as e:
        log_message(f"Sweep member {directory} failed: {e}", "error")
        result = RunResult(directory, "failed", EXIT_USAGE, message=str(e))
    row.update(result.summary())
    return row


def sweep(template: SimConfig, key: str, values: Sequence[Any], out_dir: str,
          workers: int = 0, progress: Optional[ProgressTracker] = None) -> pd.DataFrame:
    """Run every value, record each outcome; a failing member never stops the sweep"""
    configs = plan_sweep(template, key, values)
    os.makedirs(out_dir, exist_ok=True)
    progress = progress or ProgressTracker()

    planner = WorkerPlanner()
    memory = planner.estimate_run_memory_mb(template.dim, max(c.n for c in configs))
    workers = planner.plan_workers(len(configs), workers, memory)
    for tip in planner.get_recommendations(workers):
        log_message(tip)
    log_message(f"Sweep over {key}: {len(configs)} runs, {workers} worker(s)")

    members = [(cfg, os.path.join(out_dir, _directory_name(i, key, value)), key, value, progress)
               for i, (cfg, value) in enumerate(zip(configs, values))]
    rows = run_jobs(_run_member, members, workers, description="sweep runs", show_progress=True)

    summary = pd.DataFrame(rows)
    summary["directory"] = [os.path.relpath(d, out_dir) for d in summary["directory"]]
    write_table(os.path.join(out_dir, SUMMARY_NAME), summary)
    failed = int((summary["status"] != "ok").sum())
    log_message(f"Sweep finished: {len(rows) - failed} ok, {failed} not ok")
    return summary
