"""
Worker Planner Module
Sizes the worker pool for independent runs from local resources and fans jobs out
"""
import multiprocessing
from concurrent.futures import ThreadPoolExecutor, as_completed
from typing import Any, Callable, Dict, List, Optional, Sequence, TypeVar

import psutil
from tqdm import tqdm

from .utils import log_message

T = TypeVar("T")
R = TypeVar("R")

# frames kept in memory per run, and working copies per RK4 step
_FRAMES_PER_RUN = 101
_WORKING_FIELDS = 40


class WorkerPlanner:
    """Chooses how many runs execute concurrently"""

    def __init__(self):
        self.local_specs = self._get_local_specs()

    def _get_local_specs(self) -> Dict[str, Any]:
        """Get local computer specifications"""
        return {
            "cpu_cores": multiprocessing.cpu_count(),
            "memory_gb": psutil.virtual_memory().total / (1024**3),
            "available_memory_gb": psutil.virtual_memory().available / (1024**3),
            "cpu_percent": psutil.cpu_percent(interval=None)
        }

    @staticmethod
    def estimate_run_memory_mb(dim: int, points_per_dim: int) -> float:
        """Rough footprint of one run: stored frames plus RK4 work arrays"""
        field_mb = points_per_dim ** dim * 8 / (1024**2)
        return field_mb * (dim + 1) * _FRAMES_PER_RUN + field_mb * _WORKING_FIELDS * 2

    def plan_workers(self, job_count: int, requested: int = 0,
                     memory_per_run_mb: Optional[float] = None) -> int:
        """Workers to use: the request if given, else cores minus one, capped by memory"""
        if job_count <= 1:
            return 1
        if requested and requested > 0:
            return min(requested, job_count)

        cores = max(1, self.local_specs["cpu_cores"] - 1)  # Leave one core for system
        workers = min(cores, job_count)
        if memory_per_run_mb:
            budget_mb = self.local_specs["available_memory_gb"] * 1024 * 0.5
            workers = min(workers, max(1, int(budget_mb // memory_per_run_mb)))
        return workers

    def get_recommendations(self, workers: int) -> List[str]:
        recommendations = []
        if self.local_specs["available_memory_gb"] < 2:
            recommendations.append("Local memory is limited. Consider fewer parallel runs or smaller grids.")
        if self.local_specs["cpu_percent"] > 80:
            recommendations.append("CPU usage is high. Consider reducing --threads.")
        if workers == 1:
            recommendations.append("Runs will execute sequentially.")
        return recommendations


def run_jobs(fn: Callable[[T], R], items: Sequence[T], workers: int = 1,
             description: str = "runs", show_progress: bool = False) -> List[R]:
    """Apply fn to every item; results come back in item order

    One worker runs sequentially. With several, jobs go to a thread pool;
    the first failure (in item order) is re-raised once all jobs finished.
    """
    items = list(items)
    if not items:
        return []

    if workers <= 1 or len(items) == 1:
        return [fn(item) for item in tqdm(items, desc=description, disable=not show_progress)]

    log_message(f"Using {workers} parallel workers for {len(items)} {description}")
    results: List[Any] = [None] * len(items)
    failures: Dict[int, BaseException] = {}
    with ThreadPoolExecutor(max_workers=workers) as executor:
        futures = {executor.submit(fn, item): i for i, item in enumerate(items)}
        for future in tqdm(as_completed(futures), total=len(futures), desc=description,
                           disable=not show_progress):
            i = futures[future]
            try:
                results[i] = future.result()
            except Exception as e:
                log_message(f"Error in {description} item {items[i]!r}: {e}", "error")
                failures[i] = e

    if failures:
        raise failures[min(failures)]
    return results
