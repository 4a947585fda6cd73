"""
Progress tracking module with rates and run counters
"""
import time
import threading
from typing import Any, Dict


class ProgressTracker:
    """Tracks simulation progress with thread-safe updates"""

    def __init__(self):
        self.start_time = time.time()
        self.total_steps = 0
        self.total_frames = 0
        self.runs_completed = 0
        self.runs_failed = 0
        self.sim_time = 0.0
        self.current_status = "Initializing..."
        self._lock = threading.Lock()

    def add_steps(self, count: int) -> None:
        """Add accepted time steps to counter"""
        with self._lock:
            self.total_steps += count

    def add_frame(self, t: float) -> None:
        """Record an output frame at simulation time t"""
        with self._lock:
            self.total_frames += 1
            self.sim_time = max(self.sim_time, t)

    def finish_run(self, ok: bool) -> None:
        with self._lock:
            if ok:
                self.runs_completed += 1
            else:
                self.runs_failed += 1

    def update_status(self, status: str) -> None:
        """Update current status message"""
        with self._lock:
            self.current_status = status

    def get_stats(self) -> Dict[str, Any]:
        """Get current progress statistics"""
        with self._lock:
            elapsed = time.time() - self.start_time
            steps_per_sec = self.total_steps / elapsed if elapsed > 0 else 0

            return {
                'elapsed_time': elapsed,
                'total_steps': self.total_steps,
                'total_frames': self.total_frames,
                'runs_completed': self.runs_completed,
                'runs_failed': self.runs_failed,
                'sim_time': self.sim_time,
                'steps_per_second': steps_per_sec,
                'current_status': self.current_status
            }
