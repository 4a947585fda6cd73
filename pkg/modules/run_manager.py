"""
Run orchestration: one simulation into one output directory
"""
import glob
import os
import time
from dataclasses import dataclass
from datetime import datetime
from typing import Any, Dict, List, Optional

import pandas as pd

from . import __version__
from .config_manager import SimConfig, serialize_config
from .diagnostics import DecayFit, decay_fit_above_floor, make_recorder
from .dynamics import State, Trajectory, run
from .errors import DecayFitError, FieldFormatError, NotFlockedError, NumericalAbort
from .field_io import (DIAGNOSTICS_NAME, MANIFEST_NAME, RunManifest, checkpoint_name, read_fields,
                       read_manifest, read_state, record_manifest_files, write_diagnostics,
                       write_fields, write_manifest, write_state, write_table)
from .flocking import FlockDecay, FlockState, flock_decay, flock_distance, flock_limit
from .fractional_kernel import build_kernel_spec
from .progress_tracker import ProgressTracker
from .utils import RNG_ALGORITHM, format_duration, log_message

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_ABORT = 2
EXIT_VERIFY = 3


@dataclass
class RunResult:
    directory: str
    status: str
    exit_code: int
    trajectory: Optional[Trajectory] = None
    flock: Optional[FlockState] = None
    alignment_fit: Optional[DecayFit] = None
    decay: Optional[FlockDecay] = None
    message: Optional[str] = None

    def summary(self) -> Dict[str, Any]:
        """Row for sweep summaries"""
        final_a = float("nan")
        dist = float("nan")
        if self.trajectory is not None and self.trajectory.records:
            last = self.trajectory.records[-1]
            final_a = last.amplitude
            dist = last.flock_dist_inf
        return {
            "directory": self.directory,
            "status": self.status,
            "exit_code": self.exit_code,
            "final_amplitude": final_a,
            "fitted_delta": self.alignment_fit.rate if self.alignment_fit else float("nan"),
            "flock_dist_inf": dist,
            "message": self.message or "",
        }


def write_flock(directory: str, flock: FlockState, fit: Optional[DecayFit],
                decay: Optional[FlockDecay] = None) -> List[str]:
    """flock.dat (profile) and flock_summary.csv (ū, Cauchy tail, fitted δ, flock decay fits)"""
    profile = os.path.join(directory, "flock.dat")
    write_fields(profile, [("rho_inf", flock.rho_inf)], flock.extracted_at)
    row = {f"ubar{i}": v for i, v in enumerate(flock.u_bar, start=1)}
    row.update(extracted_at=flock.extracted_at, cauchy_tail=flock.cauchy_tail,
               fitted_delta=fit.rate if fit else float("nan"))
    row.update((decay or FlockDecay(None, None)).as_row())
    summary = write_table(os.path.join(directory, "flock_summary.csv"), pd.DataFrame([row]))
    return [profile, summary]


def read_flock(profile_path: str, fallback_ubar=None) -> FlockState:
    """FlockState from flock.dat, with ū from the sibling flock_summary.csv"""
    blocks = read_fields(profile_path)
    block = next((b for b in blocks if b.name == "rho_inf"), blocks[0])
    summary_path = os.path.join(os.path.dirname(profile_path) or ".", "flock_summary.csv")
    dim = block.field.grid.dim
    tail = float("nan")
    if os.path.exists(summary_path):
        row = pd.read_csv(summary_path, float_precision="round_trip").iloc[0]
        u_bar = tuple(float(row[f"ubar{i}"]) for i in range(1, dim + 1))
        tail = float(row.get("cauchy_tail", float("nan")))
    elif fallback_ubar is not None:
        log_message(f"No flock_summary.csv next to {profile_path}; using ubar={tuple(fallback_ubar)}",
                    "warning")
        u_bar = tuple(float(v) for v in fallback_ubar)
        if len(u_bar) == 1 and dim == 2:
            u_bar = u_bar * 2
    else:
        raise FieldFormatError(f"no flock_summary.csv next to {profile_path} and no ubar given")
    return FlockState(block.field, u_bar, block.t, tail)


def fit_alignment(traj: Trajectory) -> Optional[DecayFit]:
    if not traj.records or len(traj.records) < 2:
        return None
    try:
        return decay_fit_above_floor(traj.times, [r.amplitude for r in traj.records])
    except DecayFitError:
        return None


class RunManager:
    """Executes one configured run into a directory and leaves a manifest behind"""

    def __init__(self, cfg: SimConfig, out_dir: str, progress: Optional[ProgressTracker] = None):
        self.cfg = cfg
        self.out_dir = out_dir
        self.progress = progress or ProgressTracker()
        self.files: List[str] = []

    def _keep(self, path: str) -> None:
        self.files.append(os.path.relpath(path, self.out_dir))

    def execute(self) -> RunResult:
        cfg = self.cfg
        os.makedirs(self.out_dir, exist_ok=True)
        if os.path.exists(os.path.join(self.out_dir, MANIFEST_NAME)):
            raise FileExistsError(f"{self.out_dir} already holds a run (manifest.yaml exists)")
        manifest = RunManifest(
            config=cfg.to_document(),
            code_version=__version__,
            seed=cfg.seed,
            rng_algorithm=RNG_ALGORITHM,
            started=datetime.now().isoformat(timespec="seconds"),
        )
        with open(os.path.join(self.out_dir, "config.txt"), "w", encoding="utf-8") as fh:
            fh.write(serialize_config(cfg))
        self._keep(os.path.join(self.out_dir, "config.txt"))

        result = RunResult(self.out_dir, "failed", EXIT_USAGE)
        started = time.time()
        self.progress.update_status(f"Running {cfg.name}")
        try:
            spec = build_kernel_spec(cfg.alpha, cfg.grid, cfg.lattice_images)

            def on_frame(index: int, state: State, record) -> None:
                if index % cfg.checkpoint_every == 0:
                    path = os.path.join(self.out_dir, checkpoint_name(state.t))
                    self._keep(write_state(path, state))

            try:
                traj = run(cfg, spec, recorder=make_recorder(spec, cfg.gamma),
                           on_frame=on_frame, progress=self.progress)
            except NumericalAbort as exc:
                self._finish_abort(exc, result)
                return result

            self._keep(write_state(os.path.join(self.out_dir, "final_state.dat"), traj.final))
            result.trajectory = traj
            result.alignment_fit = fit_alignment(traj)
            try:
                result.flock = flock_limit(traj)
            except NotFlockedError as exc:
                log_message(f"Run '{cfg.name}' did not flock: {exc}", "warning")
                result.message = str(exc)
            if result.flock is not None:
                traj.records = [r.with_flock_distances(*flock_distance(s, result.flock))
                                for r, s in zip(traj.records, traj.states)]
                result.decay = flock_decay(traj.states, result.flock)
                for path in write_flock(self.out_dir, result.flock, result.alignment_fit,
                                        result.decay):
                    self._keep(path)
            self._keep(write_diagnostics(os.path.join(self.out_dir, DIAGNOSTICS_NAME),
                                         traj.records, cfg.dim))
            result.status, result.exit_code = "ok", EXIT_OK
            self.progress.finish_run(True)
            log_message(f"Run '{cfg.name}' written to {self.out_dir} in "
                        f"{format_duration(time.time() - started)}")
            return result
        except Exception as exc:
            result.message = str(exc)
            self.progress.finish_run(False)
            raise
        finally:
            manifest.finished = datetime.now().isoformat(timespec="seconds")
            manifest.exit_status = result.status
            manifest.message = result.message
            manifest.files = sorted(set(self.files))
            write_manifest(self.out_dir, manifest)

    def _finish_abort(self, exc: NumericalAbort, result: RunResult) -> None:
        result.status, result.exit_code, result.message = "aborted", EXIT_ABORT, exc.reason
        result.trajectory = exc.trajectory
        if exc.last_good is not None:
            self._keep(write_state(os.path.join(self.out_dir, "last_good_state.dat"), exc.last_good))
        if exc.trajectory is not None and exc.trajectory.records:
            self._keep(write_diagnostics(os.path.join(self.out_dir, DIAGNOSTICS_NAME),
                                         exc.trajectory.records, self.cfg.dim))
        self.progress.finish_run(False)


def load_run_states(directory: str) -> Trajectory:
    """Checkpoints plus the final state of a finished run, in time order"""
    paths = glob.glob(os.path.join(directory, "field_*.dat"))
    final = os.path.join(directory, "final_state.dat")
    if os.path.exists(final):
        paths.append(final)
    if not paths:
        raise FieldFormatError(f"no field checkpoints in {directory}")
    states: Dict[float, State] = {}
    for path in paths:
        s = read_state(path)
        states[s.t] = s
    return Trajectory(states=[states[t] for t in sorted(states)])


def extract_flock(directory: str) -> FlockState:
    """flock subcommand: extract the flock of a finished run directory"""
    read_manifest(directory)
    traj = load_run_states(directory)
    flock = flock_limit(traj)
    fit = None
    diagnostics = os.path.join(directory, DIAGNOSTICS_NAME)
    if os.path.exists(diagnostics):
        frame = pd.read_csv(diagnostics, float_precision="round_trip")
        try:
            fit = decay_fit_above_floor(frame["t"].to_numpy(), frame["amplitude"].to_numpy())
        except DecayFitError:
            fit = None
    for path in (os.path.join(directory, "flock.dat"), os.path.join(directory, "flock_summary.csv")):
        if os.path.exists(path):
            os.remove(path)
    written = write_flock(directory, flock, fit, flock_decay(traj.states, flock))
    record_manifest_files(directory, [os.path.relpath(p, directory) for p in written])
    return flock
