import math
import os

import pandas as pd
import pytest
import yaml

from modules.config_manager import SimConfig
from modules.errors import FieldFormatError
from modules.field_io import read_manifest
from modules.progress_tracker import ProgressTracker
from modules.run_manager import (EXIT_ABORT, EXIT_OK, RunManager, extract_flock,
                                 load_run_states, read_flock)


def _execute(cfg, directory):
    return RunManager(cfg, str(directory), ProgressTracker()).execute()


class TestRunManager:
    def test_run_directory_layout(self, tmp_path):
        cfg = SimConfig(name="tiny", n=32, t_end=0.5, output_cadence=0.1, checkpoint_every=2)
        result = _execute(cfg, tmp_path)
        assert (result.status, result.exit_code) == ("ok", EXIT_OK)
        manifest = read_manifest(str(tmp_path))
        assert manifest["exit_status"] == "ok"
        assert manifest["seed"] == 12345
        assert manifest["rng_algorithm"] == "numpy.random.PCG64"
        assert manifest["config"]["n"] == 32
        for name in ("config.txt", "final_state.dat", "diagnostics.csv",
                     "field_0.000000.dat", "field_0.200000.dat", "field_0.400000.dat"):
            assert name in manifest["files"]
            assert os.path.exists(tmp_path / name)
        frame = pd.read_csv(tmp_path / "diagnostics.csv")
        assert len(frame) == 6
        assert frame["t"].iloc[-1] == 0.5

    def test_existing_run_is_not_overwritten(self, tmp_path):
        cfg = SimConfig(n=32, t_end=0.1)
        _execute(cfg, tmp_path)
        with pytest.raises(FileExistsError):
            _execute(cfg, tmp_path)

    def test_abort_leaves_last_good_state(self, tmp_path):
        cfg = SimConfig(n=32, a=0.5, t_end=1.0, abort_rho_min=0.99)
        result = _execute(cfg, tmp_path)
        assert (result.status, result.exit_code) == ("aborted", EXIT_ABORT)
        assert os.path.exists(tmp_path / "last_good_state.dat")
        manifest = read_manifest(str(tmp_path))
        assert manifest["exit_status"] == "aborted"
        assert manifest["message"]

    def test_flock_run_writes_the_flock(self, tmp_path):
        cfg = SimConfig(n=32, preset="flock", t_end=1.0, output_cadence=0.25)
        result = _execute(cfg, tmp_path)
        assert result.flock is not None
        assert os.path.exists(tmp_path / "flock.dat")
        flock = read_flock(str(tmp_path / "flock.dat"))
        assert flock.u_bar[0] == pytest.approx(0.5, rel=1e-12)
        assert (flock.rho_inf - result.flock.rho_inf).max_abs() == 0.0
        frame = pd.read_csv(tmp_path / "diagnostics.csv")
        assert frame["flock_dist_inf"].max() < 1e-9
        assert result.decay is not None
        assert math.isnan(pd.read_csv(tmp_path / "flock_summary.csv")["tail_rate"].iloc[0])

    def test_unflocked_run_still_succeeds(self, tmp_path):
        result = _execute(SimConfig(n=32, t_end=0.2), tmp_path)
        assert result.exit_code == EXIT_OK
        assert result.flock is None
        assert "run longer" in result.message
        assert not os.path.exists(tmp_path / "flock.dat")


class TestFlockFiles:
    def test_extract_from_run_directory(self, tmp_path):
        cfg = SimConfig(n=32, preset="flock", t_end=1.0, output_cadence=0.1)
        _execute(cfg, tmp_path)
        traj = load_run_states(str(tmp_path))
        assert [s.t for s in traj.states] == sorted(s.t for s in traj.states)
        flock = extract_flock(str(tmp_path))
        assert flock.extracted_at == 1.0
        assert os.path.exists(tmp_path / "flock_summary.csv")
        summary = pd.read_csv(tmp_path / "flock_summary.csv")
        for column in ("ubar1", "cauchy_tail", "fitted_delta", "tail_rate", "tail_residual",
                       "dist_c1_rate", "dist_c1_residual"):
            assert column in summary.columns

    def test_extract_lists_the_flock_files_in_the_manifest(self, tmp_path):
        cfg = SimConfig(n=32, preset="flock", t_end=1.0, output_cadence=0.1)
        _execute(cfg, tmp_path)
        manifest_path = tmp_path / "manifest.yaml"
        document = yaml.safe_load(manifest_path.read_text(encoding="utf-8"))
        document["files"] = [f for f in document["files"] if not f.startswith("flock")]
        manifest_path.write_text(yaml.safe_dump(document, sort_keys=False), encoding="utf-8")
        for name in ("flock.dat", "flock_summary.csv"):
            os.remove(tmp_path / name)

        extract_flock(str(tmp_path))
        manifest = read_manifest(str(tmp_path))
        assert {"flock.dat", "flock_summary.csv"} <= set(manifest["files"])
        assert "final_state.dat" in manifest["files"]
        assert manifest["exit_status"] == "ok"
        assert manifest["started"] == document["started"]

    def test_extract_needs_a_manifest(self, tmp_path):
        with pytest.raises(FieldFormatError):
            extract_flock(str(tmp_path))

    def test_read_flock_fallback_ubar(self, tmp_path):
        cfg = SimConfig(n=32, preset="flock", t_end=0.5, output_cadence=0.25)
        _execute(cfg, tmp_path)
        os.remove(tmp_path / "flock_summary.csv")
        flock = read_flock(str(tmp_path / "flock.dat"), fallback_ubar=(0.3,))
        assert flock.u_bar == (0.3,)
        with pytest.raises(FieldFormatError):
            read_flock(str(tmp_path / "flock.dat"))
