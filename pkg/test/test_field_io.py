import math

import numpy as np
import pytest

from modules.config_manager import SimConfig
from modules.diagnostics import record_columns, record_state
from modules.dynamics import initial_state
from modules.errors import FieldFormatError
from modules.field_io import (RunManifest, checkpoint_name, format_field_block, parse_fields,
                              read_diagnostics, read_fields, read_manifest, read_state,
                              record_manifest_files, write_diagnostics, write_fields,
                              write_manifest, write_state)
from modules.torus_fields import ScalarField, TorusGrid


class TestFieldBlocks:
    def test_header_and_value_count(self, grid1):
        text = format_field_block("rho", ScalarField.constant(grid1, 1.0), 0.5)
        lines = text.splitlines()
        assert lines[0] == "FLOCKFIELD v1 dim=1 N=128 name=rho t=0.5"
        assert len(lines) == 1 + 128

    def test_values_survive_bit_for_bit(self, tmp_path, generator):
        grid = TorusGrid(2, 16)
        f = generator.random_field(grid, kmax=5, mean=1.0)
        path = str(tmp_path / "f.dat")
        write_fields(path, [("rho", f), ("u1", f * 0.5)], 1.0 / 3.0)
        blocks = read_fields(path)
        assert [b.name for b in blocks] == ["rho", "u1"]
        assert blocks[0].t == 1.0 / 3.0
        np.testing.assert_array_equal(blocks[0].field.values, f.values)
        np.testing.assert_array_equal(blocks[1].field.values, (f * 0.5).values)

    def test_name_with_whitespace(self, grid1):
        with pytest.raises(FieldFormatError):
            format_field_block("two words", ScalarField.constant(grid1, 1.0), 0.0)

    def test_bad_header(self):
        with pytest.raises(FieldFormatError, match="line 1"):
            parse_fields("FIELD dim=1 N=16 name=rho t=0\n")

    def test_truncated_block(self):
        text = "FLOCKFIELD v1 dim=1 N=16 name=rho t=0\n" + "1.0\n" * 10
        with pytest.raises(FieldFormatError, match="needs 16 values"):
            parse_fields(text)

    def test_unparseable_value(self):
        text = "FLOCKFIELD v1 dim=1 N=16 name=rho t=0\n" + "1.0\n" * 15 + "abc\n"
        with pytest.raises(FieldFormatError):
            parse_fields(text)

    def test_grid_that_cannot_exist(self):
        text = "FLOCKFIELD v1 dim=1 N=12 name=rho t=0\n" + "1.0\n" * 12
        with pytest.raises(FieldFormatError, match="bad header"):
            parse_fields(text)

    def test_empty_text(self):
        with pytest.raises(FieldFormatError):
            parse_fields("\n\n")


class TestStates:
    def test_state_round_trip(self, tmp_path):
        s = initial_state(SimConfig(dim=2, n=32, k0=2))
        path = str(tmp_path / checkpoint_name(0.0))
        write_state(path, s)
        back = read_state(path)
        assert back.t == 0.0
        np.testing.assert_array_equal(back.rho.values, s.rho.values)
        np.testing.assert_array_equal(back.u[1].values, s.u[1].values)

    def test_missing_velocity_block(self, tmp_path, grid1):
        path = str(tmp_path / "rho_only.dat")
        write_fields(path, [("rho", ScalarField.constant(grid1, 1.0))], 0.0)
        with pytest.raises(FieldFormatError, match="u1"):
            read_state(path)

    def test_checkpoint_name(self):
        assert checkpoint_name(2.5) == "field_2.500000.dat"


class TestDiagnosticsCsv:
    def test_nan_columns_survive(self, tmp_path, spec1):
        s = initial_state(SimConfig())
        records = [record_state(s, spec1)]
        path = str(tmp_path / "diagnostics.csv")
        write_diagnostics(path, records, 1)
        with open(path, encoding="utf-8") as fh:
            header = fh.readline().strip().split(",")
            row = fh.readline()
        assert header == record_columns(1)
        assert "nan" in row
        frame = read_diagnostics(path)
        assert frame["mass"].iloc[0] == records[0].mass
        assert math.isnan(frame["flock_dist_inf"].iloc[0])


class TestManifest:
    def _manifest(self):
        return RunManifest(config=SimConfig().to_document(), code_version="1.0.0", seed=12345,
                           rng_algorithm="numpy.random.PCG64", started="2024-01-01T00:00:00")

    def test_write_and_read(self, tmp_path):
        write_manifest(str(tmp_path), self._manifest())
        data = read_manifest(str(tmp_path))
        assert data["seed"] == 12345
        assert data["config"]["init.ubar"] == [0.5]
        assert data["exit_status"] == "running"

    def test_manifest_is_write_once(self, tmp_path):
        write_manifest(str(tmp_path), self._manifest())
        with pytest.raises(FileExistsError):
            write_manifest(str(tmp_path), self._manifest())

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(FieldFormatError):
            read_manifest(str(tmp_path))

    def test_late_files_join_a_finished_manifest(self, tmp_path):
        manifest = self._manifest()
        manifest.exit_status, manifest.finished = "ok", "2024-01-01T00:01:00"
        manifest.files = ["config.txt", "final_state.dat"]
        write_manifest(str(tmp_path), manifest)
        record_manifest_files(str(tmp_path), ["flock.dat", "config.txt"])
        data = read_manifest(str(tmp_path))
        assert data["files"] == ["config.txt", "final_state.dat", "flock.dat"]
        assert data["finished"] == "2024-01-01T00:01:00"
        assert data["config"]["init.ubar"] == [0.5]
        assert not (tmp_path / "manifest.yaml.tmp").exists()

    def test_running_manifest_is_left_alone(self, tmp_path):
        write_manifest(str(tmp_path), self._manifest())
        with pytest.raises(FieldFormatError, match="unfinished"):
            record_manifest_files(str(tmp_path), ["flock.dat"])
        assert read_manifest(str(tmp_path))["files"] == []
