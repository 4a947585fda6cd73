"""
Serialization of run outputs

FLOCKFIELD v1 text dump, one block per field:

    FLOCKFIELD v1 dim=<n> N=<N> name=<id> t=<time>
    <value>            (N^n lines, row-major, shortest round-trip float)
    ...

Several blocks may follow each other in one file.
"""
import os
import re
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import yaml

from .diagnostics import DiagnosticsRecord, record_columns
from .dynamics import State
from .errors import FieldFormatError
from .torus_fields import ScalarField, TorusGrid, VectorField
from .utils import format_float

HEADER_RE = re.compile(
    r"^FLOCKFIELD v1 dim=(?P<dim>\d+) N=(?P<n>\d+) name=(?P<name>\S+) t=(?P<t>\S+)$")

MANIFEST_NAME = "manifest.yaml"
DIAGNOSTICS_NAME = "diagnostics.csv"


@dataclass(frozen=True)
class FieldBlock:
    name: str
    t: float
    field: ScalarField


def format_field_block(name: str, f: ScalarField, t: float) -> str:
    if not re.fullmatch(r"\S+", name):
        raise FieldFormatError(f"field name must not contain whitespace: {name!r}")
    grid = f.grid
    header = f"FLOCKFIELD v1 dim={grid.dim} N={grid.points_per_dim} name={name} t={format_float(t)}"
    body = "\n".join(repr(float(v)) for v in f.values.ravel(order="C"))
    return header + "\n" + body + "\n"


def write_fields(path: str, blocks: Sequence[Tuple[str, ScalarField]], t: float) -> str:
    with open(path, "w", encoding="utf-8") as fh:
        for name, f in blocks:
            fh.write(format_field_block(name, f, t))
    return path


def parse_fields(text: str) -> List[FieldBlock]:
    lines = text.splitlines()
    blocks = []
    i = 0
    while i < len(lines):
        if not lines[i].strip():
            i += 1
            continue
        match = HEADER_RE.match(lines[i].strip())
        if not match:
            raise FieldFormatError(f"line {i + 1}: expected a FLOCKFIELD v1 header, got {lines[i]!r}")
        try:
            grid = TorusGrid(int(match["dim"]), int(match["n"]))
            t = float(match["t"])
        except ValueError as e:
            raise FieldFormatError(f"line {i + 1}: bad header: {e}") from e
        count = grid.num_points
        raw = lines[i + 1:i + 1 + count]
        if len(raw) != count:
            raise FieldFormatError(f"block '{match['name']}' needs {count} values, found {len(raw)}")
        try:
            values = np.array([float(v) for v in raw], dtype=np.float64).reshape(grid.shape)
        except ValueError as e:
            raise FieldFormatError(f"block '{match['name']}': {e}") from e
        blocks.append(FieldBlock(match["name"], t, ScalarField(grid, values)))
        i += 1 + count
    if not blocks:
        raise FieldFormatError("no FLOCKFIELD blocks found")
    return blocks


def read_fields(path: str) -> List[FieldBlock]:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_fields(fh.read())


def state_blocks(s: State) -> List[Tuple[str, ScalarField]]:
    return [("rho", s.rho)] + [(f"u{i}", c) for i, c in enumerate(s.u, start=1)]


def write_state(path: str, s: State) -> str:
    return write_fields(path, state_blocks(s), s.t)


def read_state(path: str) -> State:
    blocks = {b.name: b for b in read_fields(path)}
    if "rho" not in blocks:
        raise FieldFormatError(f"{path}: no 'rho' block")
    rho = blocks["rho"]
    comps = []
    for i in range(1, rho.field.grid.dim + 1):
        if f"u{i}" not in blocks:
            raise FieldFormatError(f"{path}: no 'u{i}' block")
        comps.append(blocks[f"u{i}"].field)
    return State(rho.field, VectorField(tuple(comps)), rho.t)


def checkpoint_name(t: float) -> str:
    return f"field_{t:.6f}.dat"


# ---------------------------------------------------------------------------
# CSV
# ---------------------------------------------------------------------------

def records_frame(records: Sequence[DiagnosticsRecord], dim: int) -> pd.DataFrame:
    return pd.DataFrame([r.as_row() for r in records], columns=record_columns(dim))


def write_diagnostics(path: str, records: Sequence[DiagnosticsRecord], dim: int) -> str:
    records_frame(records, dim).to_csv(path, index=False, na_rep="nan")
    return path


def read_diagnostics(path: str) -> pd.DataFrame:
    return pd.read_csv(path, float_precision="round_trip")


def write_table(path: str, frame: pd.DataFrame) -> str:
    frame.to_csv(path, index=False, na_rep="nan")
    return path


# ---------------------------------------------------------------------------
# manifests
# ---------------------------------------------------------------------------

@dataclass
class RunManifest:
    config: Dict[str, Any]
    code_version: str
    seed: int
    rng_algorithm: str
    started: str
    finished: Optional[str] = None
    exit_status: str = "running"
    files: List[str] = field(default_factory=list)
    message: Optional[str] = None


def _plain(value):
    if isinstance(value, tuple):
        return [_plain(v) for v in value]
    if isinstance(value, dict):
        return {k: _plain(v) for k, v in value.items()}
    if isinstance(value, (np.floating, np.integer)):
        return value.item()
    return value


def write_manifest(directory: str, manifest: RunManifest) -> str:
    """Write manifest.yaml; refuses to overwrite an existing one"""
    path = os.path.join(directory, MANIFEST_NAME)
    with open(path, "x", encoding="utf-8") as fh:
        yaml.safe_dump(_plain(asdict(manifest)), fh, sort_keys=False)
    return path


def read_manifest(directory: str) -> Dict[str, Any]:
    path = os.path.join(directory, MANIFEST_NAME)
    if not os.path.exists(path):
        raise FieldFormatError(f"no {MANIFEST_NAME} in {directory}")
    with open(path, "r", encoding="utf-8") as fh:
        return yaml.safe_load(fh)


def record_manifest_files(directory: str, names: Sequence[str]) -> str:
    """Add files written after the run finished to its manifest file list

    Every other manifest entry is kept as written.
    """
    document = read_manifest(directory)
    if document.get("exit_status") in (None, "running"):
        raise FieldFormatError(f"{MANIFEST_NAME} in {directory} belongs to an unfinished run")
    document["files"] = sorted(set(document.get("files") or []) | set(names))
    path = os.path.join(directory, MANIFEST_NAME)
    staging = path + ".tmp"
    with open(staging, "w", encoding="utf-8") as fh:
        yaml.safe_dump(_plain(document), fh, sort_keys=False)
    os.replace(staging, path)
    return path
