"""Result artifacts: VTK fields, CSV tables, key/value summaries, CBF and the run manifest."""

from __future__ import annotations

import csv
import logging
from collections.abc import Iterable, Mapping, Sequence
from pathlib import Path

import meshio
import numpy as np
import scipy.sparse as sps

from .errors import ExportError
from .fem import FunctionSpace, nodal_average
from .ipm import StandardForm
from .mesh import Mesh

logger = logging.getLogger(__name__)

CONVERGENCE_COLUMNS = ("step", "cells", "dofs", "lambda", "total_dissipation", "wall_time")
SWEEP_COLUMNS = ("index", "angle", "sigma0_xx", "sigma0_yy", "sigma0_xy", "lambda", "status", "point_a", "point_b")
_CBF_CONES = {"Free": "F", "NonNeg": "L+", "Quad": "Q", "RQuad": "QR"}


def format_value(value: object) -> str:
    """Format floats with 17 significant digits; everything else with str()."""
    if isinstance(value, (float, np.floating)):
        return format(float(value), ".17g")
    if isinstance(value, bool):
        return "true" if value else "false"
    return str(value)


def nodal_values(space: FunctionSpace, dofs: np.ndarray) -> np.ndarray:
    """Vertex values (N, value_dim) of a Lagrange field; discontinuous fields are averaged."""
    dofs = np.asarray(dofs, dtype=float)
    vd = space.value_dim
    mesh = space.mesh
    if space.family == "LagrangeContinuous":
        return dofs[: mesh.num_nodes * vd].reshape(mesh.num_nodes, vd)
    if space.family == "LagrangeDiscontinuous":
        local = dofs[space.dof_map].reshape(mesh.num_cells, space.local_nodes, vd)
        if space.degree == 0:
            return nodal_average(mesh, local[:, 0, :])
        return nodal_average(mesh, local[:, :3, :])
    raise ExportError(f"cannot plot a {space.family} field on mesh nodes")


def _open_for_write(path: Path) -> None:
    if not path.parent.exists():
        raise ExportError(f"Output directory does not exist: {path.parent}")


def export_vtk(
    mesh: Mesh,
    path: Path,
    point_data: Mapping[str, np.ndarray] | None = None,
    cell_data: Mapping[str, np.ndarray] | None = None,
) -> Path:
    """Write a legacy ASCII VTK unstructured grid of triangles.

    Point arrays must have one row per node, cell arrays one row per cell.
    Two-component vectors are padded to three components.

    Raises:
        ExportError: On a field/mesh size mismatch or an unwritable path.
    """
    _open_for_write(path)

    def prepare(name: str, values: np.ndarray, count: int, kind: str) -> np.ndarray:
        array = np.asarray(values, dtype=float)
        if array.shape[0] != count:
            raise ExportError(
                f"{kind} field {name!r} has {array.shape[0]} rows, mesh has {count}"
            )
        if array.ndim == 2 and array.shape[1] == 2:
            array = np.column_stack([array, np.zeros(count)])
        return array

    points = np.column_stack([mesh.nodes, np.zeros(mesh.num_nodes)])
    vtk_mesh = meshio.Mesh(
        points,
        [("triangle", np.asarray(mesh.cells))],
        point_data={
            name: prepare(name, values, mesh.num_nodes, "point")
            for name, values in sorted((point_data or {}).items())
        },
        cell_data={
            name: [prepare(name, values, mesh.num_cells, "cell")]
            for name, values in sorted((cell_data or {}).items())
        },
    )
    try:
        vtk_mesh.write(path, file_format="vtk", binary=False)
    except OSError as e:
        raise ExportError(f"Failed to write {path}: {e}") from e
    logger.debug("wrote %s", path)
    return path


def write_table(path: Path, columns: Sequence[str], rows: Iterable[Sequence[object]]) -> Path:
    """Write a CSV file with a header row."""
    _open_for_write(path)
    try:
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(columns)
            for row in rows:
                if len(row) != len(columns):
                    raise ExportError(f"row has {len(row)} values, expected {len(columns)}")
                writer.writerow([format_value(v) for v in row])
    except OSError as e:
        raise ExportError(f"Failed to write {path}: {e}") from e
    return path


def write_summary(path: Path, values: Mapping[str, object]) -> Path:
    """Write ``key = value`` lines in insertion order."""
    _open_for_write(path)
    text = "".join(f"{key} = {format_value(value)}\n" for key, value in values.items())
    try:
        path.write_text(text)
    except OSError as e:
        raise ExportError(f"Failed to write {path}: {e}") from e
    return path


def read_summary(path: Path) -> dict[str, str]:
    """Read a summary written by :func:`write_summary`."""
    result = {}
    for line in path.read_text().splitlines():
        if " = " in line:
            key, value = line.split(" = ", 1)
            result[key] = value
    return result


def write_cbf(sf: StandardForm, path: Path) -> Path:
    """Write a standard-form program in the Conic Benchmark Format.

    Rows are equalities ``A x - b = 0``; variables follow the standard-form
    cone layout.
    """
    _open_for_write(path)
    lines = ["VER", "3", "", "OBJSENSE", "MIN", ""]
    cones = list(sf.cones)
    lines += ["VAR", f"{sf.n} {len(cones)}"]
    lines += [f"{_CBF_CONES[spec.kind]} {spec.dim}" for spec in cones]
    lines.append("")
    if sf.m:
        lines += ["CON", f"{sf.m} 1", f"L= {sf.m}", ""]
    nonzero = np.flatnonzero(sf.c)
    if len(nonzero):
        lines += ["OBJACOORD", str(len(nonzero))]
        lines += [f"{j} {format_value(sf.c[j])}" for j in nonzero]
        lines.append("")
    if sf.offset:
        lines += ["OBJBCOORD", format_value(sf.offset), ""]
    A = sps.coo_matrix(sf.A)
    order = np.lexsort((A.col, A.row))
    if A.nnz:
        lines += ["ACOORD", str(A.nnz)]
        lines += [
            f"{A.row[k]} {A.col[k]} {format_value(A.data[k])}" for k in order
        ]
        lines.append("")
    rhs = np.flatnonzero(sf.b)
    if len(rhs):
        lines += ["BCOORD", str(len(rhs))]
        lines += [f"{i} {format_value(-sf.b[i])}" for i in rhs]
        lines.append("")
    try:
        path.write_text("\n".join(lines))
    except OSError as e:
        raise ExportError(f"Failed to write {path}: {e}") from e
    return path


def write_manifest(
    directory: Path,
    files: Iterable[Path],
    *,
    complete: bool,
    seed: int | None = None,
    note: str | None = None,
) -> Path:
    """Record the artifacts of a run and whether the run finished."""
    path = directory / "MANIFEST"
    lines = [f"complete = {format_value(complete)}"]
    if seed is not None:
        lines.append(f"seed = {seed}")
    if note:
        lines.append(f"note = {note}")
    for file in sorted({Path(f).name for f in files}):
        target = directory / file
        size = target.stat().st_size if target.exists() else 0
        lines.append(f"file = {file} {size}")
    try:
        path.write_text("\n".join(lines) + "\n")
    except OSError as e:
        raise ExportError(f"Failed to write {path}: {e}") from e
    return path
