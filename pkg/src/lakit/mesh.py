"""Triangular meshes: topology, the ASCII mesh format, and red-green refinement."""

from __future__ import annotations

from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field
import logging
from pathlib import Path
from typing import Literal, NamedTuple

import numpy as np

from .errors import MeshError

logger = logging.getLogger(__name__)

MESH_HEADER = "lakit-mesh 1"

Edge = Literal["left", "right", "bottom", "top"]
EDGES: tuple[Edge, ...] = ("left", "right", "bottom", "top")

NodePair = tuple[int, int]


class Facet(NamedTuple):
    """One mesh facet with its adjacent cells and geometry."""

    nodes: NodePair
    cells: tuple[int, ...]
    normal: tuple[float, float]
    length: float


class EdgeSegment(NamedTuple):
    """Tag override for the boundary facets of a rectangle edge inside [lower, upper]."""

    edge: Edge
    lower: float
    upper: float
    tag: str


def _pair(a: int, b: int) -> NodePair:
    return (a, b) if a < b else (b, a)


def _freeze(array: np.ndarray) -> np.ndarray:
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class Mesh:
    """Conforming triangulation with facet topology and boundary tags.

    Cells are stored counter-clockwise. Facet ``f`` joins ``facet_nodes[f]``
    (sorted node pair); ``facet_cells[f]`` lists the lower-indexed cell first
    and ``-1`` in second position on the boundary. Normals point from the
    first cell to the second, or outward on the boundary.

    Green closure cells produced by :func:`refine_marked` remember their parent
    triangle so the next refinement can undo them.
    """

    nodes: np.ndarray
    cells: np.ndarray
    facet_nodes: np.ndarray
    facet_cells: np.ndarray
    facet_normals: np.ndarray
    facet_lengths: np.ndarray
    cell_facets: np.ndarray
    cell_areas: np.ndarray
    boundary_tags: Mapping[int, str]
    green_parents: np.ndarray = field(
        default_factory=lambda: np.zeros((0, 3), dtype=np.int64)
    )
    cell_green: np.ndarray | None = None

    @classmethod
    def from_cells(
        cls,
        nodes: Sequence[Sequence[float]] | np.ndarray,
        cells: Sequence[Sequence[int]] | np.ndarray,
        edge_tags: Mapping[NodePair, str] | None = None,
        *,
        strict_tags: bool = True,
        green_parents: np.ndarray | None = None,
        cell_green: np.ndarray | None = None,
    ) -> Mesh:
        """Build a mesh and its facet topology from node coordinates and cells.

        Args:
            nodes: (N, 2) coordinates.
            cells: (C, 3) node indices; clockwise cells are reoriented.
            edge_tags: boundary tag per node pair.
            strict_tags: reject tags on node pairs that are not boundary facets
                instead of skipping them.

        Raises:
            MeshError: for malformed arrays, degenerate or duplicate cells,
                facets shared by more than two cells, or hanging nodes.
        """
        node_array = np.array(nodes, dtype=float)
        cell_array = np.array(cells, dtype=np.int64)
        if node_array.ndim != 2 or node_array.shape[1] != 2:
            raise MeshError(f"nodes must have shape (N, 2), got {node_array.shape}")
        if cell_array.size == 0:
            raise MeshError("mesh has no cells")
        if cell_array.ndim != 2 or cell_array.shape[1] != 3:
            raise MeshError(f"cells must have shape (C, 3), got {cell_array.shape}")
        if not np.all(np.isfinite(node_array)):
            raise MeshError("node coordinates must be finite")
        if cell_array.min() < 0 or cell_array.max() >= len(node_array):
            raise MeshError("cell references a node index out of range")

        sorted_cells = np.sort(cell_array, axis=1)
        if np.any(sorted_cells[:, 0] == sorted_cells[:, 1]) or np.any(
            sorted_cells[:, 1] == sorted_cells[:, 2]
        ):
            raise MeshError("cell repeats a node index")
        unique_cells, counts = np.unique(sorted_cells, axis=0, return_counts=True)
        if np.any(counts > 1):
            duplicate = unique_cells[np.argmax(counts > 1)]
            raise MeshError(f"duplicate cell with nodes {tuple(int(i) for i in duplicate)}")

        cell_array = cell_array.copy()
        signed = _signed_areas(node_array, cell_array)
        scale = max(float(np.ptp(node_array, axis=0).max()), 1.0) ** 2
        if np.any(np.abs(signed) <= 1e-14 * scale):
            bad = int(np.argmax(np.abs(signed) <= 1e-14 * scale))
            raise MeshError(f"cell {bad} has zero area")
        clockwise = signed < 0
        cell_array[clockwise, 1], cell_array[clockwise, 2] = (
            cell_array[clockwise, 2].copy(),
            cell_array[clockwise, 1].copy(),
        )
        areas = np.abs(signed)

        local_edges = np.stack(
            [cell_array, np.roll(cell_array, -1, axis=1)], axis=2
        ).reshape(-1, 2)
        keys = np.sort(local_edges, axis=1)
        facet_nodes, inverse, counts = np.unique(
            keys, axis=0, return_inverse=True, return_counts=True
        )
        inverse = inverse.reshape(-1)
        if np.any(counts > 2):
            bad = facet_nodes[np.argmax(counts > 2)]
            raise MeshError(
                f"facet {tuple(int(i) for i in bad)} is shared by more than two cells"
            )

        n_facets = len(facet_nodes)
        facet_cells = np.full((n_facets, 2), -1, dtype=np.int64)
        owner = np.repeat(np.arange(len(cell_array)), 3)
        # cells are visited in ascending order, so the lower index lands first
        for slot, facet in zip(owner, inverse):
            if facet_cells[facet, 0] < 0:
                facet_cells[facet, 0] = slot
            else:
                facet_cells[facet, 1] = slot
        cell_facets = inverse.reshape(-1, 3)

        a = node_array[facet_nodes[:, 0]]
        b = node_array[facet_nodes[:, 1]]
        tangent = b - a
        lengths = np.hypot(tangent[:, 0], tangent[:, 1])
        normals = np.column_stack([tangent[:, 1], -tangent[:, 0]]) / lengths[:, None]
        centroids = node_array[cell_array].mean(axis=1)
        outward = 0.5 * (a + b) - centroids[facet_cells[:, 0]]
        flip = np.einsum("ij,ij->i", normals, outward) < 0
        normals[flip] *= -1.0

        tags = _resolve_edge_tags(
            facet_nodes, facet_cells, edge_tags or {}, strict=strict_tags
        )

        mesh = cls(
            nodes=_freeze(node_array),
            cells=_freeze(cell_array),
            facet_nodes=_freeze(facet_nodes.astype(np.int64)),
            facet_cells=_freeze(facet_cells),
            facet_normals=_freeze(normals),
            facet_lengths=_freeze(lengths),
            cell_facets=_freeze(cell_facets.astype(np.int64)),
            cell_areas=_freeze(areas),
            boundary_tags=tags,
            green_parents=_freeze(
                np.zeros((0, 3), dtype=np.int64)
                if green_parents is None
                else np.asarray(green_parents, dtype=np.int64)
            ),
            cell_green=None
            if cell_green is None
            else _freeze(np.asarray(cell_green, dtype=np.int64)),
        )
        hanging = find_hanging_nodes(mesh)
        if hanging:
            raise MeshError(
                f"mesh is not conforming: hanging node(s) {sorted(hanging)[:5]}"
            )
        return mesh

    @property
    def num_nodes(self) -> int:
        return len(self.nodes)

    @property
    def num_cells(self) -> int:
        return len(self.cells)

    @property
    def num_facets(self) -> int:
        return len(self.facet_nodes)

    @property
    def boundary_facets(self) -> np.ndarray:
        return np.flatnonzero(self.facet_cells[:, 1] < 0)

    @property
    def interior_facets(self) -> np.ndarray:
        return np.flatnonzero(self.facet_cells[:, 1] >= 0)

    @property
    def cell_centroids(self) -> np.ndarray:
        return self.nodes[self.cells].mean(axis=1)

    @property
    def tags(self) -> frozenset[str]:
        return frozenset(self.boundary_tags.values())

    @property
    def area(self) -> float:
        return float(self.cell_areas.sum())

    def facet(self, index: int) -> Facet:
        """Return the facet record at ``index``."""
        cells = tuple(int(c) for c in self.facet_cells[index] if c >= 0)
        a, b = self.facet_nodes[index]
        nx, ny = self.facet_normals[index]
        return Facet(
            nodes=(int(a), int(b)),
            cells=cells,
            normal=(float(nx), float(ny)),
            length=float(self.facet_lengths[index]),
        )

    def tagged_facets(self, tag: str) -> np.ndarray:
        """Return sorted boundary facet indices carrying ``tag``."""
        return np.array(
            sorted(f for f, t in self.boundary_tags.items() if t == tag), dtype=np.int64
        )

    def edge_tags(self) -> dict[NodePair, str]:
        """Return boundary tags keyed by sorted node pair."""
        return {
            (int(self.facet_nodes[f, 0]), int(self.facet_nodes[f, 1])): tag
            for f, tag in self.boundary_tags.items()
        }

    def is_green(self, cell: int) -> bool:
        return self.cell_green is not None and self.cell_green[cell] >= 0


def _signed_areas(nodes: np.ndarray, cells: np.ndarray) -> np.ndarray:
    p0, p1, p2 = nodes[cells[:, 0]], nodes[cells[:, 1]], nodes[cells[:, 2]]
    e1, e2 = p1 - p0, p2 - p0
    return 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])


def _resolve_edge_tags(
    facet_nodes: np.ndarray,
    facet_cells: np.ndarray,
    edge_tags: Mapping[NodePair, str],
    *,
    strict: bool,
) -> dict[int, str]:
    lookup = {
        (int(a), int(b)): f for f, (a, b) in enumerate(facet_nodes)
    }
    tags: dict[int, str] = {}
    for pair, tag in edge_tags.items():
        facet = lookup.get(_pair(*pair))
        if facet is None or facet_cells[facet, 1] >= 0:
            if strict:
                raise MeshError(
                    f"tag {tag!r} refers to nodes {pair} which are not a boundary facet"
                )
            continue
        tags[facet] = tag
    return dict(sorted(tags.items()))


def find_hanging_nodes(mesh: Mesh) -> set[int]:
    """Return nodes lying strictly inside a boundary facet.

    In a non-conforming triangulation the long side of a split edge is seen
    by one cell only, so hanging nodes always sit on some boundary facet.
    """
    hanging: set[int] = set()
    nodes = mesh.nodes
    for facet in mesh.boundary_facets:
        a, b = mesh.facet_nodes[facet]
        pa, pb = nodes[a], nodes[b]
        direction = pb - pa
        length_sq = float(direction @ direction)
        rel = nodes - pa
        cross = rel[:, 0] * direction[1] - rel[:, 1] * direction[0]
        along = rel @ direction
        tol = 1e-12 * length_sq
        inside = (np.abs(cross) <= tol) & (along > tol) & (along < length_sq - tol)
        hanging.update(int(i) for i in np.flatnonzero(inside))
    return hanging


def facet_frame(
    mesh: Mesh, facet: int
) -> tuple[tuple[float, float], tuple[float, float]]:
    """Return the unit normal and tangent of a facet.

    The tangent is the normal rotated by +90 degrees, so (n, t) is
    right-handed.
    """
    nx, ny = mesh.facet_normals[facet]
    return (float(nx), float(ny)), (float(-ny), float(nx))


def generate_rectangle(
    width: float,
    height: float,
    nx: int,
    ny: int,
    tags: Mapping[Edge, str] | None = None,
    *,
    segments: Iterable[EdgeSegment] = (),
) -> Mesh:
    """Generate a crossed-diagonal triangulation of [0, width] x [0, height].

    Each of the ``nx * ny`` rectangles is split into four triangles around its
    center node.

    Args:
        width: Domain width.
        height: Domain height.
        nx: Rectangles along x.
        ny: Rectangles along y.
        tags: Edge name to boundary tag; untagged edges use their own name.
        segments: Per-interval tag overrides along an edge (coordinate along
            the edge is x for bottom/top and y for left/right).

    Raises:
        MeshError: For non-positive dimensions or counts.
    """
    if not (width > 0 and height > 0):
        raise MeshError(f"rectangle dimensions must be positive, got {width}x{height}")
    if nx < 1 or ny < 1:
        raise MeshError(f"rectangle subdivisions must be >= 1, got {nx}x{ny}")
    edge_names = {edge: edge for edge in EDGES}
    for edge, tag in (tags or {}).items():
        if edge not in edge_names:
            raise MeshError(f"unknown rectangle edge {edge!r}")
        edge_names[edge] = tag

    xs = np.linspace(0.0, width, nx + 1)
    ys = np.linspace(0.0, height, ny + 1)
    gx, gy = np.meshgrid(xs, ys)
    corners = np.column_stack([gx.ravel(), gy.ravel()])
    cx, cy = np.meshgrid(0.5 * (xs[:-1] + xs[1:]), 0.5 * (ys[:-1] + ys[1:]))
    centers = np.column_stack([cx.ravel(), cy.ravel()])
    nodes = np.vstack([corners, centers])

    def corner(i: int, j: int) -> int:
        return j * (nx + 1) + i

    cells = []
    for j in range(ny):
        for i in range(nx):
            c = len(corners) + j * nx + i
            c00, c10 = corner(i, j), corner(i + 1, j)
            c01, c11 = corner(i, j + 1), corner(i + 1, j + 1)
            cells.extend([(c00, c10, c), (c10, c11, c), (c11, c01, c), (c01, c00, c)])

    edge_tags: dict[NodePair, str] = {}
    for i in range(nx):
        edge_tags[_pair(corner(i, 0), corner(i + 1, 0))] = edge_names["bottom"]
        edge_tags[_pair(corner(i, ny), corner(i + 1, ny))] = edge_names["top"]
    for j in range(ny):
        edge_tags[_pair(corner(0, j), corner(0, j + 1))] = edge_names["left"]
        edge_tags[_pair(corner(nx, j), corner(nx, j + 1))] = edge_names["right"]

    for segment in segments:
        if segment.edge not in EDGES:
            raise MeshError(f"unknown rectangle edge {segment.edge!r}")
        axis = 0 if segment.edge in ("bottom", "top") else 1
        for pair, tag in list(edge_tags.items()):
            if tag != edge_names[segment.edge] or not _on_edge(
                nodes, pair, segment.edge, width, height
            ):
                continue
            mid = 0.5 * (nodes[pair[0], axis] + nodes[pair[1], axis])
            if segment.lower <= mid <= segment.upper:
                edge_tags[pair] = segment.tag

    return Mesh.from_cells(nodes, cells, edge_tags)


def _on_edge(
    nodes: np.ndarray, pair: NodePair, edge: Edge, width: float, height: float
) -> bool:
    p = nodes[list(pair)]
    if edge == "left":
        return bool(np.all(p[:, 0] == 0.0))
    if edge == "right":
        return bool(np.all(p[:, 0] == width))
    if edge == "bottom":
        return bool(np.all(p[:, 1] == 0.0))
    return bool(np.all(p[:, 1] == height))


def save_mesh(mesh: Mesh, path: Path) -> None:
    """Write a mesh in the ``lakit-mesh 1`` ASCII format."""
    lines = [MESH_HEADER, f"nodes {mesh.num_nodes}"]
    lines.extend(f"{x:.17g} {y:.17g}" for x, y in mesh.nodes)
    lines.append(f"cells {mesh.num_cells}")
    lines.extend(f"{i} {j} {k}" for i, j, k in mesh.cells)
    tags = mesh.edge_tags()
    if tags:
        lines.append(f"tags {len(tags)}")
        lines.extend(f"{a} {b} {tag}" for (a, b), tag in tags.items())
    try:
        Path(path).write_text("\n".join(lines) + "\n")
    except OSError as e:
        raise MeshError(f"Failed to write mesh file: {path}: {e}") from e


def load_mesh(path: Path) -> Mesh:
    """Read a mesh in the ``lakit-mesh 1`` ASCII format.

    Raises:
        MeshError: With the offending line number for format errors, or a
            validation message for non-conforming content.
    """
    path = Path(path)
    if not path.exists():
        raise MeshError(f"Mesh file not found: {path}")
    try:
        raw_lines = path.read_text().splitlines()
    except (OSError, UnicodeDecodeError) as e:
        raise MeshError(f"Failed to read mesh file: {path}: {e}") from e

    lines = [
        (number, line.split())
        for number, line in enumerate(raw_lines, start=1)
        if line.strip() and not line.lstrip().startswith("#")
    ]
    reader = _SectionReader(path, lines)
    header = reader.next_line()
    if header is None or " ".join(header[1]) != MESH_HEADER:
        raise MeshError(f"{path}: line {header[0] if header else 1}: expected header {MESH_HEADER!r}")

    nodes = reader.section("nodes", 2, float)
    cells = reader.section("cells", 3, int)
    edge_tags: dict[NodePair, str] = {}
    if not reader.exhausted():
        for number, (a, b, tag) in reader.section_rows("tags", 3):
            try:
                pair = _pair(int(a), int(b))
            except ValueError:
                raise MeshError(f"{path}: line {number}: node indices must be integers")
            edge_tags[pair] = tag
    if not reader.exhausted():
        number, tokens = reader.next_line()
        raise MeshError(f"{path}: line {number}: unexpected content {' '.join(tokens)!r}")

    try:
        return Mesh.from_cells(nodes, cells, edge_tags)
    except MeshError as e:
        raise MeshError(f"{path}: {e}") from e


class _SectionReader:
    """Cursor over the non-empty lines of a mesh file."""

    def __init__(self, path: Path, lines: list[tuple[int, list[str]]]):
        self.path = path
        self.lines = lines
        self.pos = 0

    def exhausted(self) -> bool:
        return self.pos >= len(self.lines)

    def next_line(self) -> tuple[int, list[str]] | None:
        if self.exhausted():
            return None
        line = self.lines[self.pos]
        self.pos += 1
        return line

    def _count(self, keyword: str) -> int:
        line = self.next_line()
        if line is None:
            raise MeshError(f"{self.path}: missing '{keyword}' section")
        number, tokens = line
        if len(tokens) != 2 or tokens[0] != keyword:
            raise MeshError(f"{self.path}: line {number}: expected '{keyword} <count>'")
        try:
            count = int(tokens[1])
        except ValueError:
            raise MeshError(f"{self.path}: line {number}: count must be an integer")
        if count < 0:
            raise MeshError(f"{self.path}: line {number}: count must be non-negative")
        return count

    def section_rows(self, keyword: str, width: int) -> list[tuple[int, list[str]]]:
        count = self._count(keyword)
        rows = []
        for _ in range(count):
            line = self.next_line()
            if line is None:
                raise MeshError(
                    f"{self.path}: '{keyword}' section ends early, expected {count} rows"
                )
            number, tokens = line
            if len(tokens) != width:
                raise MeshError(
                    f"{self.path}: line {number}: expected {width} values, got {len(tokens)}"
                )
            rows.append(line)
        return rows

    def section(self, keyword: str, width: int, kind: type) -> list[list]:
        values = []
        for number, tokens in self.section_rows(keyword, width):
            try:
                values.append([kind(token) for token in tokens])
            except ValueError:
                raise MeshError(
                    f"{self.path}: line {number}: invalid {kind.__name__} value"
                )
        return values


@dataclass(frozen=True)
class RefinementMark:
    """Set of cells marked for refinement."""

    marked: frozenset[int] = frozenset()

    @classmethod
    def of(cls, cells: Iterable[int]) -> RefinementMark:
        return cls(frozenset(int(c) for c in cells))

    def validate(self, mesh: Mesh) -> None:
        invalid = sorted(c for c in self.marked if c < 0 or c >= mesh.num_cells)
        if invalid:
            raise MeshError(
                f"refinement marks out of range for {mesh.num_cells} cells: {invalid[:5]}"
            )


def refine_marked(mesh: Mesh, marks: RefinementMark) -> Mesh:
    """Red-refine marked cells and close the result with green bisections.

    Green pairs from a previous refinement are first merged back into their
    parent triangle; the parent is red-refined when either child was marked.
    Children inherit the boundary tag of the facet they split.

    Raises:
        MeshError: If a mark is out of range.
    """
    marks.validate(mesh)
    if not marks.marked:
        return mesh

    nodes = [tuple(p) for p in mesh.nodes]
    triangles: list[tuple[int, int, int]] = []
    red: list[bool] = []
    midpoints: dict[NodePair, int] = {}
    seen_groups: set[int] = set()
    for cell, tri in enumerate(mesh.cells):
        group = int(mesh.cell_green[cell]) if mesh.cell_green is not None else -1
        if group < 0:
            triangles.append(tuple(int(v) for v in tri))
            red.append(cell in marks.marked)
            continue
        if group in seen_groups:
            continue
        seen_groups.add(group)
        children = np.flatnonzero(mesh.cell_green == group)
        parent = tuple(int(v) for v in mesh.green_parents[group])
        shared = set(mesh.cells[children[0]]) & set(mesh.cells[children[1]])
        apex = (shared & set(parent)).pop()
        mid = (shared - {apex}).pop()
        p, q = (v for v in parent if v != apex)
        midpoints[_pair(p, q)] = int(mid)
        triangles.append(parent)
        red.append(any(int(c) in marks.marked for c in children))

    def tri_edges(tri: tuple[int, int, int]) -> list[NodePair]:
        return [_pair(tri[k], tri[(k + 1) % 3]) for k in range(3)]

    split: set[NodePair] = set(midpoints)
    for tri, is_red in zip(triangles, red):
        if is_red:
            split.update(tri_edges(tri))
    changed = True
    while changed:
        changed = False
        for t, tri in enumerate(triangles):
            if red[t]:
                continue
            if sum(edge in split for edge in tri_edges(tri)) >= 2:
                red[t] = True
                split.update(tri_edges(tri))
                changed = True

    for edge in sorted(split):
        if edge not in midpoints:
            a, b = edge
            midpoints[edge] = len(nodes)
            nodes.append(
                (0.5 * (nodes[a][0] + nodes[b][0]), 0.5 * (nodes[a][1] + nodes[b][1]))
            )

    new_cells: list[tuple[int, int, int]] = []
    cell_green: list[int] = []
    green_parents: list[tuple[int, int, int]] = []
    for tri, is_red in zip(triangles, red):
        a, b, c = tri
        if is_red:
            mab = midpoints[_pair(a, b)]
            mbc = midpoints[_pair(b, c)]
            mca = midpoints[_pair(c, a)]
            new_cells.extend([(a, mab, mca), (mab, b, mbc), (mca, mbc, c), (mab, mbc, mca)])
            cell_green.extend([-1] * 4)
            continue
        split_local = [k for k, edge in enumerate(tri_edges(tri)) if edge in split]
        if not split_local:
            new_cells.append(tri)
            cell_green.append(-1)
            continue
        k = split_local[0]
        p, q, r = tri[k], tri[(k + 1) % 3], tri[(k + 2) % 3]
        m = midpoints[_pair(p, q)]
        group = len(green_parents)
        green_parents.append(tri)
        new_cells.extend([(p, m, r), (m, q, r)])
        cell_green.extend([group, group])

    edge_tags: dict[NodePair, str] = {}
    for (a, b), tag in mesh.edge_tags().items():
        mid = midpoints.get((a, b))
        if mid is None:
            edge_tags[(a, b)] = tag
        else:
            edge_tags[_pair(a, mid)] = tag
            edge_tags[_pair(mid, b)] = tag

    refined = Mesh.from_cells(
        np.array(nodes),
        np.array(new_cells),
        edge_tags,
        strict_tags=False,
        green_parents=np.array(green_parents, dtype=np.int64).reshape(-1, 3),
        cell_green=np.array(cell_green, dtype=np.int64),
    )
    logger.debug(
        "refined %d marked of %d cells into %d cells",
        len(marks.marked),
        mesh.num_cells,
        refined.num_cells,
    )
    return refined


def refine_uniform(mesh: Mesh) -> Mesh:
    """Red-refine every cell."""
    return refine_marked(mesh, RefinementMark.of(range(mesh.num_cells)))
