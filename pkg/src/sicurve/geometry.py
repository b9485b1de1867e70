"""Structured tetrahedral meshes for the uniform tissue slab and the
multi-cell microstructure, with volume and surface tags.

All coordinates are in mm.  Hexahedral grid cells are split into six
tetrahedra (Kuhn subdivision) with a single global orientation so that
neighbouring hexes produce conforming faces.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

# facet kinds
INTERNAL = 0
EXTERIOR = 1
MEMBRANE = 2
GAP = 3

EXTRACELLULAR = 0  # volume tag; intracellular subdomains are 1..N

_TOL = 1e-9  # closed-boundary tolerance for point-in-box tests (mm)

# Kuhn subdivision: six tets per hex, one per permutation of the axes,
# marching from local corner 0 to corner 7.
_AXIS_PERMS = [(0, 1, 2), (0, 2, 1), (1, 0, 2), (1, 2, 0), (2, 0, 1), (2, 1, 0)]


class MeshError(ValueError):
    pass


@dataclass(frozen=True)
class BoxSpec:
    """Axis-aligned box given by origin corner and edge lengths (mm)."""

    origin: tuple[float, float, float]
    extents: tuple[float, float, float]

    def __post_init__(self):
        if any(e <= 0 for e in self.extents):
            raise MeshError(f"box extents must be strictly positive, got {self.extents}")

    @property
    def lo(self) -> np.ndarray:
        return np.asarray(self.origin, dtype=float)

    @property
    def hi(self) -> np.ndarray:
        return self.lo + np.asarray(self.extents, dtype=float)

    def contains(self, points: np.ndarray) -> np.ndarray:
        """Closed-box membership test for an (n, 3) array of points."""
        p = np.atleast_2d(points)
        return np.all((p >= self.lo - _TOL) & (p <= self.hi + _TOL), axis=1)


@dataclass(frozen=True)
class EmiCellLayout:
    """Lattice of cuboid cells joined by junction cuboids.

    Each cell body sits centered inside its pericell box; bodies adjacent in
    x or y are joined by a junction cuboid spanning the space between them.
    ``junction_extents`` is given for an x-junction; y-junctions use the
    same cuboid with the x and y sizes swapped.
    """

    nx: int = 25
    ny: int = 25
    body_extents: tuple[float, float, float] = (0.155, 0.020, 0.020)
    junction_extents: tuple[float, float, float] = (0.005, 0.010, 0.005)
    pericell_box: tuple[float, float, float] = (0.16, 0.025, 0.025)

    def __post_init__(self):
        if self.nx < 1 or self.ny < 1:
            raise MeshError("cell counts must be >= 1")
        body = np.asarray(self.body_extents)
        peri = np.asarray(self.pericell_box)
        junc = np.asarray(self.junction_extents)
        if not np.all(body < peri):
            raise MeshError("cell body must fit strictly inside its pericell box")
        if not np.all(junc < body):
            raise MeshError("junction extents must be smaller than the body in all axes")

    @property
    def domain_extents(self) -> tuple[float, float, float]:
        px, py, pz = self.pericell_box
        return (self.nx * px, self.ny * py, pz)

    def cell_index(self, i: int, j: int) -> int:
        """1-based cell id, row-major with x fastest."""
        return j * self.nx + i + 1

    def body_box(self, i: int, j: int) -> BoxSpec:
        peri = np.asarray(self.pericell_box)
        body = np.asarray(self.body_extents)
        off = (peri - body) / 2.0
        origin = np.array([i * peri[0], j * peri[1], 0.0]) + off
        return BoxSpec(tuple(origin), tuple(body))

    def junction_box(self, i: int, j: int, axis: int) -> BoxSpec:
        """Junction cuboid between cell (i, j) and its +axis neighbour."""
        a = self.body_box(i, j)
        if axis == 0:
            b = self.body_box(i + 1, j)
        elif axis == 1:
            b = self.body_box(i, j + 1)
        else:
            raise MeshError("junctions exist along x and y only")
        ext = np.asarray(self.junction_extents, dtype=float)
        if axis == 1:
            ext = ext[[1, 0, 2]]
        gap_lo, gap_hi = a.hi[axis], b.lo[axis]
        ext[axis] = gap_hi - gap_lo
        # centered on the shared body cross-section in the other two axes
        center = (a.lo + a.hi) / 2.0
        origin = center - ext / 2.0
        origin[axis] = gap_lo
        box = BoxSpec(tuple(origin), tuple(ext))
        for ax in range(3):
            if ax == axis:
                continue
            if box.lo[ax] < a.lo[ax] - _TOL or box.hi[ax] > a.hi[ax] + _TOL:
                raise MeshError(
                    f"junction at cell ({i},{j}) axis {axis} protrudes outside the cell bodies"
                )
        return box


@dataclass
class TaggedMesh:
    """Tetrahedral mesh with volume tags, facet tags, and cell adjacency.

    ``facet_tets[:, 0]`` is the tet the oriented facet normal points out of;
    column 1 is -1 for exterior facets.  Membrane and gap facet normals point
    outward from the intracellular side (from the lower-indexed cell across
    a gap junction).
    """

    vertices: np.ndarray
    tets: np.ndarray
    tet_tag: np.ndarray
    facets: np.ndarray
    facet_kind: np.ndarray
    facet_cells: np.ndarray  # (nf, 2): (k, 0) for membrane, (k, l) for gap
    facet_tets: np.ndarray
    adjacency: dict[int, frozenset[int]]
    mesh_pitch: float
    axes: tuple[np.ndarray, np.ndarray, np.ndarray] = field(repr=False, default=None)

    @property
    def num_cells(self) -> int:
        return int(self.tet_tag.max())

    @property
    def bounding_box(self) -> BoxSpec:
        lo = self.vertices.min(axis=0)
        hi = self.vertices.max(axis=0)
        return BoxSpec(tuple(lo), tuple(hi - lo))

    @cached_property
    def tet_volumes(self) -> np.ndarray:
        v = self.vertices
        t = self.tets
        e1 = v[t[:, 1]] - v[t[:, 0]]
        e2 = v[t[:, 2]] - v[t[:, 0]]
        e3 = v[t[:, 3]] - v[t[:, 0]]
        return np.abs(np.einsum("ij,ij->i", np.cross(e1, e2), e3)) / 6.0

    @cached_property
    def tet_centroids(self) -> np.ndarray:
        return self.vertices[self.tets].mean(axis=1)

    @cached_property
    def facet_areas(self) -> np.ndarray:
        v = self.vertices
        f = self.facets
        n = np.cross(v[f[:, 1]] - v[f[:, 0]], v[f[:, 2]] - v[f[:, 0]])
        return np.linalg.norm(n, axis=1) / 2.0

    @cached_property
    def facet_centroids(self) -> np.ndarray:
        return self.vertices[self.facets].mean(axis=1)

    @cached_property
    def facet_normals(self) -> np.ndarray:
        """Unit normals oriented out of facet_tets[:, 0]."""
        v = self.vertices
        f = self.facets
        n = np.cross(v[f[:, 1]] - v[f[:, 0]], v[f[:, 2]] - v[f[:, 0]])
        n /= np.linalg.norm(n, axis=1)[:, None]
        away = self.facet_centroids - self.tet_centroids[self.facet_tets[:, 0]]
        flip = np.einsum("ij,ij->i", n, away) < 0
        n[flip] *= -1.0
        return n

    @cached_property
    def membrane_nodes(self) -> np.ndarray:
        """Sorted vertex indices lying on membrane facets."""
        return np.unique(self.facets[self.facet_kind == MEMBRANE])

    @cached_property
    def gap_nodes(self) -> np.ndarray:
        return np.unique(self.facets[self.facet_kind == GAP])

    def membrane_area(self, cell: int | None = None) -> float:
        sel = self.facet_kind == MEMBRANE
        if cell is not None:
            sel &= self.facet_cells[:, 0] == cell
        return float(self.facet_areas[sel].sum())


def _subdivide_axis(breakpoints: np.ndarray, h: float) -> np.ndarray:
    """Fill each interval between breakpoints with near-h equal subintervals."""
    coords = [breakpoints[0]]
    for a, b in zip(breakpoints[:-1], breakpoints[1:]):
        gap = b - a
        n = max(1, int(round(gap / h)))
        coords.extend(a + gap * np.arange(1, n + 1) / n)
    return np.asarray(coords)


def _build_grid(xs: np.ndarray, ys: np.ndarray, zs: np.ndarray):
    """Vertices and Kuhn 6-tet split of the tensor grid; returns hex ids too."""
    nx, ny, nz = len(xs) - 1, len(ys) - 1, len(zs) - 1
    X, Y, Z = np.meshgrid(xs, ys, zs, indexing="ij")
    vertices = np.stack([X.ravel(), Y.ravel(), Z.ravel()], axis=1)

    def vid(i, j, k):
        return (i * (ny + 1) + j) * (nz + 1) + k

    ii, jj, kk = np.meshgrid(
        np.arange(nx), np.arange(ny), np.arange(nz), indexing="ij"
    )
    ii, jj, kk = ii.ravel(), jj.ravel(), kk.ravel()
    corner = [ii, jj, kk]

    tets = []
    for perm in _AXIS_PERMS:
        loc = [np.array(corner[0]), np.array(corner[1]), np.array(corner[2])]
        path = [vid(*loc)]
        for ax in perm:
            loc[ax] = loc[ax] + 1
            path.append(vid(*loc))
        tets.append(np.stack(path, axis=1))
    tets = np.stack(tets, axis=1).reshape(-1, 4)  # hex-major, 6 tets each

    # enforce positive orientation
    v = vertices
    e1 = v[tets[:, 1]] - v[tets[:, 0]]
    e2 = v[tets[:, 2]] - v[tets[:, 0]]
    e3 = v[tets[:, 3]] - v[tets[:, 0]]
    neg = np.einsum("ij,ij->i", np.cross(e1, e2), e3) < 0
    tets[neg] = tets[neg][:, [0, 2, 1, 3]]

    hex_of_tet = np.repeat(np.arange(nx * ny * nz), 6)
    return vertices, tets.astype(np.int32), hex_of_tet


def _facet_table(tets: np.ndarray):
    """Unique facets and their (up to two) adjacent tets."""
    faces = tets[:, [[1, 2, 3], [0, 2, 3], [0, 1, 3], [0, 1, 2]]].reshape(-1, 3)
    faces = np.sort(faces, axis=1)
    owner = np.repeat(np.arange(len(tets)), 4)
    facets, inverse = np.unique(faces, axis=0, return_inverse=True)
    counts = np.bincount(inverse)
    if counts.max() > 2:
        raise MeshError("non-conforming mesh: facet shared by more than two tets")
    order = np.argsort(inverse, kind="stable")
    facet_tets = np.full((len(facets), 2), -1, dtype=np.int64)
    pos = np.zeros(len(facets), dtype=np.int64)
    for idx in order:
        f = inverse[idx]
        facet_tets[f, pos[f]] = owner[idx]
        pos[f] += 1
    return facets.astype(np.int32), facet_tets


def _tag_facets(facets, facet_tets, tet_tag):
    nf = len(facets)
    kind = np.zeros(nf, dtype=np.int8)
    cells = np.zeros((nf, 2), dtype=np.int32)
    t0, t1 = facet_tets[:, 0], facet_tets[:, 1]
    boundary = t1 < 0
    kind[boundary] = EXTERIOR
    a = tet_tag[t0]
    b = np.where(boundary, a, tet_tag[np.where(boundary, 0, t1)])
    interior = ~boundary
    same = interior & (a == b)
    kind[same] = INTERNAL

    memb = interior & (a != b) & ((a == EXTRACELLULAR) | (b == EXTRACELLULAR))
    k = np.maximum(a, b)
    kind[memb] = MEMBRANE
    cells[memb, 0] = k[memb]

    gap = interior & (a != b) & (a != EXTRACELLULAR) & (b != EXTRACELLULAR)
    kind[gap] = GAP
    cells[gap, 0] = np.minimum(a, b)[gap]
    cells[gap, 1] = np.maximum(a, b)[gap]

    # orient: facet_tets[:,0] is the tet the normal leaves.  Membrane normals
    # leave the intracellular tet; gap normals leave the lower-indexed cell;
    # other interior facets leave the lower tet index.
    swap = np.zeros(nf, dtype=bool)
    swap[memb] = (a[memb] == EXTRACELLULAR)
    swap[gap] = (a[gap] > b[gap])
    plain = interior & same
    swap[plain] = t0[plain] > t1[plain]
    ft = facet_tets.copy()
    ft[swap] = ft[swap][:, ::-1]
    return kind, cells, ft


def _finish_mesh(vertices, tets, tet_tag, h, axes) -> TaggedMesh:
    facets, facet_tets = _facet_table(tets)
    kind, cells, facet_tets = _tag_facets(facets, facet_tets, tet_tag)
    adjacency: dict[int, set] = {}
    gsel = kind == GAP
    for k, l in np.unique(cells[gsel], axis=0) if gsel.any() else []:
        adjacency.setdefault(int(k), set()).add(int(l))
        adjacency.setdefault(int(l), set()).add(int(k))
    ncell = int(tet_tag.max())
    adj = {k: frozenset(adjacency.get(k, set())) for k in range(1, ncell + 1)}
    return TaggedMesh(
        vertices=vertices,
        tets=tets,
        tet_tag=tet_tag,
        facets=facets,
        facet_kind=kind,
        facet_cells=cells,
        facet_tets=facet_tets,
        adjacency=adj,
        mesh_pitch=h,
        axes=axes,
    )


def build_bidomain_mesh(box: BoxSpec, h: float) -> TaggedMesh:
    """Uniform structured mesh of a cuboid; single homogenized volume tag."""
    counts = []
    for ax, name in enumerate("xyz"):
        n = box.extents[ax] / h
        if abs(n - round(n)) > 1e-9 * max(1.0, n):
            raise MeshError(
                f"extent {box.extents[ax]} along {name} is not an integer multiple of h={h}"
            )
        counts.append(int(round(n)))
    axes = tuple(
        box.lo[ax] + h * np.arange(counts[ax] + 1) for ax in range(3)
    )
    vertices, tets, _ = _build_grid(*axes)
    tet_tag = np.zeros(len(tets), dtype=np.int32)
    return _finish_mesh(vertices, tets, tet_tag, h, axes)


def build_emi_mesh(layout: EmiCellLayout, h: float = 0.005) -> TaggedMesh:
    """Mesh the cell lattice; junction tets join the lower-indexed cell."""
    for name, dims in (
        ("body", layout.body_extents),
        ("junction", layout.junction_extents),
        ("pericell", layout.pericell_box),
    ):
        for ax, d in enumerate(dims):
            n = d / h
            if abs(n - round(n)) > 1e-9 * max(1.0, n):
                raise MeshError(
                    f"{name} dimension {d} along axis {ax} is not an integer multiple of h={h}"
                )

    boxes: list[tuple[BoxSpec, int]] = []  # (box, owning cell)
    for j in range(layout.ny):
        for i in range(layout.nx):
            k = layout.cell_index(i, j)
            boxes.append((layout.body_box(i, j), k))
            if i + 1 < layout.nx:
                boxes.append((layout.junction_box(i, j, axis=0), k))
            if j + 1 < layout.ny:
                boxes.append((layout.junction_box(i, j, axis=1), k))

    ex, ey, ez = layout.domain_extents
    axes = []
    for ax, length in enumerate((ex, ey, ez)):
        bps = {0.0, length}
        for box, _ in boxes:
            bps.add(float(box.lo[ax]))
            bps.add(float(box.hi[ax]))
        bps = np.array(sorted(bps))
        bps = bps[np.concatenate(([True], np.diff(bps) > _TOL))]
        axes.append(_subdivide_axis(bps, h))

    vertices, tets, _ = _build_grid(*axes)
    centroids = vertices[tets].mean(axis=1)
    tet_tag = np.zeros(len(tets), dtype=np.int32)
    for box, k in boxes:
        inside = box.contains(centroids)
        tet_tag[inside] = k
    return _finish_mesh(vertices, tets, tet_tag, h, tuple(axes))


def region_select(mesh: TaggedMesh, box: BoxSpec, target: str) -> np.ndarray:
    """Indices of nodes or membrane facets with centroid inside the closed box."""
    if target == "volume-nodes":
        idx = np.nonzero(box.contains(mesh.vertices))[0]
    elif target == "membrane-facets":
        memb = np.nonzero(mesh.facet_kind == MEMBRANE)[0]
        idx = memb[box.contains(mesh.facet_centroids[memb])]
    else:
        raise MeshError(f"unknown region target {target!r}")
    if len(idx) == 0:
        raise MeshError(f"region selection is empty for box {box}")
    return np.sort(idx)


def subdomain_connected(mesh: TaggedMesh, tag: int) -> bool:
    """True if the tets carrying ``tag`` form one face-connected component."""
    sel = np.nonzero(mesh.tet_tag == tag)[0]
    if len(sel) == 0:
        return False
    remap = -np.ones(len(mesh.tets), dtype=np.int64)
    remap[sel] = np.arange(len(sel))
    interior = mesh.facet_kind != EXTERIOR
    t0 = mesh.facet_tets[interior, 0]
    t1 = mesh.facet_tets[interior, 1]
    keep = (remap[t0] >= 0) & (remap[t1] >= 0)
    i, j = remap[t0[keep]], remap[t1[keep]]
    n = len(sel)
    g = coo_matrix((np.ones(len(i)), (i, j)), shape=(n, n))
    ncomp, _ = connected_components(g, directed=False)
    return ncomp == 1
