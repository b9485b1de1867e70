"""Surface-to-volume ratio chi of the homogenized tissue model.

Each cell is booked as a full cuboid whose x and y footprint includes the
half-gap allowance on either side (the pericell cross-section) and whose
height is the bare body height.  Summing that area over the lattice and
dividing by the domain volume gives a per-cell density, so chi is
independent of the lattice size.  The final value is rounded down to a
configured granularity.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .geometry import MEMBRANE, BoxSpec, EmiCellLayout, TaggedMesh


@dataclass(frozen=True)
class ChiReport:
    single_cell_area: float     # mm^2
    total_area: float           # mm^2
    domain_volume: float        # mm^3
    chi_raw: float              # 1/mm
    chi_rounded: float          # 1/mm

    def __post_init__(self):
        if min(self.single_cell_area, self.total_area, self.domain_volume,
               self.chi_raw, self.chi_rounded) <= 0:
            raise ValueError("all report quantities must be positive")
        if not math.isclose(self.chi_raw, self.total_area / self.domain_volume,
                            rel_tol=1e-12):
            raise ValueError("chi_raw must equal total_area / domain_volume")


def single_cell_area(layout: EmiCellLayout) -> float:
    """Six-face cuboid area with the gap-junction width allowance in x and y."""
    ax = layout.pericell_box[0]      # body length + x gap allowance
    ay = layout.pericell_box[1]      # body width + y gap allowance
    az = layout.body_extents[2]      # bare body height
    return 2.0 * (ax * ay + ax * az + ay * az)


def compute_chi(layout: EmiCellLayout, domain: BoxSpec | None = None,
                rounding: float = 10.0) -> ChiReport:
    if rounding <= 0:
        raise ValueError("rounding granularity must be positive")
    if domain is None:
        domain = BoxSpec((0.0, 0.0, 0.0), layout.domain_extents)
    area = single_cell_area(layout)
    n_cells = layout.nx * layout.ny
    total = area * n_cells
    volume = float(domain.extents[0] * domain.extents[1] * domain.extents[2])
    chi_raw = total / volume
    chi_rounded = math.floor(chi_raw / rounding) * rounding
    return ChiReport(area, total, volume, chi_raw, chi_rounded)


def mesh_chi(mesh: TaggedMesh, domain: BoxSpec | None = None) -> float:
    """Cross-check: summed membrane facet area over the domain volume.

    The analytic bookkeeping slightly overestimates this (the cuboid faces
    are counted whole, while the meshed membrane loses the junction
    openings), so agreement is approximate by construction.
    """
    if domain is None:
        domain = mesh.bounding_box
    volume = float(domain.extents[0] * domain.extents[1] * domain.extents[2])
    area = float(mesh.facet_areas[mesh.facet_kind == MEMBRANE].sum())
    return area / volume


def report_lines(report: ChiReport):
    yield f"single-cell membrane area : {report.single_cell_area:.6g} mm^2"
    yield f"total membrane area       : {report.total_area:.6g} mm^2"
    yield f"domain volume             : {report.domain_volume:.6g} mm^3"
    yield f"chi (raw)                 : {report.chi_raw:.6g} /mm"
    yield f"chi (rounded down)        : {report.chi_rounded:.6g} /mm"
