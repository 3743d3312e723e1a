"""Cell geometry for a g-by-g grid laid over a geographic bounding box.

Cells are numbered row-major with row 0 at the top (northern edge), so
cell id = row * g + col. All distances between cells are L1 (Manhattan)
hops; the only legal single step is to one of the 4 orthogonal neighbors.
"""

import math
from dataclasses import dataclass

EARTH_RADIUS_KM = 6371.0088
# one meridian degree on the same sphere haversine_km uses, so grid pitch
# in km and great-circle distances agree
KM_PER_DEG_LAT = math.pi * EARTH_RADIUS_KM / 180.0
KM_PER_DEG_LON_EQ = KM_PER_DEG_LAT

# Neighbor offsets in the fixed order (up, down, left, right). The training
# kernel and the incremental-update recompute accumulate contributions in
# this order; keep them in sync or bitwise reproducibility breaks.
DIRECTIONS = ((-1, 0), (1, 0), (0, -1), (0, 1))


def haversine_km(lat1: float, lon1: float, lat2: float, lon2: float) -> float:
    """Great-circle distance in kilometers."""
    p1, p2 = math.radians(lat1), math.radians(lat2)
    dp = p2 - p1
    dl = math.radians(lon2 - lon1)
    a = math.sin(dp / 2) ** 2 + math.cos(p1) * math.cos(p2) * math.sin(dl / 2) ** 2
    return 2 * EARTH_RADIUS_KM * math.asin(math.sqrt(a))


@dataclass(frozen=True)
class GridMap:
    """Geographic bounding box partitioned into g x g uniform cells."""

    lat_min: float
    lat_max: float
    lon_min: float
    lon_max: float
    g: int

    def __post_init__(self):
        if self.g < 2:
            raise ValueError(f"grid side must be >= 2, got {self.g}")
        if not (self.lat_min < self.lat_max and self.lon_min < self.lon_max):
            raise ValueError("bounding box is empty or inverted")

    @property
    def n_cells(self) -> int:
        return self.g * self.g

    @property
    def cell_height_km(self) -> float:
        return (self.lat_max - self.lat_min) / self.g * KM_PER_DEG_LAT

    @property
    def cell_width_km(self) -> float:
        mid = math.radians((self.lat_min + self.lat_max) / 2)
        return (self.lon_max - self.lon_min) / self.g * KM_PER_DEG_LON_EQ * math.cos(mid)

    @property
    def mean_pitch_km(self) -> float:
        return (self.cell_width_km + self.cell_height_km) / 2

    def contains(self, lat: float, lon: float) -> bool:
        return self.lat_min <= lat <= self.lat_max and self.lon_min <= lon <= self.lon_max

    def cell_of(self, lat: float, lon: float) -> int:
        """Cell id containing the point. Points on the max edges clamp inward."""
        if not self.contains(lat, lon):
            raise ValueError(f"point ({lat}, {lon}) outside bounding box")
        row = int((self.lat_max - lat) / (self.lat_max - self.lat_min) * self.g)
        col = int((lon - self.lon_min) / (self.lon_max - self.lon_min) * self.g)
        row = min(row, self.g - 1)
        col = min(col, self.g - 1)
        return row * self.g + col

    def cell_center(self, cell: int) -> tuple[float, float]:
        """(lat, lon) of the cell's center."""
        row, col = decode_cell(cell, self.g)
        lat = self.lat_max - (row + 0.5) * (self.lat_max - self.lat_min) / self.g
        lon = self.lon_min + (col + 0.5) * (self.lon_max - self.lon_min) / self.g
        return lat, lon

    def center_distance_km(self, a: int, b: int) -> float:
        la, lo = self.cell_center(a)
        lb, lob = self.cell_center(b)
        return haversine_km(la, lo, lb, lob)


def unit_grid(g: int) -> GridMap:
    """A GridMap whose cells are 1 km x 1 km (to haversine precision).

    Used by the synthetic generator and unit tests so that one grid step
    equals one kilometer.
    """
    lat_span = g / KM_PER_DEG_LAT
    mid = math.radians(lat_span / 2)
    lon_span = g / (KM_PER_DEG_LON_EQ * math.cos(mid))
    return GridMap(0.0, lat_span, 0.0, lon_span, g)


def check_cell(cell: int, g: int) -> None:
    if not 0 <= cell < g * g:
        raise ValueError(f"cell id {cell} out of range for g={g}")


def decode_cell(cell: int, g: int) -> tuple[int, int]:
    check_cell(cell, g)
    return divmod(cell, g)


def encode_cell(row: int, col: int, g: int) -> int:
    if not (0 <= row < g and 0 <= col < g):
        raise ValueError(f"({row}, {col}) out of range for g={g}")
    return row * g + col


def neighbors(cell: int, g: int) -> list[int]:
    """In-grid 4-neighbors in (up, down, left, right) order."""
    row, col = decode_cell(cell, g)
    out = []
    for dr, dc in DIRECTIONS:
        r, c = row + dr, col + dc
        if 0 <= r < g and 0 <= c < g:
            out.append(r * g + c)
    return out


def l1_distance(a: int, b: int, g: int) -> int:
    ra, ca = decode_cell(a, g)
    rb, cb = decode_cell(b, g)
    return abs(ra - rb) + abs(ca - cb)


def parity_reachable(a: int, b: int, steps: int, g: int) -> bool:
    """True iff a walk of exactly `steps` orthogonal moves can land on b.

    On a 4-adjacent grid without self loops, a length-t walk reaches only
    cells whose L1 distance has the parity of t and does not exceed t.
    """
    if steps < 0:
        raise ValueError("steps must be >= 0")
    d = l1_distance(a, b, g)
    return steps >= d and (steps - d) % 2 == 0


def relative_adjacent_pair(i: int, j: int, g: int) -> tuple[int, ...]:
    """The 1 or 2 neighbors of j that lie on some shortest route from i.

    When i and j share a row or column there is a single such cell; otherwise
    the vertical and horizontal neighbors of j on i's side both qualify.
    """
    ri, ci = decode_cell(i, g)
    rj, cj = decode_cell(j, g)
    if i == j:
        raise ValueError("relative adjacent pair undefined for i == j")
    out = []
    if ri != rj:
        step = -1 if ri < rj else 1
        out.append((rj + step) * g + cj)
    if ci != cj:
        step = -1 if ci < cj else 1
        out.append(rj * g + cj + step)
    return tuple(out)


def rect_beyond(i: int, j: int, g: int) -> set[int]:
    """Cells on j's far side from i, j's own row/column included.

    For i and j in distinct rows and columns this is the closed quadrant
    whose corner is j, extending away from i; exactly the cells k for which
    j lies on some shortest route i -> k. Same-row or same-column inputs
    degenerate to the 1-D ray continuing through j away from i.
    """
    if i == j:
        raise ValueError("rect_beyond undefined for i == j")
    ri, ci = decode_cell(i, g)
    rj, cj = decode_cell(j, g)
    if ri == rj:
        rows = range(rj, rj + 1)
    elif ri < rj:
        rows = range(rj, g)
    else:
        rows = range(0, rj + 1)
    if ci == cj:
        cols = range(cj, cj + 1)
    elif ci < cj:
        cols = range(cj, g)
    else:
        cols = range(0, cj + 1)
    return {r * g + c for r in rows for c in cols}
