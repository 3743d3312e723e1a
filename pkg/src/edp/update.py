"""Incremental model refresh after single-step probability changes.

When a cell's outgoing probabilities change, only trips whose routes can
pass through that cell within their detour budget are affected. Per
origin, the affected destinations form a region anchored at the changed
cell; everything outside the region keeps its stored value bitwise, and
inside it the wavefront recursion is re-run in ascending total length,
reading unaffected neighbors straight from the stored layers.

Two region constructions are provided. `paper` anchors each origin at its
nearest changed cell and grows the beyond-rectangle border by border, one
step per two units of detour. `exact` takes, per origin, every
destination whose best route through any changed cell fits the detour
budget; recomputing exactly that set provably reproduces full retraining.
"""

import csv
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import FormatError
from .grid import decode_cell, l1_distance, neighbors, rect_beyond
from .model import SSTPMatrix, TransitionModel, l1_matrix


@dataclass
class ChangeSet:
    """New outgoing probability rows for a set of cells, tagged by epoch."""

    epoch: int
    changed: dict[int, dict[int, float]]

    def validate(self, g: int) -> None:
        if not self.changed:
            raise ValueError("change set is empty")
        for cell, row in self.changed.items():
            if not 0 <= cell < g * g:
                raise ValueError(f"changed cell {cell} out of range for g={g}")
            if set(row) != set(neighbors(cell, g)):
                raise ValueError(f"cell {cell}: row must cover exactly its in-grid neighbors")
            total = sum(row.values())
            if abs(total - 1.0) > 1e-9:
                raise ValueError(f"cell {cell}: new row sums to {total}")


def load_changeset(path, g: int) -> ChangeSet:
    """Read `epoch,cell_id,neighbor_cell_id,probability` rows."""
    changed: dict[int, dict[int, float]] = {}
    epoch = None
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        required = ("epoch", "cell_id", "neighbor_cell_id", "probability")
        missing = [c for c in required if c not in (reader.fieldnames or [])]
        if missing:
            raise FormatError(f"{path}: missing columns {missing}")
        for row in reader:
            try:
                e = int(row["epoch"])
                cell = int(row["cell_id"])
                nbr = int(row["neighbor_cell_id"])
                p = float(row["probability"])
            except (TypeError, ValueError) as exc:
                raise FormatError(f"{path}: malformed row {row}") from exc
            if epoch is None:
                epoch = e
            elif e != epoch:
                raise FormatError(f"{path}: mixed epochs {epoch} and {e}")
            changed.setdefault(cell, {})[nbr] = p
    if epoch is None:
        raise FormatError(f"{path}: no change rows")
    cs = ChangeSet(epoch, changed)
    cs.validate(g)
    return cs


def nearest_changed_cell(origin: int, cs: ChangeSet, g: int) -> int:
    """Closest changed cell by L1 distance, ties to the smallest id."""
    if not cs.changed:
        raise ValueError("change set is empty")
    return min(cs.changed, key=lambda c: (l1_distance(origin, c, g), c))


@dataclass
class TaaRegion:
    """Affected destination cells per detour budget for one (origin, anchor)."""

    origin: int
    otp: int
    sets: list[frozenset[int]] = field(default_factory=list)

    def cells(self, detour: int) -> frozenset[int]:
        return self.sets[detour // 2]

    @property
    def all_cells(self) -> frozenset[int]:
        return self.sets[-1]


def find_taa(origin: int, otp: int, max_detour: int, g: int) -> TaaRegion:
    """Affected area per the border-growth construction.

    Detour 0 is the closed rectangle beyond the anchor away from the
    origin. Each additional two units of detour take in the in-grid
    neighbors of the region across the two borders that face the origin
    (one border in the degenerate same-row or same-column case).
    """
    if origin == otp:
        raise ValueError("affected area undefined for origin == anchor")
    if max_detour < 0 or max_detour % 2 != 0:
        raise ValueError(f"max_detour must be even and >= 0, got {max_detour}")
    ro, co = decode_cell(origin, g)
    ra, ca = decode_cell(otp, g)
    drow = (ro > ra) - (ro < ra)
    dcol = (co > ca) - (co < ca)
    grow_dirs = [(d, 0) for d in (drow,) if d] + [(0, d) for d in (dcol,) if d]
    region = set(rect_beyond(origin, otp, g))
    sets = [frozenset(region)]
    for _ in range(max_detour // 2):
        added = set()
        for cell in region:
            r, c = divmod(cell, g)
            for dr, dc in grow_dirs:
                rr, cc = r + dr, c + dc
                if 0 <= rr < g and 0 <= cc < g and (rr * g + cc) not in region:
                    added.add(rr * g + cc)
        region |= added
        sets.append(frozenset(region))
    return TaaRegion(origin=origin, otp=otp, sets=sets)


@dataclass
class UpdateStats:
    mode: str
    epoch: int
    origins_recomputed: int
    entries_recomputed: int
    entries_full: int
    wall_ms: float


def _affected_mask_exact(L: np.ndarray, changed_cells: list[int], max_detour: int) -> np.ndarray:
    """(n, n) mask of pairs whose best route via a changed cell fits the budget."""
    n = L.shape[0]
    via = np.full((n, n), np.iinfo(L.dtype).max, dtype=L.dtype)
    for c in changed_cells:
        np.minimum(via, L[:, c:c + 1] + L[c:c + 1, :], out=via)
    return via <= L + max_detour


def _affected_mask_paper(L: np.ndarray, cs: ChangeSet, max_detour: int, g: int) -> np.ndarray:
    n = g * g
    mask = np.zeros((n, n), dtype=bool)
    for origin in range(n):
        if origin in cs.changed:
            mask[origin, :] = True
            continue
        otp = nearest_changed_cell(origin, cs, g)
        region = find_taa(origin, otp, max_detour, g).all_cells
        mask[origin, list(region)] = True
    return mask


def _neighbor_tables(region: np.ndarray, g: int):
    """Neighbor ids, their incoming-step direction, and in-region positions.

    Column order matches the training kernel's accumulation order: the
    contribution arriving from below (moving up), from above (down), from
    the right (left), from the left (right).
    """
    n = g * g
    m = len(region)
    rows, cols = np.divmod(region, g)
    nbr = np.full((m, 4), -1, dtype=np.int64)
    ok_up = rows < g - 1
    nbr[ok_up, 0] = (rows[ok_up] + 1) * g + cols[ok_up]       # below, steps up
    ok_dn = rows > 0
    nbr[ok_dn, 1] = (rows[ok_dn] - 1) * g + cols[ok_dn]       # above, steps down
    ok_lf = cols < g - 1
    nbr[ok_lf, 2] = rows[ok_lf] * g + cols[ok_lf] + 1         # right, steps left
    ok_rt = cols > 0
    nbr[ok_rt, 3] = rows[ok_rt] * g + cols[ok_rt] - 1         # left, steps right
    pos = np.full(n + 1, -1, dtype=np.int64)
    pos[region] = np.arange(m)
    return nbr, pos[nbr]


def _incoming_weights(sstp: SSTPMatrix, nbr: np.ndarray) -> np.ndarray:
    """P(neighbor -> cell) for each neighbor column of _neighbor_tables."""
    g = sstp.g
    m = nbr.shape[0]
    w = np.zeros((m, 4))
    flat = sstp.probs.reshape(g * g, 4)
    # step direction seen from the neighbor: up, down, left, right
    for col, step_dir in ((0, 0), (1, 1), (2, 2), (3, 3)):
        valid = nbr[:, col] >= 0
        w[valid, col] = flat[nbr[valid, col], step_dir]
    return w


def _recompute_origin(new_layers: np.ndarray, origin: int, region: np.ndarray,
                      sstp: SSTPMatrix, L: np.ndarray, max_detour: int) -> None:
    """Re-run the wavefront over one origin's affected cells in place.

    new_layers is the (n_layers, n) slice for this origin; out-of-region
    reads come from it untouched, so the arithmetic reproduces full
    retraining bit for bit on the affected entries.
    """
    g = sstp.g
    n_layers = max_detour // 2 + 1
    m = len(region)
    L_i = L[origin]
    L_reg = L_i[region]
    nbr, pos = _neighbor_tables(region, g)
    w = _incoming_weights(sstp, nbr)
    nbr_safe = np.where(nbr >= 0, nbr, 0)
    L_nbr = np.where(nbr >= 0, L_i[nbr_safe], -(10 * g))
    old = new_layers.copy()
    prev = np.zeros(m)
    if L_reg.min() == 0:
        prev[int(np.nonzero(region == origin)[0][0])] = 1.0
    tmax = int(L_reg.max()) + max_detour
    for t in range(1, tmax + 1):
        d_nbr = (t - 1) - L_nbr
        k_nbr = np.where((d_nbr >= 0) & (d_nbr <= max_detour) & (d_nbr % 2 == 0),
                         d_nbr // 2, -1)
        stored = np.where(k_nbr >= 0, old[np.clip(k_nbr, 0, n_layers - 1), nbr_safe], 0.0)
        vals = np.where(pos >= 0, prev[np.clip(pos, 0, m - 1)], stored)
        vals = np.where(nbr >= 0, vals, 0.0)
        cur = vals[:, 0] * w[:, 0]
        cur = cur + vals[:, 1] * w[:, 1]
        cur = cur + vals[:, 2] * w[:, 2]
        cur = cur + vals[:, 3] * w[:, 3]
        d = t - L_reg
        active = (d >= 0) & (d <= max_detour) & (d % 2 == 0)
        cur = np.where(active, cur, 0.0)
        if active.any():
            new_layers[d[active] // 2, region[active]] = cur[active]
        prev = cur


def apply_update(model: TransitionModel, sstp: SSTPMatrix, cs: ChangeSet,
                 mode: str = "exact") -> tuple[TransitionModel, UpdateStats]:
    """Refresh the model after the change set's rows replace the old ones.

    The sstp argument is mutated to carry the new rows; a new model is
    returned, leaving the caller's model untouched for snapshot swapping.
    """
    if mode not in ("paper", "exact"):
        raise ValueError(f"unknown update mode {mode!r}")
    if model.g != sstp.g:
        raise ValueError(f"model g={model.g} does not match matrix g={sstp.g}")
    cs.validate(model.g)
    if cs.epoch <= model.epoch:
        raise ValueError(f"epoch {cs.epoch} does not advance model epoch {model.epoch}")
    t0 = time.perf_counter()
    for cell, row in cs.changed.items():
        sstp.replace_row(cell, row)
    g, n = model.g, model.n_cells
    L = l1_matrix(g)
    if mode == "exact":
        mask = _affected_mask_exact(L, sorted(cs.changed), model.max_detour)
    else:
        mask = _affected_mask_paper(L, cs, model.max_detour, g)
    out = model.copy()
    out.epoch = cs.epoch
    origins_touched = 0
    entries = 0
    for origin in range(n):
        region = np.nonzero(mask[origin])[0]
        if region.size == 0:
            continue
        origins_touched += 1
        entries += region.size * model.n_layers
        _recompute_origin(out.layers[:, origin, :], origin, region, sstp, L, model.max_detour)
        out.totals[origin, region] = out.layers[:, origin, region].sum(axis=0)
    stats = UpdateStats(
        mode=mode,
        epoch=cs.epoch,
        origins_recomputed=origins_touched,
        entries_recomputed=entries,
        entries_full=n * n * model.n_layers,
        wall_ms=(time.perf_counter() - t0) * 1e3,
    )
    return out, stats
