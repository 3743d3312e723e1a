"""Single-step transition statistics and the layered transition model.

The model stores, for every origin-destination pair, the probability of
making the trip at each admissible total length: the L1 distance plus an
even detour up to `max_detour`. Layer k holds the values for detour 2k.
Training runs a per-origin wavefront: layer t of the walk distribution is
obtained from layer t-1 by one step of the single-step matrix, restricted
to 4-adjacency. The values harvested at t = l1 + 2k are exactly the
entries of the t-step transition matrix, which is what the dense
matrix-power baseline computes the expensive way.
"""

import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

from .errors import CorruptModelError, FormatError
from .grid import check_cell, decode_cell, l1_distance, neighbors, relative_adjacent_pair

MODEL_MAGIC = b"EDP1"
SSTP_MAGIC = b"SST1"
FORMAT_VERSION = 1

# probs[..., k] follows grid.DIRECTIONS: 0=up 1=down 2=left 3=right
_DIR_UP, _DIR_DOWN, _DIR_LEFT, _DIR_RIGHT = range(4)


@dataclass
class SSTPMatrix:
    """Single-step transition probabilities restricted to 4-adjacency.

    probs has shape (g, g, 4); entry [r, c, d] is the probability of
    leaving cell (r, c) in direction d. Out-of-grid directions are zero and
    every row sums to 1. Rows with no observed departures are backfilled
    uniform over in-grid neighbors and flagged in `smoothed`.
    """

    g: int
    probs: np.ndarray
    visit_counts: np.ndarray | None = None
    pair_counts: np.ndarray | None = None
    smoothed: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        if self.smoothed is None:
            self.smoothed = np.zeros(self.g * self.g, dtype=bool)

    @property
    def n_cells(self) -> int:
        return self.g * self.g

    def prob(self, a: int, b: int) -> float:
        """P(a -> b); zero unless b is a 4-neighbor of a."""
        ra, ca = decode_cell(a, self.g)
        rb, cb = decode_cell(b, self.g)
        dr, dc = rb - ra, cb - ca
        if (dr, dc) == (-1, 0):
            return float(self.probs[ra, ca, _DIR_UP])
        if (dr, dc) == (1, 0):
            return float(self.probs[ra, ca, _DIR_DOWN])
        if (dr, dc) == (0, -1):
            return float(self.probs[ra, ca, _DIR_LEFT])
        if (dr, dc) == (0, 1):
            return float(self.probs[ra, ca, _DIR_RIGHT])
        return 0.0

    def row(self, a: int) -> dict[int, float]:
        """Outgoing probabilities of cell a keyed by neighbor id."""
        return {b: self.prob(a, b) for b in neighbors(a, self.g)}

    def replace_row(self, a: int, new_row: dict[int, float]) -> None:
        """Overwrite cell a's outgoing probabilities.

        new_row must cover exactly the in-grid neighbors and sum to 1.
        """
        nbrs = neighbors(a, self.g)
        if set(new_row) != set(nbrs):
            raise ValueError(f"row for cell {a} must cover neighbors {sorted(nbrs)}")
        if any(p < 0 for p in new_row.values()):
            raise ValueError(f"row for cell {a} has negative probabilities")
        total = sum(new_row.values())
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"row for cell {a} sums to {total}, expected 1")
        ra, ca = decode_cell(a, self.g)
        self.probs[ra, ca, :] = 0.0
        for b, p in new_row.items():
            rb, cb = decode_cell(b, self.g)
            d = {(-1, 0): _DIR_UP, (1, 0): _DIR_DOWN, (0, -1): _DIR_LEFT, (0, 1): _DIR_RIGHT}[
                (rb - ra, cb - ca)
            ]
            self.probs[ra, ca, d] = p
        self.smoothed[a] = False

    def to_dense(self) -> np.ndarray:
        """Dense (n, n) single-step matrix."""
        g, n = self.g, self.n_cells
        M = np.zeros((n, n))
        for r in range(g):
            for c in range(g):
                i = r * g + c
                if r > 0:
                    M[i, i - g] = self.probs[r, c, _DIR_UP]
                if r < g - 1:
                    M[i, i + g] = self.probs[r, c, _DIR_DOWN]
                if c > 0:
                    M[i, i - 1] = self.probs[r, c, _DIR_LEFT]
                if c < g - 1:
                    M[i, i + 1] = self.probs[r, c, _DIR_RIGHT]
        return M

    def copy(self) -> "SSTPMatrix":
        return SSTPMatrix(
            g=self.g,
            probs=self.probs.copy(),
            visit_counts=None if self.visit_counts is None else self.visit_counts.copy(),
            pair_counts=None if self.pair_counts is None else self.pair_counts.copy(),
            smoothed=self.smoothed.copy(),
        )

    def validate(self, tol: float = 1e-12) -> None:
        g = self.g
        sums = self.probs.sum(axis=2).ravel()
        bad = np.nonzero(np.abs(sums - 1.0) > tol)[0]
        if bad.size:
            raise ValueError(f"rows {bad[:5].tolist()} do not sum to 1")
        if np.any(self.probs[0, :, _DIR_UP]) or np.any(self.probs[-1, :, _DIR_DOWN]):
            raise ValueError("probability mass leaves the grid vertically")
        if np.any(self.probs[:, 0, _DIR_LEFT]) or np.any(self.probs[:, -1, _DIR_RIGHT]):
            raise ValueError("probability mass leaves the grid horizontally")


def _uniform_row(r: int, c: int, g: int) -> np.ndarray:
    row = np.zeros(4)
    if r > 0:
        row[_DIR_UP] = 1.0
    if r < g - 1:
        row[_DIR_DOWN] = 1.0
    if c > 0:
        row[_DIR_LEFT] = 1.0
    if c < g - 1:
        row[_DIR_RIGHT] = 1.0
    return row / row.sum()


def build_sstp(paths, g: int) -> SSTPMatrix:
    """Count every consecutive cell transition once and normalize per origin.

    Cells never observed leaving get the uniform backfill row and a
    `smoothed` flag, so no walk mass silently disappears during training.
    """
    if not paths:
        raise ValueError("cannot build transition matrix from zero paths")
    n = g * g
    pair_counts = np.zeros((n, 4), dtype=np.int64)
    for path in paths:
        cells = path.cells
        for a, b in zip(cells, cells[1:]):
            check_cell(a, g)
            check_cell(b, g)
            ra, ca = divmod(a, g)
            rb, cb = divmod(b, g)
            d = {(-1, 0): _DIR_UP, (1, 0): _DIR_DOWN, (0, -1): _DIR_LEFT, (0, 1): _DIR_RIGHT}.get(
                (rb - ra, cb - ca)
            )
            if d is None:
                raise ValueError(f"non-adjacent transition {a} -> {b} in trip {path.trip_id}")
            pair_counts[a, d] += 1
    visit_counts = pair_counts.sum(axis=1)
    probs = np.zeros((g, g, 4))
    smoothed = np.zeros(n, dtype=bool)
    for cell in range(n):
        r, c = divmod(cell, g)
        if visit_counts[cell] > 0:
            probs[r, c] = pair_counts[cell] / visit_counts[cell]
        else:
            probs[r, c] = _uniform_row(r, c, g)
            smoothed[cell] = True
    return SSTPMatrix(g=g, probs=probs, visit_counts=visit_counts,
                      pair_counts=pair_counts, smoothed=smoothed)


def random_sstp(g: int, seed: int) -> SSTPMatrix:
    """Seeded random row-stochastic matrix on the 4-adjacency support.

    Benchmark input: a synthetic world reduced to its single-step matrix.
    """
    rng = np.random.default_rng(seed)
    probs = rng.random((g, g, 4)) + 0.05
    probs[0, :, _DIR_UP] = 0.0
    probs[-1, :, _DIR_DOWN] = 0.0
    probs[:, 0, _DIR_LEFT] = 0.0
    probs[:, -1, _DIR_RIGHT] = 0.0
    probs /= probs.sum(axis=2, keepdims=True)
    return SSTPMatrix(g=g, probs=probs)


def count_start_dest(paths) -> tuple[dict[int, dict[int, int]], dict[int, int]]:
    """Trip counts keyed by (start cell, destination cell) and by start."""
    by_start: dict[int, dict[int, int]] = {}
    totals: dict[int, int] = {}
    for path in paths:
        s, d = path.cells[0], path.cells[-1]
        by_start.setdefault(s, {})
        by_start[s][d] = by_start[s].get(d, 0) + 1
        totals[s] = totals.get(s, 0) + 1
    return by_start, totals


def l1_matrix(g: int) -> np.ndarray:
    """(n, n) matrix of pairwise L1 distances between cells."""
    rr, cc = np.divmod(np.arange(g * g), g)
    return np.abs(rr[:, None] - rr[None, :]) + np.abs(cc[:, None] - cc[None, :])


@dataclass
class TransitionModel:
    """Trained transition probabilities for every origin-destination pair.

    layers[k, i, j] is the probability of traveling i -> j along a route of
    total length l1(i, j) + 2k. totals[i, j] is the sum over stored layers,
    the quantity the online predictor consumes.
    """

    g: int
    max_detour: int
    layers: np.ndarray
    totals: np.ndarray
    start_counts: dict[int, dict[int, int]]
    start_totals: dict[int, int]
    epoch: int = 0

    @property
    def n_layers(self) -> int:
        return self.max_detour // 2 + 1

    @property
    def n_cells(self) -> int:
        return self.g * self.g

    def transition_mass(self, a: int, b: int) -> float:
        """Total probability p(a -> b) summed over detour layers."""
        return float(self.totals[a, b])

    def dest_given_start(self, d: int, s: int) -> float:
        """Empirical P(destination = d | start = s) from trip counts."""
        total = self.start_totals.get(s, 0)
        if total == 0:
            return 0.0
        return self.start_counts.get(s, {}).get(d, 0) / total

    def dests_from(self, s: int) -> list[int]:
        return sorted(self.start_counts.get(s, {}))

    def copy(self) -> "TransitionModel":
        return TransitionModel(
            g=self.g,
            max_detour=self.max_detour,
            layers=self.layers.copy(),
            totals=self.totals.copy(),
            start_counts={s: dict(d) for s, d in self.start_counts.items()},
            start_totals=dict(self.start_totals),
            epoch=self.epoch,
        )

    def equals(self, other: "TransitionModel") -> bool:
        return (
            self.g == other.g
            and self.max_detour == other.max_detour
            and self.epoch == other.epoch
            and np.array_equal(self.layers, other.layers)
            and np.array_equal(self.totals, other.totals)
            and self.start_counts == other.start_counts
            and self.start_totals == other.start_totals
        )


def compute_etp(sstp: SSTPMatrix, origin: int) -> np.ndarray:
    """Shortest-route transition probabilities from one origin to every cell.

    Recursion over destinations in increasing L1 order: the probability of
    reaching j along a minimal route is the sum, over the one or two
    neighbors of j that minimal routes pass through, of reaching that
    neighbor minimally and then stepping into j.
    """
    g, n = sstp.g, sstp.n_cells
    check_cell(origin, sstp.g)
    etp = np.zeros(n)
    etp[origin] = 1.0
    order = sorted(range(n), key=lambda j: l1_distance(origin, j, g))
    for j in order:
        if j == origin:
            continue
        acc = 0.0
        for p in relative_adjacent_pair(origin, j, g):
            acc += etp[p] * sstp.prob(p, j)
        etp[j] = acc
    return etp


def _step_kernel(cur, nxt, tmp, Pu, Pd, Pl, Pr):
    """One wavefront step: nxt[j] = sum over neighbors k of cur[k] * P(k -> j).

    Contributions accumulate in (up, down, left, right) order. cur/nxt/tmp
    have shape (B, rows, g); callers may pass a row-window view as long as
    the rows beyond it hold no walk mass.
    """
    np.multiply(cur[:, 1:, :], Pu[None, 1:, :], out=nxt[:, :-1, :])
    nxt[:, -1, :] = 0.0
    np.multiply(cur[:, :-1, :], Pd[None, :-1, :], out=tmp[:, :-1, :])
    nxt[:, 1:, :] += tmp[:, :-1, :]
    np.multiply(cur[:, :, 1:], Pl[None, :, 1:], out=tmp[:, :, 1:])
    nxt[:, :, :-1] += tmp[:, :, 1:]
    np.multiply(cur[:, :, :-1], Pr[None, :, :-1], out=tmp[:, :, :-1])
    nxt[:, :, 1:] += tmp[:, :, :-1]


def _wavefront_into(layers: np.ndarray, sstp: SSTPMatrix, origins: np.ndarray,
                    max_detour: int, L: np.ndarray, out_rows=None) -> None:
    """Run the wavefront for a batch of origins, harvesting stored layers.

    Values land in layers[:, out_rows[b], :] for batch position b;
    out_rows defaults to the origin ids themselves.
    """
    g, n = sstp.g, sstp.n_cells
    n_layers = max_detour // 2 + 1
    dmax = 2 * (g - 1)
    Pu = sstp.probs[..., _DIR_UP]
    Pd = sstp.probs[..., _DIR_DOWN]
    Pl = sstp.probs[..., _DIR_LEFT]
    Pr = sstp.probs[..., _DIR_RIGHT]
    B = len(origins)
    if out_rows is None:
        out_rows = origins
    Lb = L[origins]
    tmax = int(Lb.max()) + max_detour
    # bucket the (origin, dest) pairs of this batch by L1 distance once, so
    # each step harvests its rings with two fancy-index ops per layer
    flat_order = np.argsort(Lb, axis=None, kind="stable")
    bounds = np.searchsorted(Lb.ravel()[flat_order], np.arange(dmax + 2))
    row_i = out_rows[flat_order // n]
    col_j = flat_order % n
    cur = np.zeros((B, g, g))
    nxt = np.zeros((B, g, g))
    tmp = np.empty((B, g, g))
    cur.reshape(B, n)[np.arange(B), origins] = 1.0
    sl = slice(bounds[0], bounds[1])
    layers[0][row_i[sl], col_j[sl]] = cur.reshape(B, n).ravel()[flat_order[sl]]
    # after t steps the walk mass sits within t rows of the batch's origin
    # rows; stepping a one-row margin around that band is exact and keeps
    # early steps cheap
    r_lo = int(origins.min()) // g
    r_hi = int(origins.max()) // g
    for t in range(1, tmax + 1):
        a = max(0, r_lo - t)
        b = min(g, r_hi + t + 1)
        _step_kernel(cur[:, a:b, :], nxt[:, a:b, :], tmp[:, a:b, :],
                     Pu[a:b], Pd[a:b], Pl[a:b], Pr[a:b])
        cur, nxt = nxt, cur
        flat = cur.reshape(B, n).ravel()
        for k in range(n_layers):
            d = t - 2 * k
            if 0 <= d <= dmax:
                sl = slice(bounds[d], bounds[d + 1])
                if sl.start < sl.stop:
                    layers[k][row_i[sl], col_j[sl]] = flat[flat_order[sl]]


def compute_tpd_layers(sstp: SSTPMatrix, origin: int, max_detour: int) -> np.ndarray:
    """Stored detour layers for one origin, shape (max_detour/2 + 1, n).

    Row k holds the probability of reaching each destination with total
    length l1 + 2k. Odd detour budgets are rejected: odd-excess lengths are
    unreachable on a bipartite grid, so those layers are identically zero
    and never stored.
    """
    if max_detour < 0 or max_detour % 2 != 0:
        raise ValueError(f"max_detour must be even and >= 0, got {max_detour}")
    check_cell(origin, sstp.g)
    layers = np.zeros((max_detour // 2 + 1, 1, sstp.n_cells))
    _wavefront_into(layers, sstp, np.array([origin]), max_detour, l1_matrix(sstp.g),
                    out_rows=np.array([0]))
    return layers[:, 0, :]


def train_initial(sstp: SSTPMatrix, start_dest_counts=None, max_detour: int = 8,
                  batch: int = 50) -> TransitionModel:
    """Train the full layered model from single-step probabilities.

    Shortest-route layers come first, then each detour increment of two,
    per origin in one wavefront sweep; origins are batched to keep the
    inner loops vectorized.
    """
    if max_detour < 0 or max_detour % 2 != 0:
        raise ValueError(f"max_detour must be even and >= 0, got {max_detour}")
    g, n = sstp.g, sstp.n_cells
    n_layers = max_detour // 2 + 1
    L = l1_matrix(g)
    layers = np.zeros((n_layers, n, n))
    for lo in range(0, n, batch):
        origins = np.arange(lo, min(lo + batch, n))
        _wavefront_into(layers, sstp, origins, max_detour, L)
    totals = layers.sum(axis=0)
    if start_dest_counts is None:
        start_counts: dict[int, dict[int, int]] = {}
        start_totals: dict[int, int] = {}
    else:
        start_counts, start_totals = start_dest_counts
    return TransitionModel(g=g, max_detour=max_detour, layers=layers, totals=totals,
                           start_counts=start_counts, start_totals=start_totals)


# ---------------------------------------------------------------------------
# persistence: little-endian binary with a magic header and a trailing crc32


def _pack_model(model: TransitionModel) -> bytes:
    records = []
    for s in sorted(model.start_counts):
        for d in sorted(model.start_counts[s]):
            records.append(struct.pack("<IIQ", s, d, model.start_counts[s][d]))
    head = MODEL_MAGIC + struct.pack(
        "<IIIIQQ", FORMAT_VERSION, model.g, model.max_detour, model.n_layers,
        model.epoch, len(records),
    )
    body = (
        np.ascontiguousarray(model.layers, dtype="<f8").tobytes()
        + np.ascontiguousarray(model.totals, dtype="<f8").tobytes()
        + b"".join(records)
    )
    blob = head + body
    return blob + struct.pack("<I", zlib.crc32(blob))


def save_model(model: TransitionModel, path) -> None:
    with open(path, "wb") as fh:
        fh.write(_pack_model(model))


def load_model(path) -> TransitionModel:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 36 or blob[:4] != MODEL_MAGIC:
        raise FormatError(f"{path}: not a model file (bad magic)")
    version, g, max_detour, n_layers, epoch, n_records = struct.unpack("<IIIIQQ", blob[4:36])
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported model version {version}")
    n = g * g
    layer_bytes = n_layers * n * n * 8
    expected = 36 + layer_bytes + n * n * 8 + n_records * 16 + 4
    if len(blob) != expected:
        raise CorruptModelError(f"{path}: expected {expected} bytes, found {len(blob)}")
    (crc,) = struct.unpack("<I", blob[-4:])
    if crc != zlib.crc32(blob[:-4]):
        raise CorruptModelError(f"{path}: checksum mismatch")
    off = 36
    layers = np.frombuffer(blob, dtype="<f8", count=n_layers * n * n, offset=off)
    layers = layers.reshape(n_layers, n, n).copy()
    off += layer_bytes
    totals = np.frombuffer(blob, dtype="<f8", count=n * n, offset=off).reshape(n, n).copy()
    off += n * n * 8
    start_counts: dict[int, dict[int, int]] = {}
    start_totals: dict[int, int] = {}
    for _ in range(n_records):
        s, d, cnt = struct.unpack_from("<IIQ", blob, off)
        off += 16
        start_counts.setdefault(s, {})[d] = cnt
        start_totals[s] = start_totals.get(s, 0) + cnt
    return TransitionModel(g=g, max_detour=max_detour, layers=layers, totals=totals,
                           start_counts=start_counts, start_totals=start_totals, epoch=epoch)


def save_sstp(sstp: SSTPMatrix, path) -> None:
    has_counts = sstp.visit_counts is not None and sstp.pair_counts is not None
    head = SSTP_MAGIC + struct.pack("<IIB", FORMAT_VERSION, sstp.g, int(has_counts))
    body = (
        np.ascontiguousarray(sstp.probs, dtype="<f8").tobytes()
        + sstp.smoothed.astype("<u1").tobytes()
    )
    if has_counts:
        body += np.ascontiguousarray(sstp.visit_counts, dtype="<u8").tobytes()
        body += np.ascontiguousarray(sstp.pair_counts, dtype="<u8").tobytes()
    blob = head + body
    with open(path, "wb") as fh:
        fh.write(blob + struct.pack("<I", zlib.crc32(blob)))


def load_sstp(path) -> SSTPMatrix:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 13 or blob[:4] != SSTP_MAGIC:
        raise FormatError(f"{path}: not a transition matrix file (bad magic)")
    version, g, has_counts = struct.unpack("<IIB", blob[4:13])
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    n = g * g
    expected = 13 + n * 4 * 8 + n + (n * 8 + n * 4 * 8 if has_counts else 0) + 4
    if len(blob) != expected:
        raise CorruptModelError(f"{path}: expected {expected} bytes, found {len(blob)}")
    (crc,) = struct.unpack("<I", blob[-4:])
    if crc != zlib.crc32(blob[:-4]):
        raise CorruptModelError(f"{path}: checksum mismatch")
    off = 13
    probs = np.frombuffer(blob, dtype="<f8", count=n * 4, offset=off).reshape(g, g, 4).copy()
    off += n * 4 * 8
    smoothed = np.frombuffer(blob, dtype="<u1", count=n, offset=off).astype(bool).copy()
    off += n
    visit = pair = None
    if has_counts:
        visit = np.frombuffer(blob, dtype="<u8", count=n, offset=off).astype(np.int64).copy()
        off += n * 8
        pair = np.frombuffer(blob, dtype="<u8", count=n * 4, offset=off)
        pair = pair.reshape(n, 4).astype(np.int64).copy()
    return SSTPMatrix(g=g, probs=probs, visit_counts=visit, pair_counts=pair, smoothed=smoothed)
