"""Online destination queries.

Given the traveled prefix of a trip, the pipeline estimates the total trip
distance from the historical distance distribution, shrinks it by a
logarithmic decay into a forward path budget, walks the history index to
the most probable future location, and ranks candidate destinations by

    score(d) = p(future -> d) * P(d | start) / p(start -> d)

normalized over the candidates that the start's trip history supports.
"""

import math
from collections import Counter
from dataclasses import dataclass, field
from typing import NamedTuple

from .errors import ColdStartError
from .grid import GridMap, l1_distance
from .ingest import CellPath, TripDistanceHistogram
from .model import TransitionModel


class DistanceEstimate(NamedTuple):
    km: float
    extrapolated: bool


def estimate_total_distance(h: TripDistanceHistogram, d_t: float) -> DistanceEstimate:
    """Expected total trip distance given d_t kilometers already traveled.

    Bins entirely below d_t are ruled out; the remaining bins keep their
    full mass and the expectation renormalizes over them, so d_t = 0
    reproduces the unconditional expectation exactly. Past the histogram's
    support the estimate degrades to d_t itself, flagged.
    """
    if d_t < 0:
        raise ValueError("traveled distance cannot be negative")
    if h.total == 0:
        raise ValueError("empty histogram")
    surviving = h.boundaries[1:] > d_t
    mass = int(h.counts[surviving].sum())
    if mass == 0:
        return DistanceEstimate(d_t, True)
    num = float((h.left_edges[surviving] * h.counts[surviving]).sum())
    return DistanceEstimate(num / mass, False)


def predicted_length(e_total: float, d_t: float, alpha: float = 0.004) -> float:
    """Forward path budget D_p = E * log_alpha(d_t / E), clamped to the
    remaining distance. Shrinks to zero as the trip completes."""
    if not 0.0 < alpha < 1.0:
        raise ValueError("decay factor must be in (0, 1)")
    if e_total <= 0:
        raise ValueError("estimated total must be positive")
    if d_t <= 0:
        raise ValueError("logarithmic decay undefined at d_t = 0")
    dp = e_total * math.log(d_t / e_total) / math.log(alpha)
    return min(max(dp, 0.0), max(e_total - d_t, 0.0))


class FutureLocation(NamedTuple):
    cell: int
    steps: int
    no_match: bool


class HistoryIndex:
    """Suffix-gram index over historical cell paths.

    Maps each contiguous window of up to max_gram cells to the counts of
    the cells observed immediately after it. A trip ending right after a
    window counts as a stop vote (key STOP), so the continuation walk can
    halt where history says journeys finish instead of sailing past them.
    """

    STOP = -1

    def __init__(self, max_gram: int = 8):
        self.max_gram = max_gram
        self._grams: dict[tuple[int, ...], Counter] = {}

    @classmethod
    def build(cls, paths: list[CellPath], max_gram: int = 8) -> "HistoryIndex":
        idx = cls(max_gram)
        for path in paths:
            cells = path.cells
            for p in range(len(cells)):
                nxt = cells[p + 1] if p + 1 < len(cells) else cls.STOP
                for m in range(1, min(max_gram, p + 1) + 1):
                    key = tuple(cells[p + 1 - m:p + 1])
                    idx._grams.setdefault(key, Counter())[nxt] += 1
        return idx

    def continuation(self, cells: list[int], k: int) -> int | None:
        """Majority next cell among the k best suffix matches.

        Matches rank by suffix length first, then frequency, then cell id;
        the quota pools down to shorter suffixes when longer ones are rare.
        Returns STOP when ending the trip wins the vote and None when no
        suffix matches at all.
        """
        quota = k
        tally: Counter = Counter()
        for m in range(min(len(cells), self.max_gram), 0, -1):
            counts = self._grams.get(tuple(cells[-m:]))
            if not counts:
                continue
            for cell, cnt in sorted(counts.items(), key=lambda kv: (-kv[1], kv[0])):
                take = min(cnt, quota)
                tally[cell] += take
                quota -= take
                if quota == 0:
                    break
            if quota == 0:
                break
        if not tally:
            return None
        return min(tally.items(), key=lambda kv: (-kv[1], kv[0]))[0]


def infer_future_location(partial: list[int], dp_km: float, history, k: int = 10,
                          step_km: float = 1.0) -> FutureLocation:
    """Walk the majority continuation until the forward budget is spent.

    history may be a prebuilt HistoryIndex or a list of CellPaths. With no
    matching history the current cell is returned, flagged, which degrades
    the predictor to its two-endpoint baseline behavior.
    """
    if not partial:
        raise ValueError("partial path is empty")
    if k < 1:
        raise ValueError("k must be >= 1")
    index = history if isinstance(history, HistoryIndex) else HistoryIndex.build(history)
    cells = list(partial)
    spent = 0.0
    steps = 0
    no_match = False
    while spent < dp_km:
        nxt = index.continuation(cells, k)
        if nxt is None:
            no_match = steps == 0
            break
        if nxt == HistoryIndex.STOP:
            break
        cells.append(nxt)
        steps += 1
        spent += step_km
    return FutureLocation(cells[-1], steps, no_match)


@dataclass
class Query:
    cells: list[int]       # trajectory prefix traveled so far
    d_t: float             # kilometers traveled so far
    top_k: int = 3

    def __post_init__(self):
        if not self.cells:
            raise ValueError("query needs at least one traveled cell")
        if self.d_t < 0:
            raise ValueError("traveled distance cannot be negative")
        if self.top_k < 1:
            raise ValueError("top_k must be >= 1")


@dataclass
class PredictionResult:
    ranked: list[tuple[int, float]]
    future_location: int
    predicted_length_km: float
    estimated_total_km: float
    extrapolated: bool = False
    future_no_match: bool = False
    trip_id: str = ""


def predict_destination(model: TransitionModel, q: Query, h: TripDistanceHistogram,
                        history, grid: GridMap, alpha: float = 0.004, k: int = 10,
                        force_future_to_current: bool = False) -> PredictionResult:
    """Rank candidate destinations for a partial trip.

    Candidates are the destinations the start cell has historically
    produced and that the model can route to. Raises ColdStartError with a
    forward-mass fallback ranking when that set is empty.
    """
    s, c = q.cells[0], q.cells[-1]
    est = estimate_total_distance(h, q.d_t)
    if q.d_t > 0 and est.km > 0:
        dp = predicted_length(est.km, min(q.d_t, est.km), alpha)
    else:
        dp = 0.0
    if force_future_to_current:
        future = FutureLocation(c, 0, False)
    else:
        future = infer_future_location(q.cells, dp, history, k, step_km=grid.mean_pitch_km)
    lp = future.cell

    scores: dict[int, float] = {}
    for d in model.dests_from(s):
        if d == s:
            continue
        p_sd = model.transition_mass(s, d)
        p_d_given_s = model.dest_given_start(d, s)
        if p_sd <= 0.0 or p_d_given_s <= 0.0:
            continue
        p_ld = 1.0 if d == lp else model.transition_mass(lp, d)
        scores[d] = p_ld * p_d_given_s / p_sd
    total = sum(scores.values())
    if not scores or total <= 0.0:
        fallback = [(d, float(model.totals[lp, d])) for d in range(model.n_cells)
                    if d != s and model.totals[lp, d] > 0.0]
        fb_total = sum(p for _, p in fallback)
        fallback = sorted(
            ((d, p / fb_total) for d, p in fallback), key=lambda kv: (-kv[1], kv[0])
        )
        raise ColdStartError(f"no candidate destinations for start cell {s}", fallback)
    ranked = sorted(((d, p / total) for d, p in scores.items()),
                    key=lambda kv: (-kv[1], kv[0]))
    return PredictionResult(
        ranked=ranked[:q.top_k],
        future_location=lp,
        predicted_length_km=dp,
        estimated_total_km=est.km,
        extrapolated=est.extrapolated,
        future_no_match=future.no_match,
    )


@dataclass
class DeviationReport:
    mean_km: float
    per_query: list[float] = field(default_factory=list)


def deviation_metrics(results: list[PredictionResult], truths: list[int],
                      grid: GridMap, top_n: int = 3,
                      mode: str = "haversine") -> DeviationReport:
    """Average distance between the top predictions and the true destination.

    Per query, the top_n ranked cells' deviations are averaged; the report
    averages those across queries. mode="l1" scores one kilometer per grid
    hop, the convention of the synthetic worlds.
    """
    if not results:
        raise ValueError("no results to score")
    if len(results) != len(truths):
        raise ValueError("results and truths differ in length")
    per_query = []
    for res, truth in zip(results, truths):
        top = res.ranked[:top_n]
        if not top:
            raise ValueError("prediction with empty ranking")
        if mode == "l1":
            devs = [float(l1_distance(d, truth, grid.g)) for d, _ in top]
        elif mode == "haversine":
            devs = [grid.center_distance_km(d, truth) for d, _ in top]
        else:
            raise ValueError(f"unknown deviation mode {mode!r}")
        per_query.append(sum(devs) / len(devs))
    return DeviationReport(mean_km=sum(per_query) / len(per_query), per_query=per_query)
