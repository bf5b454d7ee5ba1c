"""Grid-point stable-server and handover race analysis."""

from __future__ import annotations

import csv
import enum
import io
from dataclasses import dataclass, field

import numpy as np

from .bias import BiasMatrix, a3_entering
from .network import RsrpMap

DEFAULT_CANDIDATE_WINDOW_DB = 20.0


class Verdict(str, enum.Enum):
    STABLE = "stable"
    RACE = "race"


def candidate_set(point_rsrp, window_db: float = DEFAULT_CANDIDATE_WINDOW_DB) -> set[int]:
    m = np.asarray(point_rsrp, dtype=float)
    return set(np.flatnonzero(m >= m.max() - window_db).tolist())


def stable_server_set(point_rsrp, B: BiasMatrix, H_g: float, candidates=None) -> set[int]:
    """Cells that no other candidate would take over from via A3."""
    m = np.asarray(point_rsrp, dtype=float)
    cand = sorted(range(len(m)) if candidates is None else candidates)
    stable = set()
    for p in cand:
        if not any(a3_entering(m[n], m[p], B, H_g, p, n) for n in cand if n != p):
            stable.add(p)
    return stable


def handover_transition(serving: int, point_rsrp, B: BiasMatrix, H_g: float, candidates=None):
    """Next cell for a UE served by ``serving``, or ``None`` if it stays.

    Among triggering neighbors the one with the largest biased RSRP wins;
    ties go to the lower cell id.
    """
    m = np.asarray(point_rsrp, dtype=float)
    cand = range(len(m)) if candidates is None else sorted(candidates)
    best, best_val = None, -np.inf
    for n in cand:
        if n == serving or not a3_entering(m[n], m[serving], B, H_g, serving, n):
            continue
        val = m[n] + B[serving, n]
        if val > best_val:
            best, best_val = n, val
    return best


@dataclass
class PointClassification:
    stable_set: set[int]
    verdict: Verdict
    transitions: dict[int, int | None] = field(default_factory=dict)
    cycle: list[int] = field(default_factory=list)
    point: tuple[int, int] | None = None


def follow_transitions(start: int, transitions: dict) -> tuple[list[int], list[int]]:
    """Walk the transition graph; returns (path, cycle) where cycle may be empty."""
    path, seen = [start], {start: 0}
    cur = start
    while transitions.get(cur) is not None:
        cur = transitions[cur]
        if cur in seen:
            return path, path[seen[cur]:]
        seen[cur] = len(path)
        path.append(cur)
    return path, []


def classify_grid_point(point_rsrp, B: BiasMatrix, H_g: float, candidates=None, point=None) -> PointClassification:
    m = np.asarray(point_rsrp, dtype=float)
    cand = candidate_set(m) if candidates is None else set(candidates)
    stable = stable_server_set(m, B, H_g, cand)
    transitions = {c: handover_transition(c, m, B, H_g, cand) for c in sorted(cand)}
    verdict = Verdict.STABLE if stable else Verdict.RACE
    cycle = []
    if verdict is Verdict.RACE:
        start = max(cand, key=lambda c: (m[c], -c))
        _, cycle = follow_transitions(start, transitions)
    return PointClassification(stable, verdict, transitions, cycle, point)


# ---------------------------------------------------------------------------
# vectorized grid analysis


def _candidate_mask(M: np.ndarray, window_db: float | None) -> np.ndarray:
    if window_db is None:
        return np.ones_like(M, dtype=bool)
    return M >= M.max(axis=0) - window_db


def stable_mask(rsrp_map: RsrpMap, B: BiasMatrix, H_g: float, window_db: float | None = DEFAULT_CANDIDATE_WINDOW_DB):
    """Boolean ``(n_cells, n_points)``: cell is a stable server at the point."""
    M = rsrp_map.flat()
    n = M.shape[0]
    cand = _candidate_mask(M, window_db)
    b = B.values
    out = np.zeros_like(cand)
    for p in range(n):
        eh = H_g + b[p, p] - b[p]  # same association as effective_hysteresis
        trig = (M > M[p] + eh[:, None]) & cand
        trig[p] = False
        out[p] = cand[p] & ~trig.any(axis=0)
    return out


def race_mask(rsrp_map: RsrpMap, B: BiasMatrix, H_g: float, window_db=DEFAULT_CANDIDATE_WINDOW_DB) -> np.ndarray:
    """``(ny, nx)`` True where no candidate is a stable server."""
    return ~stable_mask(rsrp_map, B, H_g, window_db).any(axis=0).reshape(rsrp_map.grid.shape)


def _next_server(M, cand, b, H_g, serving):
    """Vectorized handover_transition; returns -1 where the UE stays."""
    P = M.shape[1]
    cols = np.arange(P)
    Ms = M[serving, cols]
    rows = b[serving]  # (P, N)
    eh = H_g + b[serving, serving][:, None] - rows
    trig = (M.T > Ms[:, None] + eh) & cand.T
    trig[cols, serving] = False
    score = np.where(trig, M.T + rows, -np.inf)
    nxt = np.argmax(score, axis=1)
    return np.where(trig.any(axis=1), nxt, -1)


def biased_server_map(rsrp_map: RsrpMap, B: BiasMatrix, H_g: float, window_db=None) -> np.ndarray:
    """Cell reached by following handovers from the strongest cell, ``-1`` if it cycles."""
    M = rsrp_map.flat()
    n = M.shape[0]
    cand = _candidate_mask(M, window_db)
    b = B.values
    server = np.argmax(M, axis=0)
    active = np.ones(server.shape, dtype=bool)
    # a walk that has not stopped after n-1 moves has revisited a cell
    for _ in range(n):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        nxt = _next_server(M[:, idx], cand[:, idx], b, H_g, server[idx])
        moved = nxt >= 0
        server[idx[moved]] = nxt[moved]
        active[idx[~moved]] = False
    server = np.where(active, -1, server)
    return server.reshape(rsrp_map.grid.shape)


@dataclass
class RaceCurvePoint:
    H_g: float
    race_points: int
    pico_points: int
    race_prob_norm: float | None
    race_frac_raw: float


@dataclass
class RaceReport:
    curve: list[RaceCurvePoint]
    mask: np.ndarray  # race zone for the first H_g

    @property
    def race_probability(self):
        return self.curve[0].race_prob_norm

    def curve_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["H_g_dB", "race_prob_norm", "race_frac_raw"])
        for pt in self.curve:
            norm = "" if pt.race_prob_norm is None else repr(pt.race_prob_norm)
            w.writerow([repr(float(pt.H_g)), norm, repr(pt.race_frac_raw)])
        return buf.getvalue()

    def mask_csv(self) -> str:
        return "".join(",".join(str(int(v)) for v in row) + "\n" for row in self.mask)


def race_report(rsrp_map: RsrpMap, B: BiasMatrix, H_g_list, window_db=DEFAULT_CANDIDATE_WINDOW_DB) -> RaceReport:
    """Race probability per global hysteresis.

    The normalized probability divides race points by the pico-covered area:
    points whose unbiased or biased server is a pico, plus the race points
    themselves. It is ``None`` when that area is empty.
    """
    H_g_list = list(H_g_list)
    if not H_g_list:
        raise ValueError("race_report needs at least one H_g value")
    pico = rsrp_map.pico_mask
    unbiased_pico = pico[rsrp_map.best_server()]
    total = rsrp_map.grid.n_points
    curve, first_mask = [], None
    for hg in H_g_list:
        race = race_mask(rsrp_map, B, hg, window_db)
        server = biased_server_map(rsrp_map, B, hg, window_db)
        biased_pico = np.where(server >= 0, pico[np.maximum(server, 0)], False)
        area = unbiased_pico | biased_pico | race
        n_race, n_area = int(race.sum()), int(area.sum())
        curve.append(
            RaceCurvePoint(
                H_g=float(hg),
                race_points=n_race,
                pico_points=n_area,
                race_prob_norm=(n_race / n_area) if n_area else None,
                race_frac_raw=n_race / total,
            )
        )
        if first_mask is None:
            first_mask = race
    return RaceReport(curve, first_mask)
