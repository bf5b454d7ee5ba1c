"""Bias-matrix algebra and the four CIO assignment strategies.

Row ``i`` of a bias matrix holds what cell ``i`` broadcasts: the diagonal is
its serving offset ``O_cp`` and the off-diagonal entries are the per-neighbor
offsets ``O_cn``. From the serving cell ``p`` the A3 test against neighbor
``n`` reduces to ``M_n > M_p + H_g + b[p][p] - b[p][n]``.
"""

from __future__ import annotations

import csv
import enum
import io
from collections import deque
from dataclasses import dataclass, field

import numpy as np
import yaml

from .network import RsrpMap

MAX_NEIGHBORS = 32
DEFAULT_V_MAX = 5.0


class BiasError(ValueError):
    pass


class Strategy(str, enum.Enum):
    RETB = "retb"
    ASYD = "asyd"
    MINR = "minr"
    MIN3 = "min3"

    @classmethod
    def parse(cls, value) -> "Strategy":
        if isinstance(value, Strategy):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise BiasError(f"unknown strategy {value!r}; expected one of retb, asyd, minr, min3") from None


@dataclass(frozen=True)
class MobilityParams:
    H_ys: float = 1.0
    O_ff: float = 0.0
    K: float = 4
    TTT: float = 320.0
    sample_interval: float = 200.0

    def __post_init__(self):
        if not self.sample_interval > 0:
            raise ValueError(f"sample_interval must be > 0, got {self.sample_interval}")
        if self.TTT < 0:
            raise ValueError(f"TTT must be >= 0, got {self.TTT}")
        if self.K < 0:
            raise ValueError(f"K must be >= 0, got {self.K}")

    @property
    def H_g(self) -> float:
        return self.O_ff + self.H_ys

    @property
    def a(self) -> float:
        return 0.5 ** (self.K / 4.0)


class BiasMatrix:
    """Immutable ``N x N`` matrix of CIO values in dB."""

    def __init__(self, values):
        arr = np.array(values, dtype=float)
        if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
            raise BiasError(f"bias matrix must be square, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise BiasError("bias matrix has non-finite entries")
        arr.setflags(write=False)
        self._b = arr

    @classmethod
    def zeros(cls, n: int) -> "BiasMatrix":
        return cls(np.zeros((n, n)))

    @property
    def values(self) -> np.ndarray:
        return self._b

    @property
    def n(self) -> int:
        return self._b.shape[0]

    def __getitem__(self, idx):
        return self._b[idx]

    def __eq__(self, other):
        return isinstance(other, BiasMatrix) and np.array_equal(self._b, other._b)

    def __repr__(self):
        return f"BiasMatrix({self._b.tolist()})"

    def nonzero_per_row(self) -> np.ndarray:
        off = self._b.copy()
        np.fill_diagonal(off, 0.0)
        return np.count_nonzero(off, axis=1)

    def check(self, v_max: float = DEFAULT_V_MAX, max_neighbors: int = MAX_NEIGHBORS) -> list[str]:
        """Return a list of constraint violations (empty when valid)."""
        problems = []
        big = np.argwhere(np.abs(self._b) > v_max + 1e-9)
        for i, j in big:
            problems.append(f"b[{i}][{j}] = {self._b[i, j]:g} dB exceeds the +/-{v_max:g} dB clamp")
        for i, cnt in enumerate(self.nonzero_per_row()):
            if cnt > max_neighbors:
                problems.append(
                    f"row {i} has {cnt} nonzero neighbor offsets (max {max_neighbors}); use global retaining bias"
                )
        return problems

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        for row in self._b:
            w.writerow([repr(float(v)) for v in row])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "BiasMatrix":
        rows = [r for r in csv.reader(io.StringIO(text)) if r]
        return cls([[float(v) for v in r] for r in rows])

    def to_text(self) -> str:
        """YAML keyed by broadcasting cell id; zero entries are omitted."""
        doc = {"n_cells": self.n, "rows": {}}
        for i in range(self.n):
            row = {int(j): float(self._b[i, j]) for j in np.flatnonzero(self._b[i])}
            doc["rows"][i] = row
        return yaml.safe_dump(doc, sort_keys=True)

    @classmethod
    def from_text(cls, text: str) -> "BiasMatrix":
        doc = yaml.safe_load(text)
        n = int(doc["n_cells"])
        b = np.zeros((n, n))
        for i, row in (doc.get("rows") or {}).items():
            for j, v in (row or {}).items():
                b[int(i), int(j)] = float(v)
        return cls(b)


def effective_hysteresis(B: BiasMatrix, H_g: float, p: int, n: int) -> float:
    """Net margin neighbor ``n`` must exceed while ``p`` serves."""
    if p == n:
        raise BiasError("effective hysteresis needs two distinct cells")
    return H_g + B[p, p] - B[p, n]


def a3_entering(M_n: float, M_p: float, B: BiasMatrix, H_g: float, p: int, n: int) -> bool:
    return bool(M_n > M_p + effective_hysteresis(B, H_g, p, n))


def a3_entering_full(M_n, M_p, O_cn, O_cp, H_ys, O_ff) -> bool:
    """A3 entering condition written out with every term separate."""
    return bool(M_n + O_cn - H_ys > M_p + O_cp + O_ff)


# ---------------------------------------------------------------------------
# neighbor sets


@dataclass
class NeighborSets:
    """Per-pico neighbor relations derived from the coverage map.

    ``strong_set`` lists every macro with offloading benefit (it borders the
    pico's extended region), ordered by handover share. ``offloading_set`` is
    its first ``n_off`` entries and ``retaining_set`` is the full list of
    detectable neighbors (macros and picos).
    """

    n_cells: int
    picos: list[int]
    macros: list[int]
    offloading_set: dict[int, list[int]]
    retaining_set: dict[int, list[int]]
    strong_set: dict[int, list[int]]
    groups: list[list[int]]
    handover_share: dict[int, dict[int, float]] = field(default_factory=dict)
    isolated: list[int] = field(default_factory=list)
    n_off: int = 3

    def group_of(self, pico: int) -> list[int]:
        for g in self.groups:
            if pico in g:
                return g
        return [pico]

    def retaining_macros(self, pico: int) -> list[int]:
        macros = set(self.macros)
        return [c for c in self.retaining_set.get(pico, []) if c in macros]

    def cardinality_report(self) -> dict:
        off = {p: len(self.offloading_set[p]) for p in self.picos}
        ret = {p: len(self.retaining_macros(p)) for p in self.picos}
        strong = {p: len(self.strong_set[p]) for p in self.picos}

        def hist(d):
            out = {}
            for v in d.values():
                out[v] = out.get(v, 0) + 1
            return dict(sorted(out.items()))

        return {
            "offloading": off,
            "retaining": ret,
            "strong": strong,
            "offloading_hist": hist(off),
            "retaining_hist": hist(ret),
            "isolated": list(self.isolated),
        }


def _boundary_mask(region: np.ndarray) -> np.ndarray:
    """Region points with a 4-neighbor outside the region (grid edge excluded)."""
    padded = np.pad(region, 1, mode="edge")
    inner = padded[1:-1, 1:-1]
    out = np.zeros_like(region)
    for sl in (padded[:-2, 1:-1], padded[2:, 1:-1], padded[1:-1, :-2], padded[1:-1, 2:]):
        out |= inner & ~sl
    return out


def pico_groups(cells, picos, radius: float) -> list[list[int]]:
    """Connected components of picos closer than ``radius`` to each other."""
    pos = {p: np.array(cells[p].position) for p in picos}
    seen, groups = set(), []
    for start in picos:
        if start in seen:
            continue
        comp, queue = [], deque([start])
        seen.add(start)
        while queue:
            p = queue.popleft()
            comp.append(p)
            for q in picos:
                if q not in seen and np.linalg.norm(pos[p] - pos[q]) <= radius:
                    seen.add(q)
                    queue.append(q)
        groups.append(sorted(comp))
    return groups


def derive_neighbor_sets(
    rsrp_map: RsrpMap,
    n_off: int = 3,
    group_radius: float = 150.0,
    window_db: float = 10.0,
    region_bias: float = DEFAULT_V_MAX,
) -> NeighborSets:
    """Neighbor sets per pico from the unbiased map.

    The pico region is its range-extended footprint at ``region_bias``. A
    candidate is any other cell within ``window_db`` of the pico somewhere in
    that region; candidates are ranked by the share of region-boundary points
    where they are the strongest other cell, then by mean RSRP margin, then id.
    """
    if n_off < 1:
        raise BiasError(f"N_off must be >= 1, got {n_off}")
    cells = rsrp_map.cells
    n = len(cells)
    picos = [c.id for c in cells if c.is_pico]
    macros = [c.id for c in cells if not c.is_pico]
    M = rsrp_map.rsrp
    off_sets, ret_sets, strong_sets, shares, isolated = {}, {}, {}, {}, []

    for i in picos:
        others = np.delete(np.arange(n), i)
        if len(others) == 0:
            off_sets[i] = ret_sets[i] = strong_sets[i] = []
            shares[i] = {}
            isolated.append(i)
            continue
        Mo = M[others]
        best_other = Mo.max(axis=0)
        region = M[i] + region_bias > best_other
        if not region.any():
            off_sets[i] = ret_sets[i] = strong_sets[i] = []
            shares[i] = {}
            isolated.append(i)
            continue
        delta = Mo[:, region] - M[i][region]  # (n-1, n_region)
        detectable = (delta >= -window_db).any(axis=1)

        edge = _boundary_mask(region)
        if not edge.any():
            edge = region
        top = others[np.argmax(Mo[:, edge], axis=0)]
        counts = np.bincount(top, minlength=n)
        share = counts / edge.sum()
        margin = np.full(n, -np.inf)
        margin[others] = delta.mean(axis=1)

        cand = set(others[detectable].tolist()) | {int(j) for j in np.flatnonzero(share > 0)}
        order = sorted(cand, key=lambda j: (-share[j], -margin[j], j))
        strong = [j for j in order if not cells[j].is_pico and share[j] > 0]
        strong_sets[i] = strong
        off_sets[i] = strong[:n_off]
        ret_sets[i] = order
        shares[i] = {j: float(share[j]) for j in order}
        if not order:
            isolated.append(i)

    return NeighborSets(
        n_cells=n,
        picos=picos,
        macros=macros,
        offloading_set=off_sets,
        retaining_set=ret_sets,
        strong_set=strong_sets,
        groups=pico_groups(cells, picos, group_radius),
        handover_share=shares,
        isolated=isolated,
        n_off=n_off,
    )


# ---------------------------------------------------------------------------
# per-pico bias optimization


@dataclass(frozen=True)
class PicoBias:
    pico: int
    v: float
    area_m2: float
    target_m2: float
    shortfall: bool = False
    zero_coverage: bool = False


def pico_area_targets(rsrp_map: RsrpMap) -> dict[int, float]:
    """Area-equalization targets in m^2.

    Each pico is hosted by the macro strongest at its site in the macro-only
    map; that macro's original area is split equally between it and every
    pico it hosts.
    """
    macros = [c.id for c in rsrp_map.cells if not c.is_pico]
    picos = [c.id for c in rsrp_map.cells if c.is_pico]
    if not macros:
        raise BiasError("area targets need at least one macro cell")
    macro_server = np.asarray(macros)[np.argmax(rsrp_map.rsrp[macros], axis=0)]
    area = {m: float((macro_server == m).sum()) * rsrp_map.grid.point_area for m in macros}
    host = {}
    for p in picos:
        iy, ix = rsrp_map.grid.index_of(rsrp_map.cells[p].position)
        host[p] = int(macro_server[iy, ix])
    hosted = {m: sum(1 for p in picos if host[p] == m) for m in macros}
    return {p: area[host[p]] / (1 + hosted[host[p]]) for p in picos}


def bias_steps(v_max: float, step: float = 0.1) -> np.ndarray:
    k = int(np.floor(v_max / step + 1e-9))
    return np.round(np.arange(k + 1) * step, 10)


def optimize_pico_bias(
    rsrp_map: RsrpMap, pico: int, area_target: float, v_max: float = DEFAULT_V_MAX, step: float = 0.1
) -> PicoBias:
    """Smallest range-extension bias whose coverage reaches ``area_target``.

    Coverage at bias ``v`` counts grid points where the pico plus ``v`` beats
    every other cell. Falls back to ``v_max`` with ``shortfall`` set.
    """
    M = rsrp_map.flat()
    others = np.delete(M, pico, axis=0)
    if len(others) == 0:
        a = rsrp_map.grid.n_points * rsrp_map.grid.point_area
        return PicoBias(pico, 0.0, a, area_target)
    margin = M[pico] - others.max(axis=0)
    pa = rsrp_map.grid.point_area
    for v in bias_steps(v_max, step):
        area = np.count_nonzero(margin + v > 0) * pa
        if area >= area_target:
            return PicoBias(pico, float(v), float(area), float(area_target))
    return PicoBias(
        pico,
        float(v_max),
        float(area),
        float(area_target),
        shortfall=True,
        zero_coverage=area == 0,
    )


def optimize_all(rsrp_map: RsrpMap, v_max: float = DEFAULT_V_MAX, step: float = 0.1) -> dict[int, PicoBias]:
    targets = pico_area_targets(rsrp_map)
    return {p: optimize_pico_bias(rsrp_map, p, t, v_max, step) for p, t in targets.items()}


# ---------------------------------------------------------------------------
# strategy assignment


@dataclass(frozen=True)
class BiasVector:
    v: dict[int, float]
    v_r: dict[int, float]
    v_o: dict[int, float]


def strategy_bias_vector(
    strategy, v: dict[int, float], sets: NeighborSets, v_max: float = DEFAULT_V_MAX, asyd_literal_formula: bool = False
) -> BiasVector:
    """Map optimized pico biases to (retaining, offloading) per strategy."""
    strategy = Strategy.parse(strategy)
    for p, val in v.items():
        if not 0 <= val <= v_max + 1e-9:
            raise BiasError(f"pico {p} bias {val:g} dB outside [0, {v_max:g}]")
    if strategy is Strategy.RETB:
        return BiasVector(dict(v), dict(v), {p: 0.0 for p in v})
    if strategy in (Strategy.MINR, Strategy.MIN3):
        return BiasVector(dict(v), dict(v), dict(v))

    v_r, v_o = {}, {}
    for p, vi in v.items():
        vr = max(v.get(q, 0.0) for q in sets.group_of(p))
        if asyd_literal_formula:
            vo = min(2 * vr - vi, v_max)
        else:
            vo = max(2 * vi - vr, 0.0)
        v_r[p] = float(round(vr, 10))
        v_o[p] = float(round(vo, 10))
    return BiasVector(dict(v), v_r, v_o)


def assign_bias_matrix(
    strategy,
    sets: NeighborSets,
    v,
    global_retaining: bool = False,
    v_max: float = DEFAULT_V_MAX,
    asyd_literal_formula: bool = False,
) -> BiasMatrix:
    """Build the bias matrix for one strategy.

    ``v`` is either a :class:`BiasVector` or the optimized per-pico biases.

    RETB and ASYD retain toward every macro in the pico's retaining set;
    MINR and MIN3 are skew-symmetric on their offloading macros only (all
    strong macros for MINR, the best three for MIN3). With
    ``global_retaining`` a pico row carries its retaining bias on the
    diagonal instead of per-neighbor entries.
    """
    strategy = Strategy.parse(strategy)
    if not isinstance(v, BiasVector):
        v = strategy_bias_vector(strategy, v, sets, v_max, asyd_literal_formula)
    b = np.zeros((sets.n_cells, sets.n_cells))
    for p in sets.picos:
        if p not in v.v:
            raise BiasError(f"no optimized bias for pico {p}")
        strong = sets.strong_set.get(p, [])
        if strategy is Strategy.RETB:
            retain, offload = sets.retaining_macros(p), []
        elif strategy is Strategy.ASYD:
            retain, offload = sets.retaining_macros(p), sets.offloading_set.get(p, [])
        elif strategy is Strategy.MINR:
            retain = offload = strong
        else:
            retain = offload = strong[:3]
        if global_retaining:
            b[p, p] = v.v_r[p]
        else:
            for m in retain:
                b[p, m] = -v.v_r[p]
        for m in offload:
            b[m, p] = v.v_o[p]

    B = BiasMatrix(b + 0.0)  # normalize -0.0
    over = [i for i, cnt in enumerate(B.nonzero_per_row()) if cnt > MAX_NEIGHBORS]
    if over:
        raise BiasError(
            f"rows {over} exceed {MAX_NEIGHBORS} nonzero neighbor offsets; rerun with global_retaining"
        )
    return B


@dataclass
class BiasPlan:
    """Everything the static planning stage produces for one strategy."""

    strategy: Strategy
    sets: NeighborSets
    pico_bias: dict[int, PicoBias]
    vector: BiasVector
    matrix: BiasMatrix


def plan_bias(
    rsrp_map: RsrpMap,
    strategy,
    n_off: int = 3,
    group_radius: float = 150.0,
    v_max: float = DEFAULT_V_MAX,
    window_db: float = 10.0,
    global_retaining: bool = False,
    asyd_literal_formula: bool = False,
    step: float = 0.1,
) -> BiasPlan:
    """Neighbor sets, area-equalizing biases and the strategy matrix in one go."""
    strategy = Strategy.parse(strategy)
    sets = derive_neighbor_sets(rsrp_map, n_off, group_radius, window_db, region_bias=v_max)
    pico_bias = optimize_all(rsrp_map, v_max, step)
    vec = strategy_bias_vector(strategy, {p: pb.v for p, pb in pico_bias.items()}, sets, v_max, asyd_literal_formula)
    B = assign_bias_matrix(strategy, sets, vec, global_retaining, v_max)
    return BiasPlan(strategy, sets, pico_bias, vec, B)
