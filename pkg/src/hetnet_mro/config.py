"""Scenario files: YAML schema, loading and validation."""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

import numpy as np
import yaml

from .bias import DEFAULT_V_MAX, BiasMatrix, MobilityParams, Strategy
from .mobility import AbsConfig, RlfConfig
from .network import (
    DEFAULT_HEIGHT_M,
    DEFAULT_PATHLOSS,
    Cell,
    CellKind,
    GridSpec,
    PathlossModel,
)

N_RESOURCE_ELEMENTS = 1200  # 20 MHz carrier
RS_OFFSET_DB = 10.0 * math.log10(N_RESOURCE_ELEMENTS)
DEFAULT_TX_POWER_DBM = {CellKind.MACRO: 46.0, CellKind.PICO: 30.0}
RECEIVER_V_MAX = 5.0


class ConfigError(ValueError):
    def __init__(self, message, diagnostics=None, line=None):
        super().__init__(message)
        self.diagnostics = diagnostics or []
        self.line = line


@dataclass(frozen=True)
class Diagnostic:
    level: str  # "error" | "warning"
    path: str
    message: str

    def __str__(self):
        return f"{self.level}: {self.path}: {self.message}"


@dataclass(frozen=True)
class StrategyConfig:
    strategy: Strategy = Strategy.MIN3
    v_max: float = DEFAULT_V_MAX
    n_off: int = 3
    group_radius: float = 150.0
    detect_window_db: float = 10.0
    candidate_window_db: float = 20.0
    search_step_db: float = 0.1
    asyd_literal_formula: bool = False
    global_retaining: bool = False
    H_g_list: tuple[float, ...] = (0.0, 0.5, 1.0, 2.0)


@dataclass(frozen=True)
class Scenario:
    cells: tuple[Cell, ...]
    grid: GridSpec
    seed: int = 0
    noise_dbm: float = -123.2
    shadow_sigma_db: float = 8.0
    shadow_corr_m: float = 25.0
    routes: tuple = ()
    speed_kmh: float = 60.0
    n_ues: int = 1
    mobility: MobilityParams = field(default_factory=MobilityParams)
    abs_cfg: AbsConfig = field(default_factory=AbsConfig)
    rlf: RlfConfig = field(default_factory=RlfConfig)
    strategy: StrategyConfig = field(default_factory=StrategyConfig)
    bias_matrix: BiasMatrix | None = None
    name: str = "scenario"

    @property
    def n_cells(self) -> int:
        return len(self.cells)


# ---------------------------------------------------------------------------


def _parse_yaml(text: str):
    try:
        return yaml.safe_load(text)
    except yaml.MarkedYAMLError as exc:
        mark = exc.problem_mark or exc.context_mark
        line = mark.line + 1 if mark else None
        raise ConfigError(f"parse error at line {line}: {exc.problem}", line=line) from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"parse error: {exc}") from None


class _Checker:
    def __init__(self):
        self.diags: list[Diagnostic] = []

    def error(self, path, msg):
        self.diags.append(Diagnostic("error", path, msg))

    def warn(self, path, msg):
        self.diags.append(Diagnostic("warning", path, msg))

    def section(self, doc, key, known):
        sec = doc.get(key) or {}
        if not isinstance(sec, dict):
            self.error(key, "expected a mapping")
            return {}
        for k in sec:
            if k not in known:
                self.warn(f"{key}.{k}", "unknown key ignored")
        return sec

    def number(self, sec, key, path, default, lo=None, hi=None, lo_open=False, integer=False):
        if key not in sec or sec[key] is None:
            return default
        v = sec[key]
        if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
            self.error(path, f"expected a finite number, got {v!r}")
            return default
        if integer and int(v) != v:
            self.error(path, f"expected an integer, got {v!r}")
            return default
        if lo is not None and (v <= lo if lo_open else v < lo):
            self.error(path, f"must be {'>' if lo_open else '>='} {lo:g}, got {v:g}")
            return default
        if hi is not None and v > hi:
            self.error(path, f"must be <= {hi:g}, got {v:g}")
            return default
        return int(v) if integer else float(v)

    def flag(self, sec, key, path, default):
        v = sec.get(key, default)
        if not isinstance(v, bool):
            self.error(path, f"expected true/false, got {v!r}")
            return default
        return v


TOP_KEYS = {"name", "seed", "grid", "propagation", "cells", "routes", "mobility", "strategy", "abs", "rlf", "bias_matrix"}


def _build(doc) -> tuple[Scenario | None, list[Diagnostic]]:
    ck = _Checker()
    if not isinstance(doc, dict):
        ck.error("<root>", "scenario must be a mapping")
        return None, ck.diags
    for k in doc:
        if k not in TOP_KEYS:
            ck.warn(str(k), "unknown key ignored")

    seed = ck.number(doc, "seed", "seed", 0, lo=0, integer=True)

    g = ck.section(doc, "grid", {"origin", "cell_size", "nx", "ny"})
    origin = g.get("origin", [0.0, 0.0])
    if not (isinstance(origin, (list, tuple)) and len(origin) == 2):
        ck.error("grid.origin", "expected [x, y]")
        origin = [0.0, 0.0]
    cell_size = ck.number(g, "cell_size", "grid.cell_size", 5.0, lo=0, lo_open=True)
    nx = ck.number(g, "nx", "grid.nx", 1, lo=1, integer=True)
    ny = ck.number(g, "ny", "grid.ny", 1, lo=1, integer=True)
    if "nx" not in g or "ny" not in g:
        ck.error("grid", "nx and ny are required")
    grid = GridSpec((float(origin[0]), float(origin[1])), cell_size, nx, ny)

    prop = ck.section(doc, "propagation", {"noise_dbm", "shadow_sigma_db", "shadow_corr_m", "n_resource_elements"})
    noise = ck.number(prop, "noise_dbm", "propagation.noise_dbm", -123.2)
    sigma = ck.number(prop, "shadow_sigma_db", "propagation.shadow_sigma_db", 8.0, lo=0)
    corr = ck.number(prop, "shadow_corr_m", "propagation.shadow_corr_m", 25.0, lo=0, lo_open=True)
    n_re = ck.number(prop, "n_resource_elements", "propagation.n_resource_elements", N_RESOURCE_ELEMENTS, lo=1, integer=True)
    rs_offset = 10.0 * math.log10(n_re)

    cells = []
    raw_cells = doc.get("cells")
    if not isinstance(raw_cells, list) or not raw_cells:
        ck.error("cells", "at least one cell is required")
        raw_cells = []
    seen = {}
    cell_keys = {"id", "kind", "x", "y", "tx_power_dbm", "rs_power_dbm", "height_m", "pathloss", "name"}
    for k, c in enumerate(raw_cells):
        path = f"cells[{k}]"
        if not isinstance(c, dict):
            ck.error(path, "expected a mapping")
            continue
        for key in c:
            if key not in cell_keys:
                ck.warn(f"{path}.{key}", "unknown key ignored")
        cid = c.get("id", k)
        if isinstance(cid, bool) or not isinstance(cid, int):
            ck.error(f"{path}.id", f"expected an integer id, got {cid!r}")
            continue
        if cid in seen:
            ck.error(f"{path}.id", f"duplicate cell id {cid} (also cells[{seen[cid]}])")
            continue
        seen[cid] = k
        try:
            kind = CellKind(str(c.get("kind", "macro")).lower())
        except ValueError:
            ck.error(f"{path}.kind", f"expected macro or pico, got {c.get('kind')!r}")
            continue
        x = ck.number(c, "x", f"{path}.x", None)
        y = ck.number(c, "y", f"{path}.y", None)
        if x is None or y is None:
            ck.error(path, "x and y are required")
            continue
        tx = ck.number(c, "tx_power_dbm", f"{path}.tx_power_dbm", DEFAULT_TX_POWER_DBM[kind], lo=0)
        rs = ck.number(c, "rs_power_dbm", f"{path}.rs_power_dbm", tx - rs_offset)
        height = ck.number(c, "height_m", f"{path}.height_m", DEFAULT_HEIGHT_M[kind], lo=0)
        pl = DEFAULT_PATHLOSS[kind]
        if "pathloss" in c:
            plc = c["pathloss"] or {}
            if not isinstance(plc, dict):
                ck.error(f"{path}.pathloss", "expected {intercept_db, slope_db}")
            else:
                a = ck.number(plc, "intercept_db", f"{path}.pathloss.intercept_db", pl.intercept_db)
                s = ck.number(plc, "slope_db", f"{path}.pathloss.slope_db", pl.slope_db, lo=0, lo_open=True)
                pl = PathlossModel(a, s, str(plc.get("name", "custom")))
        cells.append(Cell(cid, kind, (x, y), rs, height, pl, str(c.get("name", ""))))

    cells.sort(key=lambda c: c.id)
    if cells and [c.id for c in cells] != list(range(len(cells))):
        ck.error("cells", f"cell ids must be dense 0..{len(cells) - 1}, got {[c.id for c in cells]}")

    routes = []
    raw_routes = doc.get("routes") or []
    if not isinstance(raw_routes, list):
        ck.error("routes", "expected a list of waypoint lists")
        raw_routes = []
    for k, r in enumerate(raw_routes):
        path = f"routes[{k}]"
        try:
            pts = np.asarray(r, dtype=float)
        except (TypeError, ValueError):
            ck.error(path, "waypoints must be [x, y] pairs")
            continue
        if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] < 2:
            ck.error(path, "a route needs at least two [x, y] waypoints")
            continue
        if not np.all(np.isfinite(pts)):
            ck.error(path, "waypoints must be finite")
            continue
        if np.hypot(*np.diff(pts, axis=0).T).sum() <= 0:
            ck.error(path, "route has zero length")
            continue
        routes.append(tuple(map(tuple, pts.tolist())))

    mob = ck.section(doc, "mobility", {"speed_kmh", "H_ys", "O_ff", "K", "TTT_ms", "sample_interval_ms", "n_ues"})
    speed = ck.number(mob, "speed_kmh", "mobility.speed_kmh", 60.0, lo=0, lo_open=True)
    n_ues = ck.number(mob, "n_ues", "mobility.n_ues", 1, lo=1, integer=True)
    mobility = MobilityParams(
        H_ys=ck.number(mob, "H_ys", "mobility.H_ys", 1.0),
        O_ff=ck.number(mob, "O_ff", "mobility.O_ff", 0.0),
        K=ck.number(mob, "K", "mobility.K", 4.0, lo=0),
        TTT=ck.number(mob, "TTT_ms", "mobility.TTT_ms", 320.0, lo=0),
        sample_interval=ck.number(mob, "sample_interval_ms", "mobility.sample_interval_ms", 200.0, lo=0, lo_open=True),
    )

    st = ck.section(
        doc,
        "strategy",
        {"name", "v_max_db", "n_off", "group_radius_m", "detect_window_db", "candidate_window_db",
         "search_step_db", "asyd_literal_formula", "global_retaining", "H_g_list"},
    )
    try:
        strategy = Strategy.parse(st.get("name", "min3"))
    except ValueError as exc:
        ck.error("strategy.name", str(exc))
        strategy = Strategy.MIN3
    v_max = ck.number(st, "v_max_db", "strategy.v_max_db", DEFAULT_V_MAX, lo=0)
    if v_max > RECEIVER_V_MAX:
        ck.warn("strategy.v_max_db", f"{v_max:g} dB exceeds the 0 <= v <= {RECEIVER_V_MAX:g} dB clamp for Rel-10 receivers")
    hg = st.get("H_g_list", [0.0, 0.5, 1.0, 2.0])
    if not isinstance(hg, list) or not hg or not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in hg):
        ck.error("strategy.H_g_list", "expected a non-empty list of dB values")
        hg = [0.0]
    strat = StrategyConfig(
        strategy=strategy,
        v_max=v_max,
        n_off=ck.number(st, "n_off", "strategy.n_off", 3, lo=1, integer=True),
        group_radius=ck.number(st, "group_radius_m", "strategy.group_radius_m", 150.0, lo=0),
        detect_window_db=ck.number(st, "detect_window_db", "strategy.detect_window_db", 10.0, lo=0),
        candidate_window_db=ck.number(st, "candidate_window_db", "strategy.candidate_window_db", 20.0, lo=0),
        search_step_db=ck.number(st, "search_step_db", "strategy.search_step_db", 0.1, lo=0, lo_open=True),
        asyd_literal_formula=ck.flag(st, "asyd_literal_formula", "strategy.asyd_literal_formula", False),
        global_retaining=ck.flag(st, "global_retaining", "strategy.global_retaining", False),
        H_g_list=tuple(float(v) for v in hg),
    )

    ab = ck.section(doc, "abs", {"duty_cycle", "residual_db"})
    abs_cfg = AbsConfig(
        duty_cycle=ck.number(ab, "duty_cycle", "abs.duty_cycle", 0.5, lo=0, hi=1),
        residual_interference_db=ck.number(ab, "residual_db", "abs.residual_db", 20.0, lo=0),
    )

    rl = ck.section(doc, "rlf", {"enabled", "q_out_db", "t_exec_ms", "t310_ms", "outage_ms"})
    rlf = RlfConfig(
        enabled=ck.flag(rl, "enabled", "rlf.enabled", True),
        q_out_db=ck.number(rl, "q_out_db", "rlf.q_out_db", -8.0),
        t_exec_ms=ck.number(rl, "t_exec_ms", "rlf.t_exec_ms", 200.0, lo=0),
        t310_ms=ck.number(rl, "t310_ms", "rlf.t310_ms", 1000.0, lo=0),
        outage_ms=ck.number(rl, "outage_ms", "rlf.outage_ms", 1000.0, lo=0),
    )

    bias = None
    if doc.get("bias_matrix") is not None:
        raw = doc["bias_matrix"]
        try:
            arr = np.asarray(raw, dtype=float)
        except (TypeError, ValueError):
            arr = None
        n = len(cells)
        if arr is None or arr.shape != (n, n):
            ck.error("bias_matrix", f"expected a {n}x{n} matrix of dB values")
        else:
            for i, j in np.argwhere(np.abs(arr) > v_max + 1e-9):
                ck.error(
                    f"bias_matrix[{i}][{j}]",
                    f"bias magnitude {abs(arr[i, j]):g} dB exceeds v_max = {v_max:g} dB (clamp 0 <= v <= {v_max:g} dB)",
                )
            bias = BiasMatrix(arr)
            for p in bias.check(v_max=np.inf):
                ck.error("bias_matrix", p)

    if any(d.level == "error" for d in ck.diags):
        return None, ck.diags
    scn = Scenario(
        cells=tuple(cells),
        grid=grid,
        seed=seed,
        noise_dbm=noise,
        shadow_sigma_db=sigma,
        shadow_corr_m=corr,
        routes=tuple(routes),
        speed_kmh=speed,
        n_ues=n_ues,
        mobility=mobility,
        abs_cfg=abs_cfg,
        rlf=rlf,
        strategy=strat,
        bias_matrix=bias,
        name=str(doc.get("name", "scenario")),
    )
    return scn, ck.diags


def load_scenario(config_text: str) -> Scenario:
    """Parse and validate scenario YAML; raises :class:`ConfigError`."""
    doc = _parse_yaml(config_text)
    scn, diags = _build(doc)
    errors = [d for d in diags if d.level == "error"]
    if errors:
        raise ConfigError("; ".join(str(d) for d in errors), diags)
    return scn


def load_scenario_file(path) -> Scenario:
    with open(path) as fh:
        return load_scenario(fh.read())


def validate_config(path) -> list[Diagnostic]:
    """All diagnostics for a scenario file; parse errors come back as one diagnostic."""
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
    try:
        doc = _parse_yaml(text)
    except ConfigError as exc:
        return [Diagnostic("error", f"line {exc.line}" if exc.line else "<file>", str(exc))]
    return _build(doc)[1]


def content_hash(*texts: str) -> str:
    h = hashlib.sha256()
    for t in texts:
        h.update(t.encode())
        h.update(b"\0")
    return h.hexdigest()


def dump_scenario(scn: Scenario) -> str:
    """Render a scenario back to YAML (used to write fixture files)."""
    doc = {
        "name": scn.name,
        "seed": scn.seed,
        "grid": {"origin": list(scn.grid.origin), "cell_size": scn.grid.cell_size, "nx": scn.grid.nx, "ny": scn.grid.ny},
        "propagation": {
            "noise_dbm": scn.noise_dbm,
            "shadow_sigma_db": scn.shadow_sigma_db,
            "shadow_corr_m": scn.shadow_corr_m,
        },
        "cells": [
            {
                "id": c.id,
                "kind": c.kind.value,
                "x": c.position[0],
                "y": c.position[1],
                "rs_power_dbm": c.tx_power_rsrp_ref,
                "height_m": c.antenna_height,
                "pathloss": {
                    "intercept_db": c.pathloss_model.intercept_db,
                    "slope_db": c.pathloss_model.slope_db,
                    "name": c.pathloss_model.name,
                },
                **({"name": c.name} if c.name else {}),
            }
            for c in scn.cells
        ],
        "routes": [[list(p) for p in r] for r in scn.routes],
        "mobility": {
            "speed_kmh": scn.speed_kmh,
            "H_ys": scn.mobility.H_ys,
            "O_ff": scn.mobility.O_ff,
            "K": float(scn.mobility.K),
            "TTT_ms": scn.mobility.TTT,
            "sample_interval_ms": scn.mobility.sample_interval,
            "n_ues": scn.n_ues,
        },
        "strategy": {
            "name": scn.strategy.strategy.value,
            "v_max_db": scn.strategy.v_max,
            "n_off": scn.strategy.n_off,
            "group_radius_m": scn.strategy.group_radius,
            "detect_window_db": scn.strategy.detect_window_db,
            "candidate_window_db": scn.strategy.candidate_window_db,
            "search_step_db": scn.strategy.search_step_db,
            "asyd_literal_formula": scn.strategy.asyd_literal_formula,
            "global_retaining": scn.strategy.global_retaining,
            "H_g_list": list(scn.strategy.H_g_list),
        },
        "abs": {"duty_cycle": scn.abs_cfg.duty_cycle, "residual_db": scn.abs_cfg.residual_interference_db},
        "rlf": {
            "enabled": scn.rlf.enabled,
            "q_out_db": scn.rlf.q_out_db,
            "t_exec_ms": scn.rlf.t_exec_ms,
            "t310_ms": scn.rlf.t310_ms,
            "outage_ms": scn.rlf.outage_ms,
        },
    }
    if scn.bias_matrix is not None:
        doc["bias_matrix"] = scn.bias_matrix.values.tolist()
    return yaml.safe_dump(doc, sort_keys=False, default_flow_style=None)
