"""Time-stepped UE mobility: L3 filtering, A3/TTT handover, failures and RLF."""

from __future__ import annotations

import csv
import enum
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .bias import BiasMatrix, MobilityParams
from .kpi import classify_handover_type
from .network import ShadowField, generate_shadow_field, point_rsrp


# ---------------------------------------------------------------------------
# trajectories


@dataclass(frozen=True)
class Trajectory:
    waypoints: np.ndarray
    speed_kmh: float
    sample_interval_ms: float
    positions: np.ndarray  # (n_samples, 2)

    @property
    def step_m(self) -> float:
        return self.speed_kmh / 3.6 * self.sample_interval_ms / 1000.0

    def __len__(self):
        return len(self.positions)


def build_trajectory(route, speed_kmh: float, sample_interval_ms: float = 200.0, loops: int = 1) -> Trajectory:
    """Sample a polyline at constant speed.

    Sample ``k`` sits at arc length ``k * step``; the number of samples is the
    route length divided by the step, so each sample stands for one step of
    driving.
    """
    pts = np.asarray(route, dtype=float)
    if pts.ndim != 2 or pts.shape[0] < 2 or pts.shape[1] != 2:
        raise ValueError("a route needs at least two (x, y) waypoints")
    if not speed_kmh > 0:
        raise ValueError(f"speed must be > 0, got {speed_kmh}")
    if loops > 1:
        pts = np.vstack([pts] + [pts[1:] if np.allclose(pts[0], pts[-1]) else pts for _ in range(loops - 1)])
    seg = np.hypot(*np.diff(pts, axis=0).T)
    total = seg.sum()
    if total <= 0:
        raise ValueError("route has zero length")
    step = speed_kmh / 3.6 * sample_interval_ms / 1000.0
    n = int(math.floor(total / step + 1e-9))
    s = np.arange(max(n, 1)) * step
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    x = np.interp(s, cum, pts[:, 0])
    y = np.interp(s, cum, pts[:, 1])
    return Trajectory(pts, float(speed_kmh), float(sample_interval_ms), np.column_stack([x, y]))


def stationary_trajectory(point, n_samples: int, sample_interval_ms: float = 200.0) -> Trajectory:
    pos = np.tile(np.asarray(point, dtype=float), (n_samples, 1))
    return Trajectory(pos[:2].copy(), 0.0, float(sample_interval_ms), pos)


# ---------------------------------------------------------------------------
# measurement and link quality


def l3_filter_step(F_prev, M, K: float):
    """``F_n = (1 - a) F_{n-1} + a M_n`` with ``a = (1/2)^(K/4)``; ``None`` starts the filter."""
    if K < 0:
        raise ValueError(f"filter coefficient K must be >= 0, got {K}")
    if F_prev is None:
        return M
    a = 0.5 ** (K / 4.0)
    return (1.0 - a) * F_prev + a * M


class Subframe(str, enum.Enum):
    NORMAL = "normal"
    PROTECTED = "protected"


@dataclass(frozen=True)
class AbsConfig:
    duty_cycle: float = 0.5
    residual_interference_db: float = 20.0

    def __post_init__(self):
        if not 0.0 <= self.duty_cycle <= 1.0:
            raise ValueError(f"ABS duty cycle must be in [0, 1], got {self.duty_cycle}")
        if self.residual_interference_db < 0:
            raise ValueError(f"ABS residual reduction must be >= 0, got {self.residual_interference_db}")

    @property
    def enabled(self) -> bool:
        return self.duty_cycle > 0


@dataclass(frozen=True)
class RlfConfig:
    """Handover-failure and radio-link-failure model settings."""

    enabled: bool = True
    q_out_db: float = -8.0
    t_exec_ms: float = 200.0
    t310_ms: float = 1000.0
    outage_ms: float = 1000.0


def sinr_dB(point_rsrp, serving: int, pico_mask, abs_cfg: AbsConfig | None = None,
            subframe: Subframe = Subframe.NORMAL, noise_dbm: float = -123.2) -> float:
    m = np.asarray(point_rsrp, dtype=float)
    p = 10.0 ** (m / 10.0)
    interf = np.delete(p, serving)
    if subframe is Subframe.PROTECTED and abs_cfg is not None and pico_mask[serving]:
        macro = ~np.delete(np.asarray(pico_mask, dtype=bool), serving)
        interf = np.where(macro, interf * 10.0 ** (-abs_cfg.residual_interference_db / 10.0), interf)
    return float(10.0 * np.log10(p[serving] / (interf.sum() + 10.0 ** (noise_dbm / 10.0))))


def serving_subframe(serving: int, pico_mask, abs_cfg: AbsConfig | None) -> Subframe:
    if abs_cfg is not None and abs_cfg.enabled and pico_mask[serving]:
        return Subframe.PROTECTED
    return Subframe.NORMAL


def resolve_handover(sinr_trace, rlf: RlfConfig):
    """Judge a handover from the source-cell SINR at trigger and through execution.

    Returns ``(success, index)`` where ``index`` is the first sample below
    ``Q_out`` on failure and ``None`` on success.
    """
    for k, s in enumerate(sinr_trace):
        if s < rlf.q_out_db:
            return False, k
    return True, None


# ---------------------------------------------------------------------------
# UE state machine


class ConnState(str, enum.Enum):
    IDLE = "idle"
    CONNECTED = "connected"
    EXECUTING = "executing"
    OUTAGE = "outage"


@dataclass
class Event:
    t_ms: float
    ue_id: int
    event: str
    from_cell: int | None = None
    to_cell: int | None = None
    ho_type: str | None = None
    tos_ms: float | None = None
    sinr_db: float | None = None


@dataclass
class SimContext:
    B: BiasMatrix
    params: MobilityParams
    pico_mask: np.ndarray
    abs_cfg: AbsConfig | None = None
    rlf: RlfConfig = field(default_factory=RlfConfig)
    noise_dbm: float = -123.2

    @property
    def exec_samples(self) -> int:
        return int(math.ceil(self.rlf.t_exec_ms / self.params.sample_interval - 1e-9))


@dataclass
class UeState:
    ue_id: int
    n_cells: int
    serving: int | None = None
    filters: np.ndarray | None = None
    ttt: np.ndarray | None = None
    conn: ConnState = ConnState.IDLE
    dwell_start_ms: float = 0.0
    target: int | None = None
    exec_left: int = 0
    exec_trace: list = field(default_factory=list)
    below_qout_ms: float = 0.0
    outage_until_ms: float = 0.0

    def __post_init__(self):
        if self.ttt is None:
            self.ttt = np.zeros(self.n_cells)


def _ho_type(ctx, a, b):
    return classify_handover_type(bool(ctx.pico_mask[a]), bool(ctx.pico_mask[b])).value


def _attach(state: UeState, M, t, events, kind):
    state.serving = int(np.argmax(M))
    state.conn = ConnState.CONNECTED
    state.dwell_start_ms = t
    state.ttt[:] = 0.0
    state.below_qout_ms = 0.0
    events.append(Event(t, state.ue_id, kind, to_cell=state.serving))


def _complete(state: UeState, ctx: SimContext, t, events):
    src, dst = state.serving, state.target
    typ = _ho_type(ctx, src, dst)
    events.append(Event(t, state.ue_id, "HO_SUCCESS", src, dst, typ))
    events.append(Event(t, state.ue_id, "DWELL", src, dst, typ, t - state.dwell_start_ms))
    state.serving = dst
    state.dwell_start_ms = t
    state.conn = ConnState.CONNECTED
    state.target = None
    state.exec_trace = []
    state.below_qout_ms = 0.0
    state.ttt[:] = 0.0


def _drop(state: UeState, ctx: SimContext, t, events, cause, ho_type=None):
    src = state.serving
    if ho_type is not None:
        events.append(Event(t, state.ue_id, "HO_FAILURE", src, state.target, ho_type))
    events.append(Event(t, state.ue_id, "DWELL_RLF", src, None, None, t - state.dwell_start_ms))
    events.append(Event(t, state.ue_id, "RLF", src, None, cause))
    state.serving = None
    state.target = None
    state.exec_trace = []
    state.conn = ConnState.OUTAGE
    state.outage_until_ms = t + ctx.rlf.outage_ms
    state.ttt[:] = 0.0


def ue_step(state: UeState, sample, t_ms: float, ctx: SimContext):
    """Advance one UE by one measurement sample (mutates and returns ``state``).

    Returns ``(state, events)``. After the step the serving cell (if any) is
    charged for the interval starting at ``t_ms``.
    """
    M = np.asarray(sample, dtype=float)
    params, rlf = ctx.params, ctx.rlf
    dt = params.sample_interval
    events: list[Event] = []

    state.filters = l3_filter_step(state.filters, M, params.K)

    if state.conn is ConnState.IDLE:
        _attach(state, M, t_ms, events, "ATTACH")
        return state, events
    if state.conn is ConnState.OUTAGE:
        if t_ms >= state.outage_until_ms:
            _attach(state, M, t_ms, events, "REESTABLISH")
        return state, events

    s = state.serving
    sinr = sinr_dB(M, s, ctx.pico_mask, ctx.abs_cfg, serving_subframe(s, ctx.pico_mask, ctx.abs_cfg), ctx.noise_dbm)

    if state.conn is ConnState.EXECUTING:
        state.exec_trace.append(sinr)
        ok, _ = resolve_handover(state.exec_trace, rlf)
        if not ok:
            _drop(state, ctx, t_ms, events, "ho_failure", _ho_type(ctx, s, state.target))
            return state, events
        state.exec_left -= 1
        if state.exec_left <= 0:
            _complete(state, ctx, t_ms, events)
        return state, events

    if rlf.enabled:
        state.below_qout_ms = state.below_qout_ms + dt if sinr < rlf.q_out_db else 0.0
        if state.below_qout_ms >= rlf.t310_ms:
            _drop(state, ctx, t_ms, events, "rlf")
            return state, events

    F = state.filters
    b = ctx.B.values
    eh = params.H_g + b[s, s] - b[s]  # same association as effective_hysteresis
    cond = F > F[s] + eh
    cond[s] = False
    state.ttt = np.where(cond, state.ttt + dt, 0.0)
    fired = cond & (state.ttt >= params.TTT)
    if not fired.any():
        return state, events

    score = np.where(fired, F + b[s], -np.inf)
    target = int(np.argmax(score))
    typ = _ho_type(ctx, s, target)
    events.append(Event(t_ms, state.ue_id, "HO_ATTEMPT", s, target, typ))
    state.ttt[:] = 0.0
    state.target = target
    if not rlf.enabled:
        _complete(state, ctx, t_ms, events)
        return state, events
    state.exec_trace = [sinr]
    ok, _ = resolve_handover(state.exec_trace, rlf)
    if not ok:
        _drop(state, ctx, t_ms, events, "ho_failure", typ)
    elif ctx.exec_samples == 0:
        _complete(state, ctx, t_ms, events)
    else:
        state.conn = ConnState.EXECUTING
        state.exec_left = ctx.exec_samples
    return state, events


# ---------------------------------------------------------------------------
# event log


@dataclass
class EventLog:
    events: list[Event]
    pico_mask: np.ndarray
    sample_interval_ms: float
    step_m: float
    serving_trace: dict[int, list] = field(default_factory=dict)

    COLUMNS = ("t_ms", "ue_id", "event", "from_cell", "to_cell", "ho_type", "tos_ms", "sinr_db")

    def of_kind(self, kind: str) -> list[Event]:
        return [e for e in self.events if e.event == kind]

    def to_csv(self) -> str:
        buf = io.StringIO()
        kinds = "".join("P" if p else "M" for p in self.pico_mask)
        buf.write(f"# sample_interval_ms={self.sample_interval_ms!r};step_m={self.step_m!r};cells={kinds}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.COLUMNS)

        def f(v):
            if v is None:
                return ""
            return repr(float(v)) if isinstance(v, float) else str(v)

        for e in self.events:
            w.writerow([f(getattr(e, c)) for c in self.COLUMNS])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "EventLog":
        lines = text.splitlines()
        meta = dict(kv.split("=") for kv in lines[0].lstrip("# ").split(";"))
        rows = list(csv.DictReader(lines[1:]))
        events = []
        for r in rows:
            events.append(
                Event(
                    t_ms=float(r["t_ms"]),
                    ue_id=int(r["ue_id"]),
                    event=r["event"],
                    from_cell=int(r["from_cell"]) if r["from_cell"] else None,
                    to_cell=int(r["to_cell"]) if r["to_cell"] else None,
                    ho_type=r["ho_type"] or None,
                    tos_ms=float(r["tos_ms"]) if r["tos_ms"] else None,
                    sinr_db=float(r["sinr_db"]) if r["sinr_db"] else None,
                )
            )
        pico = np.array([c == "P" for c in meta["cells"]], dtype=bool)
        return cls(events, pico, float(meta["sample_interval_ms"]), float(meta["step_m"]))


def merge_logs(logs) -> EventLog:
    """Merge per-UE logs by (time, UE id), keeping each UE's own order."""
    logs = list(logs)
    keyed = [(e.t_ms, e.ue_id, k, e) for log in logs for k, e in enumerate(log.events)]
    keyed.sort(key=lambda x: (x[0], x[1], x[2]))
    trace = {}
    for log in logs:
        trace.update(log.serving_trace)
    first = logs[0]
    return EventLog([k[3] for k in keyed], first.pico_mask, first.sample_interval_ms, first.step_m, trace)


def simulate_ue(cells, trajectory: Trajectory, ctx: SimContext, shadow: ShadowField | None = None, ue_id: int = 0) -> EventLog:
    """Drive one UE along ``trajectory`` and log every event and sample."""
    pos = trajectory.positions
    rsrp = point_rsrp(cells, pos[:, 0], pos[:, 1], shadow)  # (n_cells, n_samples)
    dt = ctx.params.sample_interval
    state = UeState(ue_id, len(cells))
    events, trace = [], []
    for k in range(rsrp.shape[1]):
        t = k * dt
        M = rsrp[:, k]
        _, evs = ue_step(state, M, t, ctx)
        events.extend(evs)
        trace.append(state.serving)
        if state.serving is not None:
            s = state.serving
            sinr = sinr_dB(M, s, ctx.pico_mask, ctx.abs_cfg, serving_subframe(s, ctx.pico_mask, ctx.abs_cfg), ctx.noise_dbm)
            ideal = int(np.argmax(M))
            events.append(Event(t, ue_id, "SAMPLE", s, ideal, None, None, sinr))
            events.append(Event(t, ue_id, "IDEAL", ideal, None, None, None,
                                sinr_dB(M, ideal, ctx.pico_mask, None, Subframe.NORMAL, ctx.noise_dbm)))
    if state.serving is not None:
        t_end = rsrp.shape[1] * dt
        events.append(Event(t_end, ue_id, "DWELL_END", state.serving, None, None, t_end - state.dwell_start_ms))
    return EventLog(events, np.asarray(ctx.pico_mask, dtype=bool), dt, trajectory.step_m, {ue_id: trace})


def ue_seed(seed, ue_id: int) -> np.random.SeedSequence:
    """Shadowing seed of UE ``ue_id``; UE 0 shares the planning map's realization."""
    return np.random.SeedSequence([int(seed), int(ue_id)])


def run_simulation(
    scenario,
    B: BiasMatrix,
    params: MobilityParams | None = None,
    abs_cfg: AbsConfig | None = None,
    rlf: RlfConfig | None = None,
    seed: int | None = None,
    n_ues: int | None = None,
    loops: int = 1,
) -> EventLog:
    """Simulate every route of ``scenario`` with ``n_ues`` independent UEs each.

    UE ``u`` sees its own shadowing realization drawn from ``seed``; UE 0
    drives through the same realization the planning map was built from. The
    log is fully determined by the inputs.
    """
    params = params or scenario.mobility
    abs_cfg = scenario.abs_cfg if abs_cfg is None else abs_cfg
    rlf = rlf or scenario.rlf
    seed = scenario.seed if seed is None else seed
    n_ues = n_ues or scenario.n_ues
    cells = scenario.cells
    if B.n != len(cells):
        raise ValueError(f"bias matrix is {B.n}x{B.n}, scenario has {len(cells)} cells")
    pico = np.array([c.is_pico for c in cells], dtype=bool)
    ctx = SimContext(B, params, pico, abs_cfg, rlf, scenario.noise_dbm)
    logs = []
    ue = 0
    for route in scenario.routes:
        traj = build_trajectory(route, scenario.speed_kmh, params.sample_interval, loops)
        for _ in range(n_ues):
            shadow = generate_shadow_field(
                scenario.grid, scenario.shadow_sigma_db, scenario.shadow_corr_m, ue_seed(seed, ue), len(cells)
            )
            logs.append(simulate_ue(cells, traj, ctx, shadow, ue))
            ue += 1
    return merge_logs(logs)
