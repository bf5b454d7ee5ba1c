"""Mobility KPIs from simulation event logs."""

from __future__ import annotations

import csv
import enum
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np

HO_TYPES = ("MM", "MP", "PM", "PP")
ROW_TYPES = ("All",) + HO_TYPES
ABSENT = "-"


class HoType(str, enum.Enum):
    MM = "MM"
    MP = "MP"
    PM = "PM"
    PP = "PP"


def classify_handover_type(from_cell, to_cell) -> HoType:
    """Leg type from the kinds of source and target (cells or ``is_pico`` flags)."""
    src = from_cell if isinstance(from_cell, (bool, np.bool_)) else from_cell.is_pico
    dst = to_cell if isinstance(to_cell, (bool, np.bool_)) else to_cell.is_pico
    return HoType(("P" if src else "M") + ("P" if dst else "M"))


def prob_100s_call_drop(rlf_rate: float) -> float:
    """Percent chance of at least one drop in 100 s for a Poisson drop rate (1/s)."""
    if rlf_rate < 0:
        raise ValueError(f"drop rate must be >= 0, got {rlf_rate}")
    return 100.0 * -math.expm1(-rlf_rate * 100.0)


@dataclass
class KpiReport:
    name: str
    ho_event_fail_rate_pct: dict[str, float | None]
    prob_100s_call_drop_pct: dict[str, float | None]
    ho_per_100s: dict[str, float | None]
    prob_tos_below_pct: dict[str, float | None]
    median_tos_s: float | None
    p5_tos_s: float | None
    mean_tos_s: float | None
    race_event_rate: float | None  # short dwells per connected second
    edge_sinr_loss_db: float | None
    distance_m: dict[str, float]
    attempts: dict[str, int] = field(default_factory=dict)
    failures: dict[str, int] = field(default_factory=dict)
    successes: dict[str, int] = field(default_factory=dict)
    drops: int = 0
    connected_s: float = 0.0
    ping_pong_rate: float | None = None
    tos_threshold_ms: float = 500.0
    race_threshold_ms: float = 200.0

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    @classmethod
    def from_dict(cls, d: dict) -> "KpiReport":
        return cls(**d)


# ---------------------------------------------------------------------------


def _rate(num, den, scale=1.0):
    return None if den == 0 else scale * num / den


def compute_kpis(
    log,
    tos_threshold_ms: float = 500.0,
    race_threshold_ms: float = 200.0,
    name: str = "run",
) -> KpiReport:
    """Aggregate an event log into the KPI suite.

    Time-of-stay statistics use dwells that ended in a successful handover,
    each attributed to that handover's leg type. A dwell counts as a race
    event when it lasts at most ``race_threshold_ms`` (one sample interval at
    the default settings); short stays are strictly below ``tos_threshold_ms``.
    """
    events = log.events
    if not events:
        raise ValueError("cannot compute KPIs from an empty event log")
    pico = log.pico_mask
    attempts = {t: 0 for t in HO_TYPES}
    failures = {t: 0 for t in HO_TYPES}
    successes = {t: 0 for t in HO_TYPES}
    tos_by_type = {t: [] for t in HO_TYPES}
    drops = 0
    n_samples = 0
    dist = {"macro": 0.0, "pico": 0.0}
    sinr, ideal = [], []
    last_ho = {}
    ping_pongs = 0

    for e in events:
        kind = e.event
        if kind == "HO_ATTEMPT":
            attempts[e.ho_type] += 1
        elif kind == "HO_FAILURE":
            failures[e.ho_type] += 1
        elif kind == "HO_SUCCESS":
            successes[e.ho_type] += 1
            prev = last_ho.get(e.ue_id)
            if prev is not None and prev[1] == e.from_cell and prev[0] == e.to_cell and e.t_ms - prev[2] < tos_threshold_ms:
                ping_pongs += 1
            last_ho[e.ue_id] = (e.from_cell, e.to_cell, e.t_ms)
        elif kind == "RLF":
            drops += 1
        elif kind == "DWELL":
            tos_by_type[e.ho_type].append(e.tos_ms)
        elif kind == "SAMPLE":
            n_samples += 1
            dist["pico" if pico[e.from_cell] else "macro"] += log.step_m
            sinr.append(e.sinr_db)
        elif kind == "IDEAL":
            ideal.append(e.sinr_db)

    connected_s = n_samples * log.sample_interval_ms / 1000.0
    ho_fail_drops = {t: failures[t] for t in HO_TYPES}
    all_att = sum(attempts.values())
    all_fail = sum(failures.values())
    all_succ = sum(successes.values())
    all_tos = [x for t in HO_TYPES for x in tos_by_type[t]]

    fail_rate = {"All": _rate(all_fail, all_att, 100.0)}
    drop = {"All": None if connected_s == 0 else prob_100s_call_drop(drops / connected_s)}
    ho_rate = {"All": _rate(all_succ, connected_s, 100.0)}
    short = {"All": _rate(sum(x < tos_threshold_ms for x in all_tos), len(all_tos), 100.0)}
    for t in HO_TYPES:
        present = attempts[t] > 0
        fail_rate[t] = _rate(failures[t], attempts[t], 100.0)
        drop[t] = prob_100s_call_drop(ho_fail_drops[t] / connected_s) if present and connected_s else None
        ho_rate[t] = _rate(successes[t], connected_s, 100.0) if present else None
        tos = tos_by_type[t]
        short[t] = _rate(sum(x < tos_threshold_ms for x in tos), len(tos), 100.0)

    if all_tos:
        arr = np.asarray(all_tos) / 1000.0
        median, p5, mean = float(np.median(arr)), float(np.percentile(arr, 5)), float(arr.mean())
    else:
        median = p5 = mean = None
    races = sum(x <= race_threshold_ms for x in all_tos)
    edge = None
    if sinr:
        edge = float(np.percentile(ideal, 5) - np.percentile(sinr, 5))

    return KpiReport(
        name=name,
        ho_event_fail_rate_pct=fail_rate,
        prob_100s_call_drop_pct=drop,
        ho_per_100s=ho_rate,
        prob_tos_below_pct=short,
        median_tos_s=median,
        p5_tos_s=p5,
        mean_tos_s=mean,
        race_event_rate=_rate(races, connected_s),
        edge_sinr_loss_db=edge,
        distance_m=dist,
        attempts=attempts,
        failures=failures,
        successes=successes,
        drops=drops,
        connected_s=connected_s,
        ping_pong_rate=_rate(ping_pongs, connected_s),
        tos_threshold_ms=tos_threshold_ms,
        race_threshold_ms=race_threshold_ms,
    )


def tos_histogram(log, bin_ms: float = 200.0) -> list[tuple[float, int]]:
    tos = [e.tos_ms for e in log.events if e.event == "DWELL"]
    if not tos:
        return []
    idx = np.floor(np.asarray(tos) / bin_ms).astype(int)
    counts = np.bincount(idx)
    return [(float(k * bin_ms), int(c)) for k, c in enumerate(counts)]


def tos_histogram_csv(log, bin_ms: float = 200.0) -> str:
    lines = ["bin_ms,count"] + [f"{b!r},{c}" for b, c in tos_histogram(log, bin_ms)]
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# tabular export


def _rows(r: KpiReport):
    """(row label, value) pairs in output order."""
    out = []
    thr = r.tos_threshold_ms
    for t in ROW_TYPES:
        out.append((f"HO Event Fail Rate (%) {t}", r.ho_event_fail_rate_pct.get(t)))
    for t in ROW_TYPES:
        out.append((f"Prob(100sCallDrop) (%) {t}", r.prob_100s_call_drop_pct.get(t)))
    for t in ROW_TYPES:
        out.append((f"HO/100s {t}", r.ho_per_100s.get(t)))
    for t in ROW_TYPES:
        out.append((f"Prob(TOS<{thr:g}ms) (%) {t}", r.prob_tos_below_pct.get(t)))
    out.append(("Median TOS(s) All", r.median_tos_s))
    out.append(("5thPC TOS(s) All", r.p5_tos_s))
    out.append(("Mean TOS(s) All", r.mean_tos_s))
    out.append(("Edge SINR Loss (dB)", r.edge_sinr_loss_db))
    out.append(("Driving distance (m) macro", r.distance_m.get("macro")))
    out.append(("Driving distance (m) pico", r.distance_m.get("pico")))
    return out


def _fmt(v):
    return ABSENT if v is None else repr(float(v))


def report_table(reports) -> list[list[str]]:
    reports = list(reports)
    table = [["Metric"] + [r.name for r in reports]]
    labels = [lab for lab, _ in _rows(reports[0])]
    columns = [dict(_rows(r)) for r in reports]
    for lab in labels:
        table.append([lab] + [_fmt(col.get(lab)) for col in columns])
    return table


def export_report(reports, fmt: str = "csv", path=None) -> str:
    """Render one or more reports, one column per run; writes ``path`` if given."""
    if isinstance(reports, KpiReport):
        reports = [reports]
    if fmt == "csv":
        buf = io.StringIO()
        csv.writer(buf, lineterminator="\n").writerows(report_table(reports))
        text = buf.getvalue()
    elif fmt == "json":
        text = json.dumps([r.to_dict() for r in reports], indent=2, sort_keys=True) + "\n"
    else:
        raise ValueError(f"unknown report format {fmt!r}")
    if path is not None:
        try:
            with open(path, "w") as fh:
                fh.write(text)
        except OSError as exc:
            raise OSError(f"cannot write report to {path}: {exc.strerror}") from exc
    return text


def import_report(text: str, fmt: str = "json") -> list[KpiReport]:
    """Read reports written by :func:`export_report` in JSON form."""
    if fmt != "json":
        raise ValueError("only the JSON form carries the full report")
    return [KpiReport.from_dict(d) for d in json.loads(text)]


def read_report_csv(text: str) -> dict[str, dict[str, float | None]]:
    """Parse the CSV table into ``{run: {row label: value}}``."""
    rows = list(csv.reader(io.StringIO(text)))
    names = rows[0][1:]
    out = {n: {} for n in names}
    for row in rows[1:]:
        for n, v in zip(names, row[1:]):
            out[n][row[0]] = None if v == ABSENT else float(v)
    return out
