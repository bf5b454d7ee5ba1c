"""Synthetic deployments used by tests, acceptance runs and the CLI examples."""

from __future__ import annotations

from dataclasses import replace

import numpy as np

from .bias import BiasMatrix, MobilityParams
from .config import Scenario, StrategyConfig
from .mobility import AbsConfig, RlfConfig
from .network import GridSpec, make_cell

LINE_P1, LINE_M1, LINE_M2 = 0, 1, 2


def race_example_matrices(b: float = 5.0) -> dict[str, BiasMatrix]:
    """The three race-avoidance examples, rows ordered P1, M1, M2."""
    return {
        "race": BiasMatrix([[0, -b, 0], [b, 0, 0], [0, 0, 0]]),
        "no_race": BiasMatrix([[0, -b, -b], [b, 0, 0], [0, 0, 0]]),
        "global_retaining": BiasMatrix([[b, 0, 0], [b, 0, 0], [0, 0, 0]]),
    }


def line_scenario(cell_size: float = 1.0, bias: str | None = None, b: float = 5.0) -> Scenario:
    """Two macros 1 km apart with a pico between them, sampled on a line.

    The pico sits 380 m from M1 so its range-extended edge falls just short
    of the M1/M2 border, where M2 is weaker than M1 by 1-3 dB: the layout
    that produces a macro-macro-pico race when the pico does not retain M2.
    """
    cells = (
        make_cell(LINE_P1, "pico", (380.0, 0.0), name="P1"),
        make_cell(LINE_M1, "macro", (0.0, 0.0), name="M1"),
        make_cell(LINE_M2, "macro", (1000.0, 0.0), name="M2"),
    )
    nx = int(round(800 / cell_size)) + 1
    grid = GridSpec((100.0, 0.0), cell_size, nx, 1)
    return Scenario(
        cells=cells,
        grid=grid,
        seed=1,
        shadow_sigma_db=0.0,
        routes=(((100.0, 0.0), (900.0, 0.0)),),
        mobility=MobilityParams(H_ys=1.0, O_ff=0.0, K=0, TTT=0.0),
        strategy=StrategyConfig(H_g_list=(0.0, 0.5, 1.0, 2.0)),
        bias_matrix=None if bias is None else race_example_matrices(b)[bias],
        name="line-race",
    )


def street_htn_scenario(
    seed: int = 0,
    size_m: float = 1000.0,
    cell_size: float = 5.0,
    pico_spacing: float = 100.0,
    streets=(250.0, 500.0, 750.0),
    shadow_sigma_db: float = 8.0,
    n_ues: int = 1,
    picos: bool = True,
) -> Scenario:
    """Hexagonal macro layer (500 m spacing) with picos along east-west streets.

    The drive route covers every street in both directions.
    """
    isd = 500.0
    macro_pos = []
    for row in range(-1, int(size_m / (isd * np.sqrt(3) / 2)) + 2):
        y = row * isd * np.sqrt(3) / 2
        shift = isd / 2 if row % 2 else 0.0
        for col in range(-1, int(size_m / isd) + 2):
            x = col * isd + shift
            if -isd / 2 <= x <= size_m + isd / 2 and -isd / 2 <= y <= size_m + isd / 2:
                macro_pos.append((x, y))
    cells = []
    if picos:
        for y in streets:
            x = pico_spacing / 2
            while x < size_m:
                if min(np.hypot(x - mx, y - my) for mx, my in macro_pos) > 120.0:
                    cells.append(("pico", (x, y)))
                x += pico_spacing
    cells += [("macro", p) for p in macro_pos]
    cells = tuple(make_cell(k, kind, pos) for k, (kind, pos) in enumerate(cells))
    n = int(round(size_m / cell_size)) + 1
    routes = []
    for y in streets:
        routes.append(((0.0, y), (size_m, y), (0.0, y)))
    return Scenario(
        cells=cells,
        grid=GridSpec((0.0, 0.0), cell_size, n, n),
        seed=seed,
        shadow_sigma_db=shadow_sigma_db,
        shadow_corr_m=25.0,
        routes=tuple(routes),
        n_ues=n_ues,
        mobility=MobilityParams(),
        abs_cfg=AbsConfig(),
        rlf=RlfConfig(),
        name="street-htn",
    )


def random_scenario(rng: np.random.Generator, size_m: float = 400.0, cell_size: float = 10.0) -> Scenario:
    """Small random deployment with random powers and shadowing."""
    n_macro = int(rng.integers(1, 4))
    n_pico = int(rng.integers(1, 6))
    cells = []
    for k in range(n_pico + n_macro):
        kind = "pico" if k < n_pico else "macro"
        pos = rng.uniform(-0.25 * size_m, 1.25 * size_m, 2) if kind == "macro" else rng.uniform(0, size_m, 2)
        base = 15.2 if kind == "macro" else -0.8
        cells.append(make_cell(k, kind, pos, tx_power=base + rng.uniform(-6, 6)))
    n = int(round(size_m / cell_size)) + 1
    return Scenario(
        cells=tuple(cells),
        grid=GridSpec((0.0, 0.0), cell_size, n, n),
        seed=int(rng.integers(0, 2**31)),
        shadow_sigma_db=float(rng.uniform(0, 10)),
        shadow_corr_m=float(rng.uniform(10, 60)),
        name="random",
    )


def short_stay_scenario(seed: int = 0) -> Scenario:
    """Street network tuned to expose race-driven short stays.

    A 160 ms time-to-trigger fires on the first sample that satisfies A3, so
    a one-sample dwell is possible, and the failure model is off so every
    dwell ends in a handover rather than a drop.
    """
    scn = street_htn_scenario(seed=seed)
    return replace(
        scn,
        mobility=replace(scn.mobility, TTT=160.0),
        rlf=RlfConfig(enabled=False),
        name="short-stay",
    )
