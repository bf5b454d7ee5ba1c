"""Glue for the two-stage flow: map, plan biases, analyze, simulate."""

from __future__ import annotations

from .bias import BiasPlan, Strategy, plan_bias
from .config import Scenario
from .mobility import ue_seed
from .network import RsrpMap, compute_rsrp_map, generate_shadow_field


def map_seed(seed: int):
    return ue_seed(seed, 0)


def build_map(scn: Scenario) -> RsrpMap:
    shadow = generate_shadow_field(scn.grid, scn.shadow_sigma_db, scn.shadow_corr_m, map_seed(scn.seed), scn.n_cells)
    return compute_rsrp_map(scn.cells, scn.grid, shadow)


def plan(scn: Scenario, rsrp_map: RsrpMap, strategy=None, **overrides) -> BiasPlan:
    """Plan biases with the scenario's strategy settings, optionally overridden."""
    st = scn.strategy
    kw = dict(
        n_off=st.n_off,
        group_radius=st.group_radius,
        v_max=st.v_max,
        window_db=st.detect_window_db,
        global_retaining=st.global_retaining,
        asyd_literal_formula=st.asyd_literal_formula,
        step=st.search_step_db,
    )
    kw.update(overrides)
    return plan_bias(rsrp_map, Strategy.parse(strategy or st.strategy), **kw)
