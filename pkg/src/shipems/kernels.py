"""Kernel backend selection.

The compiled extension is used when it imports; otherwise the numpy fallback.
Set ``SHIPEMS_PURE_PYTHON=1`` to force the fallback.
"""

from __future__ import annotations

import os
from typing import NamedTuple

import numpy as np

from . import _kernels_py as _py
from ._kernels_py import *  # noqa: F401,F403  (layout constants)
from .config import ShipConfig

_impl = _py
if os.environ.get("SHIPEMS_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _impl  # type: ignore[no-redef]
    except ImportError:  # extension not built
        _impl = _py

BACKEND: str = _impl.BACKEND
step = _impl.step
port_cost_grid = _impl.port_cost_grid
dp_backward = _impl.dp_backward
interp_soc = _impl.interp_soc
efficiency = _impl.efficiency

ON_THRESHOLD_PU = 1e-9


class Physics(NamedTuple):
    """Packed plant parameters consumed by every kernel."""

    params: np.ndarray
    eff_x: np.ndarray
    eff_eta: np.ndarray
    conv: np.ndarray


def pack(cfg: ShipConfig) -> Physics:
    ph = np.zeros(_py.N_PARAMS)
    ph[_py.P_CLUSTER] = cfg.cluster_power_kw
    ph[_py.DT_H] = cfg.step_seconds / 3600.0
    ph[_py.CAP] = cfg.battery_capacity_kwh
    ph[_py.ETA_CH] = cfg.battery.charge_efficiency
    ph[_py.ETA_DIS] = cfg.battery.discharge_efficiency
    ph[_py.P_CH_MAX] = cfg.battery.max_charge_kw
    ph[_py.P_DIS_MAX] = cfg.battery.max_discharge_kw
    ph[_py.SOC_MIN] = cfg.soc_min
    ph[_py.SOC_MAX] = cfg.soc_max
    ph[_py.SOC_FLOOR] = cfg.soc_terminate_floor
    ph[_py.LHV] = cfg.lhv_h2_kwh_per_kg
    ph[_py.H2_PRICE] = cfg.prices.h2_per_kg
    ph[_py.ELEC_PRICE] = cfg.prices.elec_per_kwh
    ph[_py.GWP_H2] = cfg.gwp_factors.kg_per_kg_h2
    ph[_py.GWP_ELEC] = cfg.gwp_factors.kg_per_kwh_elec
    deg = cfg.prices.fc_degradation
    ph[_py.FC_START] = deg.start_cost
    ph[_py.FC_RAMP] = deg.ramp_cost
    ph[_py.FC_LOW_H] = deg.low_power_cost_per_h
    ph[_py.FC_HIGH_H] = deg.high_power_cost_per_h
    ph[_py.X_LOW] = deg.low_threshold
    ph[_py.X_HIGH] = deg.high_threshold
    ph[_py.BATT_KAPPA] = cfg.prices.battery_per_kwh
    ph[_py.SHARE] = 1.0 / cfg.n_clusters
    ph[_py.ON_THRESHOLD] = ON_THRESHOLD_PU
    curve = np.asarray(cfg.fc_efficiency_curve, dtype=np.float64)
    return Physics(
        ph,
        np.ascontiguousarray(curve[:, 0]),
        np.ascontiguousarray(curve[:, 1]),
        np.asarray(cfg.converter_efficiencies, dtype=np.float64),
    )
