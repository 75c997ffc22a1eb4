"""Pure-Python/numpy implementation of the hot kernels.

Semantics are shared bit-for-bit with ``_kernels.pyx``: same operation order,
same branch structure.  Scalars and numpy arrays are both accepted for
``soc`` so the dynamic-programming sweep can vectorise over the SOC axis.
"""

import numpy as np

# physics parameter vector layout
P_CLUSTER = 0
DT_H = 1
CAP = 2
ETA_CH = 3
ETA_DIS = 4
P_CH_MAX = 5
P_DIS_MAX = 6
SOC_MIN = 7
SOC_MAX = 8
SOC_FLOOR = 9
LHV = 10
H2_PRICE = 11
ELEC_PRICE = 12
GWP_H2 = 13
GWP_ELEC = 14
FC_START = 15
FC_RAMP = 16
FC_LOW_H = 17
FC_HIGH_H = 18
X_LOW = 19
X_HIGH = 20
BATT_KAPPA = 21
SHARE = 22
ON_THRESHOLD = 23
N_PARAMS = 24

# step output layout
O_P1 = 0
O_DIS = 1
O_CH = 2
O_CURT = 3
O_SHORE = 4
O_UNMET = 5
O_SOC = 6
O_CB = 7
O_CF = 8
O_CH2 = 9
O_CE = 10
O_H2KG = 11
O_GWP = 12
O_INFEASIBLE = 13
N_OUT = 14

BACKEND = "python"


def efficiency(x, eff_x, eff_eta):
    """Piecewise-linear PEMFC efficiency, held constant outside the table."""
    n = eff_x.shape[0]
    if x <= eff_x[0]:
        return eff_eta[0]
    if x >= eff_x[n - 1]:
        return eff_eta[n - 1]
    j = 0
    while eff_x[j + 1] <= x:
        j += 1
    slope = (eff_eta[j + 1] - eff_eta[j]) / (eff_x[j + 1] - eff_x[j])
    return slope * (x - eff_x[j]) + eff_eta[j]


def _fuel_cells(ph, eff_x, eff_eta, conv, xprev, xnew):
    p1 = 0.0
    h2 = 0.0
    cf = 0.0
    share = ph[SHARE]
    dt = ph[DT_H]
    on = ph[ON_THRESHOLD]
    for k in range(conv.shape[0]):
        xk = float(xnew[k])
        xp = float(xprev[k])
        p1 += ph[P_CLUSTER] * xk * conv[k]
        if xk > on:
            h2 += ph[P_CLUSTER] * xk * dt / (efficiency(xk, eff_x, eff_eta) * ph[LHV])
            if xp <= on:
                cf += share * ph[FC_START]
            if xk < ph[X_LOW]:
                cf += share * ph[FC_LOW_H] * dt
            if xk > ph[X_HIGH]:
                cf += share * ph[FC_HIGH_H] * dt
        cf += share * ph[FC_RAMP] * abs(xk - xp)
    return p1, h2, cf


def step(ph, eff_x, eff_eta, conv, xprev, xnew, soc, p_dem, spa, port_left):
    """One simulated step.  Returns an ``(N_OUT,)`` array (or ``(N_OUT, n)`` for array ``soc``)."""
    p1, h2, cf = _fuel_cells(ph, eff_x, eff_eta, conv, xprev, xnew)
    soc = np.asarray(soc, dtype=np.float64)
    dt = ph[DT_H]
    cap = ph[CAP]
    zeros = np.zeros_like(soc)
    if spa == 0:
        net = p_dem - p1
        if net >= 0.0:
            drop = net * dt / (ph[ETA_DIS] * cap)
            empty = drop > soc
            avail = soc * cap * ph[ETA_DIS] / dt
            dis = np.where(empty, avail, net)
            unmet = np.where(empty, net - avail, 0.0)
            soc_next = np.where(empty, 0.0, soc - drop)
            ch = zeros
            curt = zeros
            infeasible = (dis > ph[P_DIS_MAX]) | (soc_next < ph[SOC_FLOOR]) | empty
        else:
            surplus = -net
            room = (ph[SOC_MAX] - soc) * cap / (ph[ETA_CH] * dt)
            room = np.where(room < 0.0, 0.0, room)
            ch = np.minimum(np.minimum(surplus, ph[P_CH_MAX]), room)
            curt = surplus - ch
            soc_next = soc + ch * ph[ETA_CH] * dt / cap
            soc_next = np.where((soc_next > ph[SOC_MAX]) & (soc <= ph[SOC_MAX]), ph[SOC_MAX], soc_next)
            dis = zeros
            unmet = zeros
            infeasible = soc_next < ph[SOC_FLOOR]
        shore = zeros
    else:
        room_e = (ph[SOC_MAX] - soc) * cap / ph[ETA_CH]
        room_e = np.where(room_e < 0.0, 0.0, room_e)
        ch = np.minimum(ph[P_CH_MAX], room_e / (port_left * dt))
        surplus = p1 - p_dem
        shore = np.where(surplus >= ch, 0.0, ch - surplus)
        curt = np.where(surplus >= ch, surplus - ch, 0.0)
        soc_next = soc + ch * ph[ETA_CH] * dt / cap
        soc_next = np.where((soc_next > ph[SOC_MAX]) & (soc <= ph[SOC_MAX]), ph[SOC_MAX], soc_next)
        dis = zeros
        unmet = zeros
        infeasible = np.zeros(soc.shape, dtype=bool)
    out = np.empty((N_OUT,) + soc.shape)
    out[O_P1] = p1
    out[O_DIS] = dis
    out[O_CH] = ch
    out[O_CURT] = curt
    out[O_SHORE] = shore
    out[O_UNMET] = unmet
    out[O_SOC] = soc_next
    out[O_CB] = ph[BATT_KAPPA] * (dis + ch) * dt
    out[O_CF] = cf
    out[O_CH2] = h2 * ph[H2_PRICE]
    out[O_CE] = shore * dt * ph[ELEC_PRICE]
    out[O_H2KG] = h2
    out[O_GWP] = h2 * ph[GWP_H2] + shore * dt * ph[GWP_ELEC]
    out[O_INFEASIBLE] = infeasible
    return out


def _total(out):
    return out[O_CB] + out[O_CF] + out[O_CH2] + out[O_CE]


def port_cost_grid(ph, eff_x, eff_eta, conv, x_grid, soc_grid, p_port):
    """Total port-phase cost from every (arrival setpoint, arrival SOC) grid node.

    Fuel cells are switched off on the first port step; shore power spreads the
    recharge to ``soc_max`` evenly over the remaining port steps.
    """
    n_port = p_port.shape[0]
    m = conv.shape[0]
    zero = np.zeros(m)
    result = np.empty((x_grid.shape[0], soc_grid.shape[0]))
    for ix in range(x_grid.shape[0]):
        xprev = np.full(m, x_grid[ix])
        soc = soc_grid.astype(np.float64)
        total = np.zeros_like(soc)
        for n in range(n_port):
            out = step(ph, eff_x, eff_eta, conv, xprev, zero, soc, p_port[n], 1, n_port - n)
            total = total + _total(out)
            soc = out[O_SOC]
            xprev = zero
        result[ix] = total
    return result


def interp_soc(values, soc, lo, h, n):
    """Linear interpolation of ``values`` (last axis = SOC grid) at ``soc``.

    Below the grid is infeasible (+inf); above the grid clamps to the top node.
    Exact grid hits return the node value untouched so +inf neighbours do not leak.
    """
    soc = np.asarray(soc, dtype=np.float64)
    pos = (soc - lo) / h
    i = np.floor(pos)
    w = pos - i
    below = pos < 0.0
    top = i >= n - 1
    i = np.clip(i, 0, n - 1).astype(np.intp)
    j = np.minimum(i + 1, n - 1)
    vi = values[i]
    vj = values[j]
    with np.errstate(invalid="ignore"):
        mixed = (1.0 - w) * vi + w * vj
    res = np.where((w == 0.0) | top, vi, mixed)
    res = np.where(top, values[n - 1], res)
    return np.where(below, np.inf, res)


def dp_backward(ph, eff_x, eff_eta, conv, x_grid, soc_grid, offsets, p_dem, v_terminal):
    """Backward value iteration over (time, setpoint, SOC).

    Returns ``(V, policy)`` with ``V`` shaped ``(T+1, nx, ns)`` and ``policy``
    holding the index into ``offsets`` of the minimising action (-1 where every
    action is infeasible).  Ties resolve to the first action in ``offsets``.
    """
    T = p_dem.shape[0]
    nx = x_grid.shape[0]
    ns = soc_grid.shape[0]
    lo = soc_grid[0]
    h = (soc_grid[ns - 1] - soc_grid[0]) / (ns - 1)
    V = np.empty((T + 1, nx, ns))
    V[T] = v_terminal
    policy = np.full((T, nx, ns), -1, dtype=np.int32)
    soc = soc_grid.astype(np.float64)
    for t in range(T - 1, -1, -1):
        for ix in range(nx):
            best = np.full(ns, np.inf)
            arg = np.full(ns, -1, dtype=np.int32)
            for j in range(offsets.shape[0]):
                ix2 = ix + offsets[j]
                if ix2 < 0 or ix2 >= nx:
                    continue
                out = step(ph, eff_x, eff_eta, conv, x_grid[ix:ix + 1], x_grid[ix2:ix2 + 1], soc, p_dem[t], 0, 1)
                nxt = interp_soc(V[t + 1, ix2], out[O_SOC], lo, h, ns)
                cand = _total(out) + nxt
                cand = np.where(out[O_INFEASIBLE] != 0.0, np.inf, cand)
                better = cand < best
                best = np.where(better, cand, best)
                arg = np.where(better, j, arg)
            V[t, ix] = best
            policy[t, ix] = arg
    return V, policy
