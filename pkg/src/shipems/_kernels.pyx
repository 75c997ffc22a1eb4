# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels: physics step, port-phase cost grid and the DP sweep.

Mirrors ``_kernels_py`` operation-for-operation; parameter and output layouts
are defined there.
"""

import numpy as np
from libc.math cimport fabs, floor, INFINITY

BACKEND = "cython"

DEF P_CLUSTER = 0
DEF DT_H = 1
DEF CAP = 2
DEF ETA_CH = 3
DEF ETA_DIS = 4
DEF P_CH_MAX = 5
DEF P_DIS_MAX = 6
DEF SOC_MIN = 7
DEF SOC_MAX = 8
DEF SOC_FLOOR = 9
DEF LHV = 10
DEF H2_PRICE = 11
DEF ELEC_PRICE = 12
DEF GWP_H2 = 13
DEF GWP_ELEC = 14
DEF FC_START = 15
DEF FC_RAMP = 16
DEF FC_LOW_H = 17
DEF FC_HIGH_H = 18
DEF X_LOW = 19
DEF X_HIGH = 20
DEF BATT_KAPPA = 21
DEF SHARE = 22
DEF ON_THRESHOLD = 23

DEF O_P1 = 0
DEF O_DIS = 1
DEF O_CH = 2
DEF O_CURT = 3
DEF O_SHORE = 4
DEF O_UNMET = 5
DEF O_SOC = 6
DEF O_CB = 7
DEF O_CF = 8
DEF O_CH2 = 9
DEF O_CE = 10
DEF O_H2KG = 11
DEF O_GWP = 12
DEF O_INFEASIBLE = 13
DEF N_OUT = 14


cdef inline double _efficiency(double x, const double[::1] ex, const double[::1] ee) noexcept nogil:
    cdef Py_ssize_t n = ex.shape[0]
    cdef Py_ssize_t j = 0
    cdef double slope
    if x <= ex[0]:
        return ee[0]
    if x >= ex[n - 1]:
        return ee[n - 1]
    while ex[j + 1] <= x:
        j += 1
    slope = (ee[j + 1] - ee[j]) / (ex[j + 1] - ex[j])
    return slope * (x - ex[j]) + ee[j]


cdef void _step(const double[::1] ph, const double[::1] ex, const double[::1] ee,
                const double[::1] conv, const double* xprev, const double* xnew,
                double soc, double p_dem, int spa, int port_left, double* out) noexcept nogil:
    cdef Py_ssize_t k, m = conv.shape[0]
    cdef double p1 = 0.0, h2 = 0.0, cf = 0.0, xk, xp
    cdef double share = ph[SHARE], dt = ph[DT_H], cap = ph[CAP], on = ph[ON_THRESHOLD]
    cdef double net, drop, avail, dis = 0.0, unmet = 0.0, ch = 0.0, curt = 0.0, shore = 0.0
    cdef double soc_next, surplus, room, room_e
    cdef int infeasible = 0
    for k in range(m):
        xk = xnew[k]
        xp = xprev[k]
        p1 += ph[P_CLUSTER] * xk * conv[k]
        if xk > on:
            h2 += ph[P_CLUSTER] * xk * dt / (_efficiency(xk, ex, ee) * ph[LHV])
            if xp <= on:
                cf += share * ph[FC_START]
            if xk < ph[X_LOW]:
                cf += share * ph[FC_LOW_H] * dt
            if xk > ph[X_HIGH]:
                cf += share * ph[FC_HIGH_H] * dt
        cf += share * ph[FC_RAMP] * fabs(xk - xp)
    if spa == 0:
        net = p_dem - p1
        if net >= 0.0:
            drop = net * dt / (ph[ETA_DIS] * cap)
            if drop > soc:
                avail = soc * cap * ph[ETA_DIS] / dt
                dis = avail
                unmet = net - avail
                soc_next = 0.0
                infeasible = 1
            else:
                dis = net
                soc_next = soc - drop
            if dis > ph[P_DIS_MAX] or soc_next < ph[SOC_FLOOR]:
                infeasible = 1
        else:
            surplus = -net
            room = (ph[SOC_MAX] - soc) * cap / (ph[ETA_CH] * dt)
            if room < 0.0:
                room = 0.0
            ch = surplus
            if ph[P_CH_MAX] < ch:
                ch = ph[P_CH_MAX]
            if room < ch:
                ch = room
            curt = surplus - ch
            soc_next = soc + ch * ph[ETA_CH] * dt / cap
            if soc_next > ph[SOC_MAX] and soc <= ph[SOC_MAX]:
                soc_next = ph[SOC_MAX]
            if soc_next < ph[SOC_FLOOR]:
                infeasible = 1
    else:
        room_e = (ph[SOC_MAX] - soc) * cap / ph[ETA_CH]
        if room_e < 0.0:
            room_e = 0.0
        ch = room_e / (port_left * dt)
        if ph[P_CH_MAX] < ch:
            ch = ph[P_CH_MAX]
        surplus = p1 - p_dem
        if surplus >= ch:
            curt = surplus - ch
        else:
            shore = ch - surplus
        soc_next = soc + ch * ph[ETA_CH] * dt / cap
        if soc_next > ph[SOC_MAX] and soc <= ph[SOC_MAX]:
            soc_next = ph[SOC_MAX]
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


cdef inline double _total(const double* out) noexcept nogil:
    return out[O_CB] + out[O_CF] + out[O_CH2] + out[O_CE]


def efficiency(double x, const double[::1] eff_x, const double[::1] eff_eta):
    return _efficiency(x, eff_x, eff_eta)


def step(const double[::1] ph, const double[::1] eff_x, const double[::1] eff_eta,
         const double[::1] conv, xprev, xnew, soc, double p_dem, int spa, int port_left):
    cdef double[::1] xp = np.ascontiguousarray(xprev, dtype=np.float64)
    cdef double[::1] xn = np.ascontiguousarray(xnew, dtype=np.float64)
    cdef double[::1] socs
    cdef double[:, ::1] res2
    cdef double buf[N_OUT]
    cdef Py_ssize_t i, q
    if np.ndim(soc) == 0:
        res = np.empty(N_OUT)
        _step(ph, eff_x, eff_eta, conv, &xp[0], &xn[0], float(soc), p_dem, spa, port_left, buf)
        for q in range(N_OUT):
            res[q] = buf[q]
        return res
    socs = np.ascontiguousarray(soc, dtype=np.float64)
    res2 = np.empty((N_OUT, socs.shape[0]))
    for i in range(socs.shape[0]):
        _step(ph, eff_x, eff_eta, conv, &xp[0], &xn[0], socs[i], p_dem, spa, port_left, buf)
        for q in range(N_OUT):
            res2[q, i] = buf[q]
    return np.asarray(res2)


def port_cost_grid(const double[::1] ph, const double[::1] eff_x, const double[::1] eff_eta,
                   const double[::1] conv, const double[::1] x_grid, const double[::1] soc_grid,
                   const double[::1] p_port):
    cdef Py_ssize_t nx = x_grid.shape[0], ns = soc_grid.shape[0], n_port = p_port.shape[0]
    cdef Py_ssize_t m = conv.shape[0]
    cdef Py_ssize_t ix, isoc, n, k
    cdef double[:, ::1] result = np.empty((nx, ns))
    cdef double[::1] xprev = np.empty(m)
    cdef double[::1] zero = np.zeros(m)
    cdef double buf[N_OUT]
    cdef double soc, total
    with nogil:
        for ix in range(nx):
            for isoc in range(ns):
                for k in range(m):
                    xprev[k] = x_grid[ix]
                soc = soc_grid[isoc]
                total = 0.0
                for n in range(n_port):
                    _step(ph, eff_x, eff_eta, conv, &xprev[0], &zero[0], soc, p_port[n], 1,
                          <int>(n_port - n), buf)
                    total = total + _total(buf)
                    soc = buf[O_SOC]
                    for k in range(m):
                        xprev[k] = 0.0
                result[ix, isoc] = total
    return np.asarray(result)


cdef inline double _interp(const double[:, :, ::1] V, Py_ssize_t t, Py_ssize_t ix, double soc,
                           double lo, double h, Py_ssize_t n) noexcept nogil:
    cdef double pos = (soc - lo) / h
    cdef double fi, w
    cdef Py_ssize_t i
    if pos < 0.0:
        return INFINITY
    fi = floor(pos)
    if fi >= n - 1:
        return V[t, ix, n - 1]
    i = <Py_ssize_t>fi
    w = pos - fi
    if w == 0.0:
        return V[t, ix, i]
    return (1.0 - w) * V[t, ix, i] + w * V[t, ix, i + 1]


def interp_soc(values, soc, double lo, double h, Py_ssize_t n):
    cdef double[:, :, ::1] V = np.ascontiguousarray(values, dtype=np.float64).reshape(1, 1, -1)
    cdef double[::1] s = np.atleast_1d(np.asarray(soc, dtype=np.float64)).ravel()
    out = np.empty(s.shape[0])
    cdef Py_ssize_t i
    for i in range(s.shape[0]):
        out[i] = _interp(V, 0, 0, s[i], lo, h, n)
    if np.ndim(soc) == 0:
        return out[0]
    return out.reshape(np.shape(soc))


def dp_backward(const double[::1] ph, const double[::1] eff_x, const double[::1] eff_eta,
                const double[::1] conv, const double[::1] x_grid, const double[::1] soc_grid,
                const int[::1] offsets, const double[::1] p_dem, v_terminal):
    cdef Py_ssize_t T = p_dem.shape[0], nx = x_grid.shape[0], ns = soc_grid.shape[0]
    cdef Py_ssize_t na = offsets.shape[0]
    cdef double lo = soc_grid[0]
    cdef double h = (soc_grid[ns - 1] - soc_grid[0]) / (ns - 1)
    V_arr = np.empty((T + 1, nx, ns))
    V_arr[T] = v_terminal
    pol_arr = np.full((T, nx, ns), -1, dtype=np.int32)
    cdef double[:, :, ::1] V = V_arr
    cdef int[:, :, ::1] pol = pol_arr
    cdef double buf[N_OUT]
    cdef double best, cand, nxt
    cdef Py_ssize_t t, ix, ix2, isoc, j
    cdef int arg
    with nogil:
        for t in range(T - 1, -1, -1):
            for ix in range(nx):
                for isoc in range(ns):
                    best = INFINITY
                    arg = -1
                    for j in range(na):
                        ix2 = ix + offsets[j]
                        if ix2 < 0 or ix2 >= nx:
                            continue
                        _step(ph, eff_x, eff_eta, conv, &x_grid[ix], &x_grid[ix2], soc_grid[isoc],
                              p_dem[t], 0, 1, buf)
                        if buf[O_INFEASIBLE] != 0.0:
                            continue
                        nxt = _interp(V, t + 1, ix2, buf[O_SOC], lo, h, ns)
                        cand = _total(buf) + nxt
                        if cand < best:
                            best = cand
                            arg = <int>j
                    V[t, ix, isoc] = best
                    pol[t, ix, isoc] = arg
    return V_arr, pol_arr
