"""Compiled integration loops over batches of initial conditions.

Every kernel advances each point independently, so results for a point never
depend on which batch or worker it was processed in.  Arrays are updated in
place: ``th`` (wrapped angle), ``v`` (angular velocity), ``tr`` (integer turns,
so that unwrapped = th + 2 pi tr), ``status`` (0 ok, 1 diverged) and
``fail_t`` (time of divergence).
"""

import math

import numpy as np
from numba import njit

TWO_PI = 2.0 * math.pi
PI = math.pi

OK = 0
DIVERGED = 1

# Dormand-Prince 5(4) tableau
A21 = 1.0 / 5.0
A31, A32 = 3.0 / 40.0, 9.0 / 40.0
A41, A42, A43 = 44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0
A51, A52, A53, A54 = 19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0
A61, A62, A63, A64, A65 = 9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0
B1, B3, B4, B5, B6 = 35.0 / 384.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0
E1 = 71.0 / 57600.0
E3 = -71.0 / 16695.0
E4 = 71.0 / 1920.0
E5 = -17253.0 / 339200.0
E6 = 22.0 / 525.0
E7 = -1.0 / 40.0
C2, C3, C4, C5 = 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0


@njit(cache=True, nogil=True)
def gamma_of(t, gi, gf, t_ramp):
    if t_ramp <= 0.0 or t >= t_ramp:
        return gf
    return gi + (gf - gi) * t / t_ramp


@njit(cache=True, nogil=True)
def _wrap(x, turns):
    if not math.isfinite(x):
        return x, turns
    n = math.floor((x + PI) / TWO_PI)
    x -= TWO_PI * n
    if x >= PI:
        x -= TWO_PI
        n += 1
    return x, turns + int(n)


@njit(cache=True, nogil=True)
def _rk4_step(th, w, h, c1, c2, c3, g1, g2, g3):
    k1t = w
    k1v = -c1 * math.sin(th) - g1 * w
    a = th + 0.5 * h * k1t
    b = w + 0.5 * h * k1v
    k2t = b
    k2v = -c2 * math.sin(a) - g2 * b
    a = th + 0.5 * h * k2t
    b = w + 0.5 * h * k2v
    k3t = b
    k3v = -c2 * math.sin(a) - g2 * b
    a = th + h * k3t
    b = w + h * k3v
    k4t = b
    k4v = -c3 * math.sin(a) - g3 * b
    th_new = th + h / 6.0 * (k1t + 2.0 * k2t + 2.0 * k3t + k4t)
    w_new = w + h / 6.0 * (k1v + 2.0 * k2v + 2.0 * k3v + k4v)
    return th_new, w_new


@njit(cache=True, nogil=True)
def rk4_periods(th, v, tr, status, fail_t, alpha, beta, gi, gf, t_ramp,
                k_start, n_skip, n_rec, spp, out_th, out_v, out_tr):
    """Classical RK4 over whole forcing periods with ``spp`` steps each.

    Starts at t = 2 pi k_start.  Column c of the ``out_*`` arrays receives the
    state at t = 2 pi (k_start + n_skip + c); ``n_rec`` may be zero.
    """
    h = TWO_PI / spp
    # forcing coefficient at half-step nodes of one period
    coef = np.empty(2 * spp + 1)
    for s in range(2 * spp + 1):
        coef[s] = alpha - beta * math.cos(s * 0.5 * h)
    n_total = n_skip + n_rec - 1 if n_rec > 0 else n_skip
    for p in range(th.size):
        if status[p] != OK:
            continue
        x = th[p]
        w = v[p]
        turns = tr[p]
        if n_rec > 0 and n_skip == 0:
            out_th[p, 0] = x
            out_v[p, 0] = w
            out_tr[p, 0] = turns
        failed = False
        for q in range(n_total):
            k = k_start + q
            base = TWO_PI * k
            ramping = t_ramp > 0.0 and base < t_ramp
            g1 = gf
            g2 = gf
            g3 = gf
            for s in range(spp):
                if ramping:
                    t = base + s * h
                    g1 = gamma_of(t, gi, gf, t_ramp)
                    g2 = gamma_of(t + 0.5 * h, gi, gf, t_ramp)
                    g3 = gamma_of(t + h, gi, gf, t_ramp)
                x, w = _rk4_step(x, w, h, coef[2 * s], coef[2 * s + 1], coef[2 * s + 2], g1, g2, g3)
                if x >= PI or x < -PI:
                    x, turns = _wrap(x, turns)
            if not (math.isfinite(x) and math.isfinite(w)):
                status[p] = DIVERGED
                fail_t[p] = TWO_PI * (k + 1)
                failed = True
                break
            c = q + 1 - n_skip
            if c >= 0 and c < n_rec:
                out_th[p, c] = x
                out_v[p, c] = w
                out_tr[p, c] = turns
        if not failed:
            th[p] = x
            v[p] = w
            tr[p] = turns


@njit(cache=True, nogil=True)
def rk4_span(th, v, tr, status, fail_t, alpha, beta, gi, gf, t_ramp, t_from, t_to, h_nominal):
    """RK4 over an arbitrary span; the step is shrunk so that it divides the span."""
    span = t_to - t_from
    if span <= 0.0:
        return
    n = int(math.ceil(span / h_nominal - 1e-9))
    h = span / n
    for p in range(th.size):
        if status[p] != OK:
            continue
        x = th[p]
        w = v[p]
        turns = tr[p]
        for i in range(n):
            t = t_from + i * h
            tm = t + 0.5 * h
            te = t_from + (i + 1) * h
            x, w = _rk4_step(
                x, w, h,
                alpha - beta * math.cos(t), alpha - beta * math.cos(tm), alpha - beta * math.cos(te),
                gamma_of(t, gi, gf, t_ramp), gamma_of(tm, gi, gf, t_ramp), gamma_of(te, gi, gf, t_ramp),
            )
            if x >= PI or x < -PI:
                x, turns = _wrap(x, turns)
            if not (math.isfinite(x) and math.isfinite(w)):
                status[p] = DIVERGED
                fail_t[p] = te
                break
        if status[p] == OK:
            th[p] = x
            v[p] = w
            tr[p] = turns


@njit(cache=True, nogil=True)
def _accel(x, w, t, alpha, beta, gi, gf, t_ramp):
    return -(alpha - beta * math.cos(t)) * math.sin(x) - gamma_of(t, gi, gf, t_ramp) * w


@njit(cache=True, nogil=True)
def _dopri_advance(x, w, turns, t, t_end, h, atol, rtol, alpha, beta, gi, gf, t_ramp):
    """Adaptive Dormand-Prince from t to exactly t_end (absolute times).

    Returns the new state, the proposed next step size and a failure flag.
    """
    k1t = w
    k1v = _accel(x, w, t, alpha, beta, gi, gf, t_ramp)
    n_rejects = 0
    while t < t_end:
        last = False
        if t + h >= t_end - 1e-12 * max(1.0, abs(t_end)):
            h_use = t_end - t
            last = True
        else:
            h_use = h
        # hit the ramp kink exactly
        if t_ramp > 0.0 and t < t_ramp and t + h_use > t_ramp:
            h_use = t_ramp - t
            last = False
        a = x + h_use * A21 * k1t
        b = w + h_use * A21 * k1v
        k2t = b
        k2v = _accel(a, b, t + C2 * h_use, alpha, beta, gi, gf, t_ramp)
        a = x + h_use * (A31 * k1t + A32 * k2t)
        b = w + h_use * (A31 * k1v + A32 * k2v)
        k3t = b
        k3v = _accel(a, b, t + C3 * h_use, alpha, beta, gi, gf, t_ramp)
        a = x + h_use * (A41 * k1t + A42 * k2t + A43 * k3t)
        b = w + h_use * (A41 * k1v + A42 * k2v + A43 * k3v)
        k4t = b
        k4v = _accel(a, b, t + C4 * h_use, alpha, beta, gi, gf, t_ramp)
        a = x + h_use * (A51 * k1t + A52 * k2t + A53 * k3t + A54 * k4t)
        b = w + h_use * (A51 * k1v + A52 * k2v + A53 * k3v + A54 * k4v)
        k5t = b
        k5v = _accel(a, b, t + C5 * h_use, alpha, beta, gi, gf, t_ramp)
        a = x + h_use * (A61 * k1t + A62 * k2t + A63 * k3t + A64 * k4t + A65 * k5t)
        b = w + h_use * (A61 * k1v + A62 * k2v + A63 * k3v + A64 * k4v + A65 * k5v)
        k6t = b
        k6v = _accel(a, b, t + h_use, alpha, beta, gi, gf, t_ramp)
        xn = x + h_use * (B1 * k1t + B3 * k3t + B4 * k4t + B5 * k5t + B6 * k6t)
        wn = w + h_use * (B1 * k1v + B3 * k3v + B4 * k4v + B5 * k5v + B6 * k6v)
        t_new = t_end if last else t + h_use
        k7t = wn
        k7v = _accel(xn, wn, t_new, alpha, beta, gi, gf, t_ramp)
        et = h_use * (E1 * k1t + E3 * k3t + E4 * k4t + E5 * k5t + E6 * k6t + E7 * k7t)
        ev = h_use * (E1 * k1v + E3 * k3v + E4 * k4v + E5 * k5v + E6 * k6v + E7 * k7v)
        st = atol + rtol * max(abs(x), abs(xn))
        sv = atol + rtol * max(abs(w), abs(wn))
        err = math.sqrt(0.5 * ((et / st) ** 2 + (ev / sv) ** 2))
        if not math.isfinite(err):
            return x, w, turns, h, True
        if err <= 1.0:
            t = t_new
            x = xn
            w = wn
            k1t = k7t
            k1v = k7v
            if x >= PI or x < -PI:
                x, turns = _wrap(x, turns)
            factor = 5.0 if err == 0.0 else min(5.0, 0.9 * err ** -0.2)
            if not last:
                h = h_use * factor
            n_rejects = 0
        else:
            h = h_use * max(0.2, 0.9 * err ** -0.2)
            n_rejects += 1
            if h < 1e-12 or n_rejects > 100:
                return x, w, turns, h, True
    return x, w, turns, h, False


@njit(cache=True, nogil=True)
def dopri_periods(th, v, tr, status, fail_t, alpha, beta, gi, gf, t_ramp,
                  k_start, n_skip, n_rec, atol, rtol, out_th, out_v, out_tr):
    """Adaptive counterpart of :func:`rk4_periods`, clamped to period boundaries."""
    n_total = n_skip + n_rec - 1 if n_rec > 0 else n_skip
    for p in range(th.size):
        if status[p] != OK:
            continue
        x = th[p]
        w = v[p]
        turns = tr[p]
        h = 0.05
        if n_rec > 0 and n_skip == 0:
            out_th[p, 0] = x
            out_v[p, 0] = w
            out_tr[p, 0] = turns
        for q in range(n_total):
            k = k_start + q
            x, w, turns, h, bad = _dopri_advance(
                x, w, turns, TWO_PI * k, TWO_PI * (k + 1), h, atol, rtol, alpha, beta, gi, gf, t_ramp
            )
            if bad or not (math.isfinite(x) and math.isfinite(w)):
                status[p] = DIVERGED
                fail_t[p] = TWO_PI * (k + 1)
                break
            c = q + 1 - n_skip
            if c >= 0 and c < n_rec:
                out_th[p, c] = x
                out_v[p, c] = w
                out_tr[p, c] = turns
        if status[p] == OK:
            th[p] = x
            v[p] = w
            tr[p] = turns


@njit(cache=True, nogil=True)
def dopri_span(th, v, tr, status, fail_t, alpha, beta, gi, gf, t_ramp, t_from, t_to, atol, rtol):
    for p in range(th.size):
        if status[p] != OK:
            continue
        x, w, turns, h, bad = _dopri_advance(
            th[p], v[p], tr[p], t_from, t_to, 0.05, atol, rtol, alpha, beta, gi, gf, t_ramp
        )
        if bad or not (math.isfinite(x) and math.isfinite(w)):
            status[p] = DIVERGED
            fail_t[p] = t_to
            continue
        th[p] = x
        v[p] = w
        tr[p] = turns
