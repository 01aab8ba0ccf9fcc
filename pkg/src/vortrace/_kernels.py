"""Numba kernels for vortex/tracer advection and per-snapshot inversion.

Everything here works on plain float64 arrays so the hot loops (a million
integration steps, a hundred thousand chained least-squares solves) stay off
the Python interpreter. Public modules wrap these with validated types.

Positions are (n, 2) arrays of x/y pairs. Velocity induced at q by a vortex
of strength g at v is g/(2*pi*r^2) * (-(q-v).y, (q-v).x): counterclockwise
for positive g.
"""

import numpy as np
from numba import njit

TWO_PI = 2.0 * np.pi

# Fehlberg 4(5) tableau. The fifth-order weights propagate the state; the
# difference row only feeds the logged error estimate (step size is fixed).
_RKF_A = np.zeros((6, 5))
_RKF_A[1, 0] = 1.0 / 4.0
_RKF_A[2, :2] = (3.0 / 32.0, 9.0 / 32.0)
_RKF_A[3, :3] = (1932.0 / 2197.0, -7200.0 / 2197.0, 7296.0 / 2197.0)
_RKF_A[4, :4] = (439.0 / 216.0, -8.0, 3680.0 / 513.0, -845.0 / 4104.0)
_RKF_A[5, :5] = (-8.0 / 27.0, 2.0, -3544.0 / 2565.0, 1859.0 / 4104.0, -11.0 / 40.0)
_RKF_B5 = np.array(
    [16.0 / 135.0, 0.0, 6656.0 / 12825.0, 28561.0 / 56430.0, -9.0 / 50.0, 2.0 / 55.0]
)
_RKF_ERR = np.array(
    [1.0 / 360.0, 0.0, -128.0 / 4275.0, -2197.0 / 75240.0, 1.0 / 50.0, 2.0 / 55.0]
)

# Step status codes shared with the wrappers.
OK = 0
SINGULAR = 1
NONFINITE = 2

SHOOTING_PENALTY = 1.0e12


@njit(cache=True)
def fill_velocities(vpos, gam, tpos, vout, tout):
    """Mutual vortex velocities plus induced tracer velocities.

    The vortex block never reads tracer data, so vortex arithmetic is
    bit-identical with or without tracers (one-way coupling).
    """
    nv = vpos.shape[0]
    npart = tpos.shape[0]
    for i in range(nv):
        ux = 0.0
        uy = 0.0
        for j in range(nv):
            if j == i:
                continue
            dx = vpos[i, 0] - vpos[j, 0]
            dy = vpos[i, 1] - vpos[j, 1]
            c = gam[j] / (TWO_PI * (dx * dx + dy * dy))
            ux -= c * dy
            uy += c * dx
        vout[i, 0] = ux
        vout[i, 1] = uy
    for p in range(npart):
        ux = 0.0
        uy = 0.0
        for j in range(nv):
            dx = tpos[p, 0] - vpos[j, 0]
            dy = tpos[p, 1] - vpos[j, 1]
            c = gam[j] / (TWO_PI * (dx * dx + dy * dy))
            ux -= c * dy
            uy += c * dx
        tout[p, 0] = ux
        tout[p, 1] = uy


@njit(cache=True)
def _rkf45_step(vpos, tpos, gam, h, a, b5, erow, kv, kt, vstage, tstage, vnew, tnew):
    """One fixed Fehlberg step; returns the max-norm embedded error estimate."""
    nv = vpos.shape[0]
    npart = tpos.shape[0]
    for s in range(6):
        for i in range(nv):
            ax = vpos[i, 0]
            ay = vpos[i, 1]
            for q in range(s):
                ax += h * a[s, q] * kv[q, i, 0]
                ay += h * a[s, q] * kv[q, i, 1]
            vstage[i, 0] = ax
            vstage[i, 1] = ay
        for p in range(npart):
            ax = tpos[p, 0]
            ay = tpos[p, 1]
            for q in range(s):
                ax += h * a[s, q] * kt[q, p, 0]
                ay += h * a[s, q] * kt[q, p, 1]
            tstage[p, 0] = ax
            tstage[p, 1] = ay
        fill_velocities(vstage, gam, tstage, kv[s], kt[s])
    err = 0.0
    for i in range(nv):
        sx = 0.0
        sy = 0.0
        ex = 0.0
        ey = 0.0
        for s in range(6):
            sx += b5[s] * kv[s, i, 0]
            sy += b5[s] * kv[s, i, 1]
            ex += erow[s] * kv[s, i, 0]
            ey += erow[s] * kv[s, i, 1]
        vnew[i, 0] = vpos[i, 0] + h * sx
        vnew[i, 1] = vpos[i, 1] + h * sy
        err = max(err, abs(h * ex), abs(h * ey))
    for p in range(npart):
        sx = 0.0
        sy = 0.0
        ex = 0.0
        ey = 0.0
        for s in range(6):
            sx += b5[s] * kt[s, p, 0]
            sy += b5[s] * kt[s, p, 1]
            ex += erow[s] * kt[s, p, 0]
            ey += erow[s] * kt[s, p, 1]
        tnew[p, 0] = tpos[p, 0] + h * sx
        tnew[p, 1] = tpos[p, 1] + h * sy
        err = max(err, abs(h * ex), abs(h * ey))
    return err


@njit(cache=True)
def _state_status(vpos, tpos, tol):
    """OK / SINGULAR / NONFINITE check of a sampled state."""
    nv = vpos.shape[0]
    npart = tpos.shape[0]
    tol2 = tol * tol
    for i in range(nv):
        if not (np.isfinite(vpos[i, 0]) and np.isfinite(vpos[i, 1])):
            return NONFINITE
    for p in range(npart):
        if not (np.isfinite(tpos[p, 0]) and np.isfinite(tpos[p, 1])):
            return NONFINITE
    for i in range(nv):
        for j in range(i + 1, nv):
            dx = vpos[i, 0] - vpos[j, 0]
            dy = vpos[i, 1] - vpos[j, 1]
            if dx * dx + dy * dy <= tol2:
                return SINGULAR
    for p in range(npart):
        for j in range(nv):
            dx = tpos[p, 0] - vpos[j, 0]
            dy = tpos[p, 1] - vpos[j, 1]
            if dx * dx + dy * dy <= tol2:
                return SINGULAR
    return OK


@njit(cache=True)
def integrate_record(v0, gam, t0pos, n_steps, h, tol):
    """Advance vortices and tracers jointly, recording every grid sample.

    Returns (vortex_history, tracer_history, step_error_log, status,
    fail_step). On failure the histories are valid up to fail_step - 1.
    """
    nv = v0.shape[0]
    npart = t0pos.shape[0]
    vhist = np.zeros((n_steps + 1, nv, 2))
    thist = np.zeros((n_steps + 1, npart, 2))
    errlog = np.zeros(n_steps)
    vhist[0] = v0
    thist[0] = t0pos

    kv = np.zeros((6, nv, 2))
    kt = np.zeros((6, npart, 2))
    vstage = np.zeros((nv, 2))
    tstage = np.zeros((npart, 2))
    vcur = v0.copy()
    tcur = t0pos.copy()
    vnew = np.zeros((nv, 2))
    tnew = np.zeros((npart, 2))

    status = _state_status(vcur, tcur, tol)
    if status != OK:
        return vhist, thist, errlog, status, 0

    for s in range(n_steps):
        err = _rkf45_step(
            vcur, tcur, gam, h, _RKF_A, _RKF_B5, _RKF_ERR, kv, kt, vstage, tstage, vnew, tnew
        )
        status = _state_status(vnew, tnew, tol)
        if status != OK:
            return vhist, thist, errlog, status, s + 1
        errlog[s] = err
        vcur, vnew = vnew, vcur
        tcur, tnew = tnew, tcur
        vhist[s + 1] = vcur
        thist[s + 1] = tcur
    return vhist, thist, errlog, OK, -1


@njit(cache=True)
def benettin_log_growth(v0, gam, delta0, h, steps_per_interval, n_intervals, tol):
    """Two-trajectory separation log-growth per renormalization interval.

    The perturbed copy starts offset by delta0 along the first coordinate and
    is rescaled back to distance delta0 after every interval.
    """
    nv = v0.shape[0]
    logs = np.zeros(n_intervals)
    ref = v0.copy()
    per = v0.copy()
    per[0, 0] += delta0

    kv = np.zeros((6, nv, 2))
    kt = np.zeros((6, 0, 2))
    empty = np.zeros((0, 2))
    vstage = np.zeros((nv, 2))
    tstage = np.zeros((0, 2))
    ref_new = np.zeros((nv, 2))
    per_new = np.zeros((nv, 2))

    for k in range(n_intervals):
        for s in range(steps_per_interval):
            _rkf45_step(
                ref, empty, gam, h, _RKF_A, _RKF_B5, _RKF_ERR,
                kv, kt, vstage, tstage, ref_new, empty,
            )
            tmp = ref
            ref = ref_new
            ref_new = tmp
            _rkf45_step(
                per, empty, gam, h, _RKF_A, _RKF_B5, _RKF_ERR,
                kv, kt, vstage, tstage, per_new, empty,
            )
            tmp = per
            per = per_new
            per_new = tmp
        status = _state_status(ref, empty, tol)
        if status != OK:
            return logs, status, k
        status = _state_status(per, empty, tol)
        if status != OK:
            return logs, status, k
        d2 = 0.0
        for i in range(nv):
            dx = per[i, 0] - ref[i, 0]
            dy = per[i, 1] - ref[i, 1]
            d2 += dx * dx + dy * dy
        d = np.sqrt(d2)
        if d <= 0.0:
            return logs, NONFINITE, k
        logs[k] = np.log(d / delta0)
        scale = delta0 / d
        for i in range(nv):
            per[i, 0] = ref[i, 0] + (per[i, 0] - ref[i, 0]) * scale
            per[i, 1] = ref[i, 1] + (per[i, 1] - ref[i, 1]) * scale
    return logs, OK, -1


@njit(cache=True)
def residual_and_jacobian(theta, zp, wconj, clamp, res, jac, want_jac):
    """Residuals (and optionally the Jacobian) of the velocity-field fit.

    theta packs [g_0..g_{nv-1}, x_0, y_0, ..., x_{nv-1}, y_{nv-1}].
    zp (np_, 2) holds tracer positions, wconj (np_, 2) the conjugated
    measured velocities (vx, -vy). Residual rows come in (re, im) pairs:

        conj(v_p) - sum_v g_v / (2*pi*i*(z_p - z_v))

    Tracer-vortex distances below ``clamp`` are clamped for the evaluation;
    returns True when any clamp was active.
    """
    npart = zp.shape[0]
    nv = theta.shape[0] // 3
    clamped = False
    for p in range(npart):
        rre = wconj[p, 0]
        rim = wconj[p, 1]
        for v in range(nv):
            g = theta[v]
            dx = zp[p, 0] - theta[nv + 2 * v]
            dy = zp[p, 1] - theta[nv + 2 * v + 1]
            r2 = dx * dx + dy * dy
            if r2 < clamp * clamp:
                clamped = True
                r = np.sqrt(r2)
                if r == 0.0:
                    dx = clamp
                    dy = 0.0
                else:
                    dx *= clamp / r
                    dy *= clamp / r
                r2 = clamp * clamp
            inv = 1.0 / (TWO_PI * r2)
            # model contribution: g * (-dy - i*dx) / (2*pi*r^2)
            rre += g * dy * inv
            rim += g * dx * inv
            if want_jac:
                jac[2 * p, v] = dy * inv
                jac[2 * p + 1, v] = dx * inv
                r4 = r2 * r2
                dre = (dx * dx - dy * dy) / (TWO_PI * r4)
                dim = 2.0 * dx * dy / (TWO_PI * r4)
                jac[2 * p, nv + 2 * v] = g * dim
                jac[2 * p + 1, nv + 2 * v] = g * dre
                jac[2 * p, nv + 2 * v + 1] = -g * dre
                jac[2 * p + 1, nv + 2 * v + 1] = g * dim
        res[2 * p] = rre
        res[2 * p + 1] = rim
    return clamped


@njit(cache=True)
def lm_solve_snapshot(zp, wconj, theta0, max_iter, res_tol, step_tol, clamp):
    """Damped Gauss-Newton least squares for one snapshot.

    Returns (theta, residual_norm, converged, clamped, n_iter). Convergence
    means the residual norm dropped below res_tol or the accepted (or
    stalled) step fell below step_tol, with no clamp active at the solution.
    """
    m = 2 * zp.shape[0]
    n = theta0.shape[0]
    theta = theta0.copy()
    res = np.zeros(m)
    jac = np.zeros((m, n))
    res_try = np.zeros(m)
    jac_unused = np.zeros((0, 0))

    clamped = residual_and_jacobian(theta, zp, wconj, clamp, res, jac, True)
    cost = 0.0
    for i in range(m):
        cost += res[i] * res[i]

    lam = 1.0e-3
    converged = False
    it = 0
    while it < max_iter:
        it += 1
        if np.sqrt(cost) <= res_tol:
            converged = True
            break
        jtj = jac.T @ jac
        g = jac.T @ res
        accepted = False
        step2 = 0.0
        for _ in range(40):
            a = jtj.copy()
            for i in range(n):
                a[i, i] += lam * jtj[i, i] + 1.0e-14 * lam
            delta = np.linalg.solve(a, -g)
            step2 = 0.0
            for i in range(n):
                step2 += delta[i] * delta[i]
            theta_try = theta + delta
            cl_try = residual_and_jacobian(
                theta_try, zp, wconj, clamp, res_try, jac_unused, False
            )
            cost_try = 0.0
            for i in range(m):
                cost_try += res_try[i] * res_try[i]
            if cost_try < cost:
                theta = theta_try
                cost = cost_try
                clamped = cl_try
                for i in range(m):
                    res[i] = res_try[i]
                lam = max(lam / 3.0, 1.0e-12)
                accepted = True
                break
            lam *= 10.0
            if np.sqrt(step2) <= step_tol:
                # stalled at a local minimum
                break
            if lam > 1.0e12:
                break
        if not accepted:
            converged = np.sqrt(step2) <= step_tol or np.sqrt(cost) <= res_tol
            break
        if np.sqrt(step2) <= step_tol:
            converged = True
            break
        clamped = residual_and_jacobian(theta, zp, wconj, clamp, res, jac, True)
    if clamped:
        converged = False
    return theta, np.sqrt(cost), converged, clamped, it


@njit(cache=True)
def _vortex_step(vpos, gam, h, kv, kt0, vstage, tstage0, vnew):
    _rkf45_step(vpos, tstage0, gam, h, _RKF_A, _RKF_B5, _RKF_ERR,
                kv, kt0, vstage, tstage0, vnew, tstage0)


# A solved snapshot only re-anchors the guess chain when it looks trustworthy:
# residual within a factor of the running level, positions not absurd, and no
# candidate jumped by a sizable fraction of the inter-vortex spacing (a jump
# that large means the solver traded vortices, which would permute the labels
# carried by the chain). While no solve qualifies, the last trusted state
# keeps advancing under the dynamics; after a long unanchored stretch a
# stricter residual test may relock the chain outright.
CHAIN_RESIDUAL_FACTOR = 5.0
CHAIN_POSITION_BOUND = 1.0e3
CHAIN_JUMP_FRACTION = 0.5
CHAIN_RELOCK_AFTER = 5000
CHAIN_RELOCK_RESIDUAL_FACTOR = 2.0


@njit(cache=True)
def chained_snapshot_solve(
    zp_series,
    wconj_series,
    gam_guess0,
    pos_guess0,
    deltas,
    h,
    max_iter,
    res_tol,
    step_tol,
    clamp,
):
    """Chain snapshot solves over the whole grid.

    Snapshot k is solved from the running guess; the position guess for k+1
    is advanced one grid step under the vortex dynamics and the circulation
    guess is refreshed multiplicatively with the supplied per-snapshot
    factors (1 + deltas[k+1]). Snapshots whose residual spikes above the
    running level (or whose positions are absurd) still get recorded but do
    not re-anchor the chain: the last trustworthy state keeps advancing
    under the dynamics until a good solve takes over again.

    Returns (circulations, positions, residual_norms, converged_flags).
    """
    nt = zp_series.shape[0]
    nv = gam_guess0.shape[0]
    gam_out = np.zeros((nt, nv))
    pos_out = np.zeros((nt, nv, 2))
    resn = np.zeros(nt)
    conv = np.zeros(nt, dtype=np.uint8)

    theta = np.zeros(3 * nv)
    for v in range(nv):
        theta[v] = gam_guess0[v]
        theta[nv + 2 * v] = pos_guess0[v, 0]
        theta[nv + 2 * v + 1] = pos_guess0[v, 1]

    kv = np.zeros((6, nv, 2))
    kt0 = np.zeros((6, 0, 2))
    vstage = np.zeros((nv, 2))
    tstage0 = np.zeros((0, 2))
    base_gam = gam_guess0.copy()
    base_pos = pos_guess0.copy()
    vnew = np.zeros((nv, 2))
    res_level = -1.0

    unanchored = 0
    for k in range(nt):
        sol, rn, ok, _cl, _it = lm_solve_snapshot(
            zp_series[k], wconj_series[k], theta, max_iter, res_tol, step_tol, clamp
        )
        for v in range(nv):
            gam_out[k, v] = sol[v]
            pos_out[k, v, 0] = sol[nv + 2 * v]
            pos_out[k, v, 1] = sol[nv + 2 * v + 1]
        resn[k] = rn
        conv[k] = 1 if ok else 0

        sane = ok
        for v in range(nv):
            if abs(sol[nv + 2 * v]) > CHAIN_POSITION_BOUND:
                sane = False
            if abs(sol[nv + 2 * v + 1]) > CHAIN_POSITION_BOUND:
                sane = False
        res_ok = res_level < 0.0 or rn <= CHAIN_RESIDUAL_FACTOR * res_level
        jump_ok = True
        if k > 0 and nv >= 2:
            dmin2 = np.inf
            for i in range(nv):
                for j in range(i + 1, nv):
                    dx = theta[nv + 2 * i] - theta[nv + 2 * j]
                    dy = theta[nv + 2 * i + 1] - theta[nv + 2 * j + 1]
                    dmin2 = min(dmin2, dx * dx + dy * dy)
            bound2 = CHAIN_JUMP_FRACTION * CHAIN_JUMP_FRACTION * dmin2
            for v in range(nv):
                jx = sol[nv + 2 * v] - theta[nv + 2 * v]
                jy = sol[nv + 2 * v + 1] - theta[nv + 2 * v + 1]
                if jx * jx + jy * jy > bound2:
                    jump_ok = False
        relock = (
            unanchored >= CHAIN_RELOCK_AFTER
            and res_level >= 0.0
            and rn <= CHAIN_RELOCK_RESIDUAL_FACTOR * res_level
        )
        if sane and res_ok and (jump_ok or relock):
            for v in range(nv):
                base_gam[v] = sol[v]
                base_pos[v, 0] = sol[nv + 2 * v]
                base_pos[v, 1] = sol[nv + 2 * v + 1]
            if res_level < 0.0:
                res_level = rn
            else:
                res_level = 0.99 * res_level + 0.01 * rn
            unanchored = 0
        else:
            unanchored += 1

        if k + 1 < nt:
            _vortex_step(base_pos, base_gam, h, kv, kt0, vstage, tstage0, vnew)
            finite = True
            for v in range(nv):
                if not (np.isfinite(vnew[v, 0]) and np.isfinite(vnew[v, 1])):
                    finite = False
            if finite:
                for v in range(nv):
                    base_pos[v, 0] = vnew[v, 0]
                    base_pos[v, 1] = vnew[v, 1]
            for v in range(nv):
                theta[v] = base_gam[v] * (1.0 + deltas[k + 1, v])
                theta[nv + 2 * v] = base_pos[v, 0]
                theta[nv + 2 * v + 1] = base_pos[v, 1]
    return gam_out, pos_out, resn, conv


@njit(cache=True)
def batch_shooting_objective(starts, gam, data, h, tol):
    """Tracer-misfit objective for a batch of candidate vortex start states.

    Each batch member integrates vortices from its own start while tracers
    are re-anchored to ``data[0]`` (the measured positions at the interval
    start). The objective accumulates squared deviations from ``data`` at
    every sample of the interval. Singular or non-finite integrations yield
    SHOOTING_PENALTY and a raised flag.

    Returns (objectives (b,), flags (b,), end_vortex_states (b, nv, 2)).
    """
    nb = starts.shape[0]
    nv = starts.shape[1]
    m = data.shape[0] - 1
    npart = data.shape[1]
    obj = np.zeros(nb)
    flags = np.zeros(nb, dtype=np.uint8)
    ends = np.zeros((nb, nv, 2))

    kv = np.zeros((6, nv, 2))
    kt = np.zeros((6, npart, 2))
    vstage = np.zeros((nv, 2))
    tstage = np.zeros((npart, 2))
    vnew = np.zeros((nv, 2))
    tnew = np.zeros((npart, 2))

    for b in range(nb):
        vcur = starts[b].copy()
        tcur = data[0].copy()
        sse = 0.0
        ok = _state_status(vcur, tcur, tol) == OK
        if ok:
            for s in range(m):
                _rkf45_step(
                    vcur, tcur, gam, h, _RKF_A, _RKF_B5, _RKF_ERR,
                    kv, kt, vstage, tstage, vnew, tnew,
                )
                if _state_status(vnew, tnew, tol) != OK:
                    ok = False
                    break
                tmp = vcur
                vcur = vnew
                vnew = tmp
                tmp = tcur
                tcur = tnew
                tnew = tmp
                for p in range(npart):
                    dx = tcur[p, 0] - data[s + 1, p, 0]
                    dy = tcur[p, 1] - data[s + 1, p, 1]
                    sse += dx * dx + dy * dy
        if ok:
            obj[b] = sse
            ends[b] = vcur
        else:
            obj[b] = SHOOTING_PENALTY
            flags[b] = 1
            ends[b] = starts[b]
    return obj, flags, ends
