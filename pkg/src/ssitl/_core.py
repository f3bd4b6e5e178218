"""Compiled path kernels.

All functions here take the flattened network arrays produced by
``pack(net)`` and a ``numpy.random.Generator``; numba draws from the same
bit generator as numpy, so streams are reproducible across both.  Failures are
reported as integer status codes and translated into exceptions by callers.
"""

from __future__ import annotations

import math

import numba as nb
import numpy as np

OK = 0
SINGULAR = 1
NO_CONVERGENCE = 2
OVERFLOW = 3
BUDGET = 4

# caps Poisson means so that updated counts stay well inside int64
MAX_POISSON_MEAN = 1e15

# counter slots
STEPS, DRAWS, SOLVES, NEG = 0, 1, 2, 3

METHOD_SSA, METHOD_EXPLICIT, METHOD_SSI, METHOD_ROUNDING = 0, 1, 2, 3
IMP_IMP, EXP_IMP, EXP_EXP = 0, 1, 2

_jit = nb.njit(cache=True, nogil=True)


def pack(net):
    """Flatten a network into the tuple of arrays the kernels consume."""
    p = net.poly
    nu = np.ascontiguousarray(net.nu, dtype=np.int64)
    nu_f = nu.astype(np.float64)
    nu_inf = np.abs(nu_f).max(axis=1)
    return (
        np.ascontiguousarray(p.coef, dtype=np.float64),
        np.ascontiguousarray(p.exps, dtype=np.int64),
        np.ascontiguousarray(p.chan, dtype=np.int64),
        nu,
        nu_f,
        nu_inf,
    )


@_jit
def _ipow(v, e):
    r = 1.0
    for _ in range(e):
        r *= v
    return r


@_jit
def law(y, coef, exps, chan, out):
    out[:] = 0.0
    M, d = exps.shape
    for m in range(M):
        v = coef[m]
        for k in range(d):
            e = exps[m, k]
            if e:
                v *= _ipow(y[k], e)
        out[chan[m]] += v


@_jit
def law_grad(y, coef, exps, chan, G):
    G[:, :] = 0.0
    M, d = exps.shape
    for m in range(M):
        for k in range(d):
            ek = exps[m, k]
            if ek == 0:
                continue
            v = coef[m] * ek * _ipow(y[k], ek - 1)
            for i in range(d):
                if i != k and exps[m, i]:
                    v *= _ipow(y[i], exps[m, i])
            G[chan[m], k] += v


@_jit
def lattice_rates(x, coef, exps, chan, nu, ybuf, out):
    d = x.shape[0]
    for i in range(d):
        ybuf[i] = x[i] if x[i] > 0 else 0.0
    law(ybuf, coef, exps, chan, out)
    J = nu.shape[0]
    for j in range(J):
        if out[j] < 0.0:
            out[j] = 0.0
        for i in range(d):
            if x[i] + nu[j, i] < 0:
                out[j] = 0.0
                break


@_jit
def solve_inplace(A, b):
    """Gaussian elimination with partial pivoting; ``b`` receives the solution."""
    n = b.shape[0]
    scale = 0.0
    for i in range(n):
        for k in range(n):
            if abs(A[i, k]) > scale:
                scale = abs(A[i, k])
    if scale == 0.0 or not math.isfinite(scale):
        return SINGULAR
    for c in range(n):
        p = c
        for r in range(c + 1, n):
            if abs(A[r, c]) > abs(A[p, c]):
                p = r
        if abs(A[p, c]) <= 1e-13 * scale:
            return SINGULAR
        if p != c:
            for k in range(n):
                A[c, k], A[p, k] = A[p, k], A[c, k]
            b[c], b[p] = b[p], b[c]
        for r in range(c + 1, n):
            f = A[r, c] / A[c, c]
            if f != 0.0:
                for k in range(c, n):
                    A[r, k] -= f * A[c, k]
                b[r] -= f * b[c]
    for c in range(n - 1, -1, -1):
        s = b[c]
        for k in range(c + 1, n):
            s -= A[c, k] * b[k]
        b[c] = s / A[c, c]
    return OK


@_jit
def newton(base, tau, y, fixed, max_iters, tol, coef, exps, chan, nu_f, nu_inf, a, a_new, G, Jm, rhs):
    """Solve ``y = base + tau * sum_j a_j(y) nu_j`` starting from ``y``.

    Returns ``(iterations, status)``; ``a`` holds ``a(y)`` at exit.  In fixed
    mode exactly ``max_iters`` iterations run.
    """
    J, d = nu_f.shape
    law(y, coef, exps, chan, a)
    for it in range(1, max_iters + 1):
        for i in range(d):
            s = y[i] - base[i]
            for j in range(J):
                s -= tau * nu_f[j, i] * a[j]
            rhs[i] = s
        law_grad(y, coef, exps, chan, G)
        for i in range(d):
            for k in range(d):
                s = 1.0 if i == k else 0.0
                for j in range(J):
                    s -= tau * nu_f[j, i] * G[j, k]
                Jm[i, k] = s
        if solve_inplace(Jm, rhs) != OK:
            return it, SINGULAR
        for i in range(d):
            y[i] -= rhs[i]
        law(y, coef, exps, chan, a_new)
        change = 0.0
        bad = False
        for j in range(J):
            c = tau * nu_inf[j] * abs(a_new[j] - a[j])
            if c != c:
                bad = True
            elif c > change:
                change = c
            a[j] = a_new[j]
        if bad or not math.isfinite(change):
            return it, NO_CONVERGENCE
        if fixed:
            if it == max_iters:
                return it, OK
        elif change < tol:
            return it, OK
    return max_iters, NO_CONVERGENCE


@_jit
def _buffers(J, d):
    return (
        np.empty(J),  # a
        np.empty(J),  # a_new
        np.empty((J, d)),  # G
        np.empty((d, d)),  # Jm
        np.empty(d),  # rhs
        np.empty(d),  # ybuf
        np.empty(d),  # base
        np.empty(d),  # y
    )


@_jit
def _project(x, counters):
    neg = False
    for i in range(x.shape[0]):
        if x[i] < 0:
            x[i] = 0
            neg = True
    if neg:
        counters[NEG] += 1


@_jit
def implicit_rates(z, tau, fixed, max_iters, tol_rel, guess_x0, x0, net, bufs, out, counters):
    """Drift-implicit intermediate state for ``z``; writes clamped rates to ``out``."""
    coef, exps, chan, nu, nu_f, nu_inf = net
    a, a_new, G, Jm, rhs, ybuf, base, y = bufs
    d = z.shape[0]
    for i in range(d):
        base[i] = z[i]
    law(base, coef, exps, chan, a)
    amax = 0.0
    for j in range(a.shape[0]):
        if abs(a[j]) > amax:
            amax = abs(a[j])
    tol = tol_rel * (1.0 + amax * tau)
    for i in range(d):
        y[i] = x0[i] if guess_x0 else z[i]
    iters, st = newton(base, tau, y, fixed, max_iters, tol, coef, exps, chan, nu_f, nu_inf, a, a_new, G, Jm, rhs)
    counters[SOLVES] += iters
    for j in range(a.shape[0]):
        out[j] = a[j] if a[j] > 0.0 else 0.0
    return st


@_jit
def _fire(x, rates, tau, nu, gen):
    J, d = nu.shape
    for j in range(J):
        lam = rates[j] * tau
        if not lam <= MAX_POISSON_MEAN:
            return OVERFLOW
        if lam > 0.0:
            k = gen.poisson(lam)
            if k:
                for i in range(d):
                    x[i] += k * nu[j, i]
    return OK


@_jit
def step(method, x, tau, gen, fixed, max_iters, tol_rel, guess_x0, x0, net, bufs, rates, counters):
    """Advance ``x`` in place by one leap of the given method."""
    coef, exps, chan, nu, nu_f, nu_inf = net
    J = nu.shape[0]
    if method == METHOD_EXPLICIT:
        lattice_rates(x, coef, exps, chan, nu, bufs[5], rates)
        st = _fire(x, rates, tau, nu, gen)
    elif method == METHOD_SSI:
        st = implicit_rates(x, tau, fixed, max_iters, tol_rel, guess_x0, x0, net, bufs, rates, counters)
        if st == OK:
            st = _fire(x, rates, tau, nu, gen)
    else:
        st = rounding_step(x, tau, gen, np.full(J, -1, np.int64), fixed, max_iters, tol_rel, guess_x0, x0,
                           net, bufs, rates, counters)
    counters[STEPS] += 1
    counters[DRAWS] += J
    _project(x, counters)
    return st


@_jit
def rounding_step(x, tau, gen, forced, fixed, max_iters, tol_rel, guess_x0, x0, net, bufs, rates, counters):
    """Drift-implicit step with explicit noise followed by rounding of firing counts.

    ``forced[j] >= 0`` replaces the Poisson draw of channel ``j`` (used to
    condition on a given noise realisation).
    """
    coef, exps, chan, nu, nu_f, nu_inf = net
    a, a_new, G, Jm, rhs, ybuf, base, y = bufs
    J, d = nu.shape
    lattice_rates(x, coef, exps, chan, nu, ybuf, rates)
    P = np.empty(J)
    amax = 0.0
    for j in range(J):
        lam = rates[j] * tau
        if not lam <= MAX_POISSON_MEAN:
            return OVERFLOW
        if forced[j] >= 0:
            P[j] = forced[j]
        elif lam > 0.0:
            P[j] = gen.poisson(lam)
        else:
            P[j] = 0.0
        amax = max(amax, rates[j])
    for i in range(d):
        s = float(x[i])
        for j in range(J):
            s += (P[j] - rates[j] * tau) * nu_f[j, i]
        base[i] = s
        y[i] = x0[i] if guess_x0 else x[i]
    tol = tol_rel * (1.0 + amax * tau)
    iters, st = newton(base, tau, y, fixed, max_iters, tol, coef, exps, chan, nu_f, nu_inf, a, a_new, G, Jm, rhs)
    counters[SOLVES] += iters
    if st != OK:
        return st
    for j in range(J):
        k = math.floor(a[j] * tau + P[j] - rates[j] * tau + 0.5)
        if k > 0:
            ki = np.int64(k)
            for i in range(d):
                x[i] += ki * nu[j, i]
    return OK


@_jit
def run_paths(method, out, x0, h, nsteps, tau_last, gen, fixed, max_iters, tol_rel, guess_x0, net, counters):
    """Simulate ``out.shape[0]`` independent leap paths; finals go to ``out``."""
    coef, exps, chan, nu, nu_f, nu_inf = net
    J, d = nu.shape
    bufs = _buffers(J, d)
    rates = np.empty(J)
    x = np.empty(d, np.int64)
    for p in range(out.shape[0]):
        x[:] = x0
        for s in range(nsteps):
            tau = tau_last if s == nsteps - 1 else h
            st = step(method, x, tau, gen, fixed, max_iters, tol_rel, guess_x0, x0, net, bufs, rates, counters)
            if st != OK:
                return st, p
        out[p] = x
    return OK, out.shape[0]


@_jit
def run_trajectory(method, traj, x0, h, nsteps, tau_last, gen, fixed, max_iters, tol_rel, guess_x0, net, counters):
    """Single leap path recording the state after every step in ``traj[1:]``."""
    coef, exps, chan, nu, nu_f, nu_inf = net
    J, d = nu.shape
    bufs = _buffers(J, d)
    rates = np.empty(J)
    x = x0.copy()
    traj[0] = x
    for s in range(nsteps):
        tau = tau_last if s == nsteps - 1 else h
        st = step(method, x, tau, gen, fixed, max_iters, tol_rel, guess_x0, x0, net, bufs, rates, counters)
        if st != OK:
            return st
        traj[s + 1] = x
    return OK


@_jit
def run_coupled(kind, fine_out, coarse_out, x0, h, nsteps, gen, fixed, max_iters, tol_rel, guess_x0, net,
                fine_counters, coarse_counters):
    """Coupled fine/coarse leap paths with three-way Poisson splitting.

    The fine leg advances by ``h`` per substep; the coarse leg's rates are
    refreshed at even substeps and held over two substeps of length ``h``.
    Both legs share the common stream ``Poisson(min(a_f, a_c) h)``.
    Poisson draws are booked on the fine leg's counters.
    """
    coef, exps, chan, nu, nu_f, nu_inf = net
    J, d = nu.shape
    bufs = _buffers(J, d)
    af = np.empty(J)
    ac = np.empty(J)
    zf = np.empty(d, np.int64)
    zc = np.empty(d, np.int64)
    for p in range(fine_out.shape[0]):
        zf[:] = x0
        zc[:] = x0
        for s in range(nsteps):
            if kind == IMP_IMP:
                st = implicit_rates(zf, h, fixed, max_iters, tol_rel, guess_x0, x0, net, bufs, af, fine_counters)
                if st != OK:
                    return st, p
            else:
                lattice_rates(zf, coef, exps, chan, nu, bufs[5], af)
            if s % 2 == 0:
                if kind == EXP_EXP:
                    lattice_rates(zc, coef, exps, chan, nu, bufs[5], ac)
                else:
                    st = implicit_rates(zc, 2.0 * h, fixed, max_iters, tol_rel, guess_x0, x0, net, bufs, ac,
                                        coarse_counters)
                    if st != OK:
                        return st, p
            for j in range(J):
                m = af[j] if af[j] < ac[j] else ac[j]
                l1 = 0
                l2 = 0
                l3 = 0
                lam = m * h
                lam2 = (af[j] - m) * h
                lam3 = (ac[j] - m) * h
                if not (lam <= MAX_POISSON_MEAN and lam2 <= MAX_POISSON_MEAN and lam3 <= MAX_POISSON_MEAN):
                    return OVERFLOW, p
                if lam > 0.0:
                    l1 = gen.poisson(lam)
                if lam2 > 0.0:
                    l2 = gen.poisson(lam2)
                if lam3 > 0.0:
                    l3 = gen.poisson(lam3)
                kf = l1 + l2
                kc = l1 + l3
                for i in range(d):
                    zf[i] += kf * nu[j, i]
                    zc[i] += kc * nu[j, i]
            fine_counters[STEPS] += 1
            fine_counters[DRAWS] += 3 * J
            _project(zf, fine_counters)
            if s % 2 == 1:
                coarse_counters[STEPS] += 1
                _project(zc, coarse_counters)
        fine_out[p] = zf
        coarse_out[p] = zc
    return OK, fine_out.shape[0]


@_jit
def run_ssa(out, x0, T, gen, max_events, grid, rec, net, counters):
    """Gillespie direct method.  ``rec[p, k]`` receives the state at ``grid[k]``."""
    coef, exps, chan, nu, nu_f, nu_inf = net
    J, d = nu.shape
    a = np.empty(J)
    ybuf = np.empty(d)
    x = np.empty(d, np.int64)
    ng = grid.shape[0]
    for p in range(out.shape[0]):
        x[:] = x0
        t = 0.0
        k = 0
        events = 0
        while True:
            lattice_rates(x, coef, exps, chan, nu, ybuf, a)
            a0 = 0.0
            for j in range(J):
                a0 += a[j]
            if not math.isfinite(a0):
                return OVERFLOW, p
            t_next = math.inf
            if a0 > 0.0:
                t_next = t + gen.standard_exponential() / a0
            while k < ng and grid[k] < t_next:
                if grid[k] <= T:
                    rec[p, k] = x
                k += 1
            if t_next > T:
                break
            u = gen.random() * a0
            j = 0
            acc = a[0]
            while acc <= u and j < J - 1:
                j += 1
                acc += a[j]
            for i in range(d):
                x[i] += nu[j, i]
            t = t_next
            events += 1
            if events > max_events:
                return BUDGET, p
        counters[STEPS] += events
        counters[DRAWS] += 2 * events
        out[p] = x
    return OK, out.shape[0]
