"""Compiled inner loops shared by the trajectory engines.

Everything here works on plain arrays.  Random numbers are generated by
the callers and passed in, so the kernels are deterministic functions of
their arguments.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

SQRT2 = math.sqrt(2.0)


@njit(cache=True)
def kernel_full(order, ep, em, x, out):
    """out_j = Σ_l e^{ik₀|z_j − z_l|} x_l by one forward and one backward sweep."""
    n = x.shape[0]
    acc = 0j
    for k in range(n):
        j = order[k]
        out[j] = ep[j] * acc
        acc += em[j] * x[j]
    acc = 0j
    for k in range(n - 1, -1, -1):
        j = order[k]
        out[j] += em[j] * acc + x[j]
        acc += ep[j] * x[j]


@njit(cache=True)
def kernel_cos(ep, em, x, out):
    """out_j = Σ_l cos(ξ_j − ξ_l) x_l."""
    n = x.shape[0]
    a = 0j
    b = 0j
    for j in range(n):
        a += em[j] * x[j]
        b += ep[j] * x[j]
    for j in range(n):
        out[j] = 0.5 * (ep[j] * a + em[j] * b)


@njit(cache=True)
def _triple(f, g, h):
    """Σ over pairwise distinct (a, b, c) of f_a g_b h_c."""
    sf = 0j
    sg = 0j
    sh = 0j
    sfg = 0j
    sfh = 0j
    sgh = 0j
    sfgh = 0j
    for a in range(f.shape[0]):
        sf += f[a]
        sg += g[a]
        sh += h[a]
        sfg += f[a] * g[a]
        sfh += f[a] * h[a]
        sgh += g[a] * h[a]
        sfgh += f[a] * g[a] * h[a]
    return sf * sg * sh - sfg * sh - sfh * sg - sgh * sf + 2.0 * sfgh


@njit(cache=True)
def g2_numerator(x, n_exc, u, v):
    """Phase-space estimate of ⟨J_u† J_v† J_v J_u⟩ for J_u = Σ_j u_j σ_j⁻.

    Distinct-site operator products are replaced by products of the
    classical variables; coincident sites are reduced exactly with
    σ⁺σ⁺ = σ⁻σ⁻ = 0 and σ⁺σ⁻ = n.  The sum over index quadruples is the
    square of the distinct-pair sum Q plus corrections for each pattern
    of coincidences.
    """
    m = x.shape[0]
    al = u * x
    be = v * x
    z = np.conj(u) * v
    q = (x * np.conj(x)).real
    mm = n_exc - q
    sa = 0j
    sb = 0j
    sab = 0j
    szn = 0j
    szq = 0j
    sn = 0.0
    sq = 0.0
    sn2 = 0.0
    sq2 = 0.0
    for j in range(m):
        sa += al[j]
        sb += be[j]
        sab += al[j] * be[j]
        szn += z[j] * n_exc[j]
        szq += z[j] * q[j]
        sn += n_exc[j]
        sq += q[j]
        sn2 += n_exc[j] * n_exc[j]
        sq2 += q[j] * q[j]
    qq = sa * sb - sab
    total = (qq * np.conj(qq)).real
    mc = mm.astype(np.complex128)
    total += _triple(z * mc, np.conj(be), al).real
    total += _triple(mc, np.conj(be), be).real
    total += _triple(mc, np.conj(al), al).real
    total += _triple(np.conj(z) * mc, np.conj(al), be).real
    total += (szn * np.conj(szn)).real - sn2 - ((szq * np.conj(szq)).real - sq2)
    total += sn * sn - sn2 - sq * sq + sq2
    return total


@njit(cache=True)
def _record(k, x, sz, ep, em, rec_sz, rec_jr, rec_jl, rec_q, rec_g2):
    n = x.shape[0]
    s = 0.0
    jr = 0j
    jl = 0j
    q = 0.0
    for j in range(n):
        s += sz[j]
        jr += em[j] * x[j]
        jl += ep[j] * x[j]
        q += x[j].real * x[j].real + x[j].imag * x[j].imag
    rec_sz[k] = s
    rec_jr[k] = jr
    rec_jl[k] = jl
    rec_q[k] = q
    if rec_g2.shape[0] > 0:
        n_exc = 0.5 * (1.0 + sz)
        rec_g2[k, 0] = g2_numerator(x, n_exc, em, em)
        rec_g2[k, 1] = g2_numerator(x, n_exc, ep, ep)
        rec_g2[k, 2] = g2_numerator(x, n_exc, em, ep)


@njit(cache=True)
def _snapshot(k, snap_idx, x, sz, snaps):
    for s in range(snap_idx.shape[0]):
        if snap_idx[s] == k:
            for j in range(x.shape[0]):
                snaps[s, j, 0] = 2.0 * x[j].real
                snaps[s, j, 1] = -2.0 * x[j].imag
                snaps[s, j, 2] = sz[j]


@njit(cache=True)
def _all_finite(x, sz):
    for j in range(x.shape[0]):
        if not (math.isfinite(x[j].real) and math.isfinite(x[j].imag) and math.isfinite(sz[j])):
            return False
    return True


@njit(cache=True)
def _lab(xt, dw, t, xl):
    if dw.shape[0] == 0:
        xl[:] = xt
        return
    for j in range(xt.shape[0]):
        if dw[j] != 0.0:
            xl[j] = xt[j] * complex(math.cos(dw[j] * t), -math.sin(dw[j] * t))
        else:
            xl[j] = xt[j]


@njit(cache=True)
def _pair_sum(order, ep, em, x, hamiltonian, out):
    if hamiltonian:
        kernel_full(order, ep, em, x, out)
    else:
        kernel_cos(ep, em, x, out)


@njit(cache=True)
def run_eliminated(order, ep, em, dw, x, sz, noise, dt, n_sub, gamma, hamiltonian,
                   snap_idx, rec_sz, rec_jr, rec_jl, rec_q, rec_g2, snaps):
    """Euler–Maruyama integration of the cavity-free spin SDE.

    ``x`` holds s⁻ in the frame co-rotating with each atom's offset
    frequency and is updated in place.  ``noise`` has one row of two
    complex Wiener increments (R, L) per step.  Returns −1 on success or
    the index of the first step that produced a non-finite state.
    """
    n = x.shape[0]
    n_rec = rec_sz.shape[0]
    xl = np.empty(n, dtype=np.complex128)
    f = np.empty(n, dtype=np.complex128)
    amp = math.sqrt(gamma / 2.0)
    amp_z = 2.0 * math.sqrt(2.0 * gamma)
    step = 0
    for k in range(n_rec):
        t = step * dt
        _lab(x, dw, t, xl)
        _record(k, xl, sz, ep, em, rec_sz, rec_jr, rec_jl, rec_q, rec_g2)
        _snapshot(k, snap_idx, xl, sz, snaps)
        if k == n_rec - 1:
            break
        for _ in range(n_sub):
            t = step * dt
            _lab(x, dw, t, xl)
            _pair_sum(order, ep, em, xl, hamiltonian, f)
            dwr = noise[step, 0]
            dwl = noise[step, 1]
            for j in range(n):
                dwj = (ep[j] * dwr + em[j] * dwl) / SQRT2
                xj = xl[j]
                zj = sz[j]
                dx = (-0.5 * gamma * xj + 0.5 * gamma * zj * f[j]) * dt + amp * zj * dwj
                xc = xj.conjugate()
                dz = (-gamma * zj - 2.0 * gamma * (xc * f[j]).real) * dt - amp_z * (xc * dwj).real
                if dw.shape[0] > 0 and dw[j] != 0.0:
                    dx *= complex(math.cos(dw[j] * t), math.sin(dw[j] * t))
                x[j] += dx
                sz[j] = zj + dz
            step += 1
        if not _all_finite(x, sz):
            return step
    return -1


@njit(cache=True)
def run_qsd(order, ep, em, dw, x, sz, noise, dt, n_sub, gamma, hamiltonian,
            snap_idx, rec_sz, rec_jr, rec_jl, rec_q, rec_g2, snaps, rec_ir, rec_il):
    """Product-state quantum state diffusion, one Euler–Maruyama step per noise row.

    Each site evolves under its exact single-site heterodyne equation with
    the other sites entering through their current expectation values;
    the Bloch vectors are projected back onto the unit sphere after every
    step.  Returns −1 on success or the failing step index.
    """
    n = x.shape[0]
    n_rec = rec_sz.shape[0]
    xl = np.empty(n, dtype=np.complex128)
    f = np.empty(n, dtype=np.complex128)
    amp = math.sqrt(gamma / 2.0)
    step = 0
    ir = 0j
    il = 0j
    for k in range(n_rec):
        t = step * dt
        _lab(x, dw, t, xl)
        _record(k, xl, sz, ep, em, rec_sz, rec_jr, rec_jl, rec_q, rec_g2)
        _snapshot(k, snap_idx, xl, sz, snaps)
        rec_ir[k] = ir
        rec_il[k] = il
        if k == n_rec - 1:
            break
        for _ in range(n_sub):
            t = step * dt
            _lab(x, dw, t, xl)
            _pair_sum(order, ep, em, xl, hamiltonian, f)
            dwr = noise[step, 0]
            dwl = noise[step, 1]
            cwr = dwr.conjugate()
            cwl = dwl.conjugate()
            jr = 0j
            jl = 0j
            for j in range(n):
                jr += em[j] * xl[j]
                jl += ep[j] * xl[j]
            ir += gamma * jr.real * dt + amp * dwr
            il += gamma * jl.real * dt + amp * dwl
            for j in range(n):
                xj = xl[j]
                zj = sz[j]
                fj = f[j] - xj
                nj = 0.5 * (1.0 + zj)
                qj = xj.real * xj.real + xj.imag * xj.imag
                w = em[j] * dwr + ep[j] * dwl
                dx = (-0.5 * gamma * xj + 0.5 * gamma * zj * fj) * dt \
                    + amp * (-(xj * xj) * w + (nj - qj) * (ep[j] * cwr + em[j] * cwl))
                dz = (-gamma * (zj + 1.0) - 2.0 * gamma * (xj.conjugate() * fj).real) * dt \
                    - amp * (1.0 + zj) * 2.0 * (xj * w).real
                xn = xj + dx
                zn = zj + dz
                r = math.sqrt(4.0 * (xn.real * xn.real + xn.imag * xn.imag) + zn * zn)
                if r > 0.0:
                    xn /= r
                    zn /= r
                if dw.shape[0] > 0 and dw[j] != 0.0:
                    xn *= complex(math.cos(dw[j] * t), math.sin(dw[j] * t))
                x[j] = xn
                sz[j] = zn
            step += 1
        if not _all_finite(x, sz):
            return step
    return -1


@njit(cache=True)
def _cavity_drift(order, ep, em, xl, sz, alpha, u, coupling, kappa, gamma, hamiltonian,
                  a1, f, dxl, dsz, da1):
    """Lab-frame drift of the explicit-cavity model; returns the emitted power."""
    n = xl.shape[0]
    n_cav = u.shape[0]
    if hamiltonian:
        kernel_full(order, ep, em, xl, f)
        # keep only the sine part: subtract the cosine kernel
        a = 0j
        b = 0j
        for j in range(n):
            a += em[j] * xl[j]
            b += ep[j] * xl[j]
        for j in range(n):
            f[j] = (f[j] - 0.5 * (ep[j] * a + em[j] * b)) / 1j
    power = 0.0
    for j in range(n):
        drive = 0j
        for c in range(n_cav):
            drive += u[c, j].conjugate() * alpha[c]
        drive *= coupling
        xc = xl[j].conjugate()
        dxl[j] = sz[j] * drive
        dsz[j] = -4.0 * (xc * drive).real
        power += 2.0 * (xc * drive).real
        if hamiltonian:
            dxl[j] += 0.5j * gamma * sz[j] * f[j]
            dsz[j] += 2.0 * gamma * (xc * f[j]).imag
    for c in range(n_cav):
        s = 0j
        for j in range(n):
            s += u[c, j] * xl[j]
        da1[c] = -0.5 * kappa * a1[c] + coupling * s
    return power


@njit(cache=True)
def _rot(dw, t, out):
    if dw.shape[0] == 0:
        out[:] = 1.0
        return
    for j in range(dw.shape[0]):
        out[j] = complex(math.cos(dw[j] * t), -math.sin(dw[j] * t))


@njit(cache=True)
def run_cavity(order, ep, em, dw, u, x, sz, a0, noise, dt, n_sub, gamma, kappa, coupling,
               hamiltonian, snap_idx, rec_sz, rec_jr, rec_jl, rec_q, rec_g2, snaps, rec_power):
    """Spins coupled to damped cavity modes, split into noise and drift.

    The vacuum part α⁰ of each cavity amplitude follows its exact
    Ornstein–Uhlenbeck transition on half steps (``noise`` holds standard
    complex normals of shape (steps, 2, n_cav)); the spins and the driven
    part α¹ take a classical RK4 step with α⁰ frozen at the stage times.
    """
    n = x.shape[0]
    n_cav = u.shape[0]
    n_rec = rec_sz.shape[0]
    a1 = np.zeros(n_cav, dtype=np.complex128)
    alpha = np.empty(n_cav, dtype=np.complex128)
    a0_half = np.empty(n_cav, dtype=np.complex128)
    a0_next = np.empty(n_cav, dtype=np.complex128)
    f = np.empty(n, dtype=np.complex128)
    rot = np.empty(n, dtype=np.complex128)
    xl = np.empty(n, dtype=np.complex128)
    xs = np.empty(n, dtype=np.complex128)
    zs = np.empty(n)
    a1s = np.empty(n_cav, dtype=np.complex128)
    kx = np.empty((4, n), dtype=np.complex128)
    kz = np.empty((4, n))
    ka = np.empty((4, n_cav), dtype=np.complex128)
    dxl = np.empty(n, dtype=np.complex128)
    decay = math.exp(-0.25 * kappa * dt)
    spread = math.sqrt((1.0 - math.exp(-0.5 * kappa * dt)) / 4.0)
    step = 0
    for k in range(n_rec):
        t = step * dt
        _rot(dw, t, rot)
        for j in range(n):
            xl[j] = x[j] * rot[j]
        _record(k, xl, sz, ep, em, rec_sz, rec_jr, rec_jl, rec_q, rec_g2)
        _snapshot(k, snap_idx, xl, sz, snaps)
        for c in range(n_cav):
            alpha[c] = a0[c] + a1[c]
        rec_power[k] = _cavity_drift(order, ep, em, xl, sz, alpha, u, coupling, kappa, gamma,
                                     False, a1, f, dxl, zs, a1s)
        if k == n_rec - 1:
            break
        for _ in range(n_sub):
            t = step * dt
            for c in range(n_cav):
                a0_half[c] = decay * a0[c] + spread * noise[step, 0, c]
                a0_next[c] = decay * a0_half[c] + spread * noise[step, 1, c]
            for stage in range(4):
                if stage == 0:
                    h = 0.0
                elif stage == 3:
                    h = dt
                else:
                    h = 0.5 * dt
                for j in range(n):
                    xs[j] = x[j] + h * kx[stage - 1, j] if stage > 0 else x[j]
                    zs[j] = sz[j] + h * kz[stage - 1, j] if stage > 0 else sz[j]
                for c in range(n_cav):
                    a1s[c] = a1[c] + h * ka[stage - 1, c] if stage > 0 else a1[c]
                    if stage == 0:
                        alpha[c] = a0[c] + a1s[c]
                    elif stage == 3:
                        alpha[c] = a0_next[c] + a1s[c]
                    else:
                        alpha[c] = a0_half[c] + a1s[c]
                _rot(dw, t + h, rot)
                for j in range(n):
                    xl[j] = xs[j] * rot[j]
                _cavity_drift(order, ep, em, xl, zs, alpha, u, coupling, kappa, gamma, hamiltonian,
                              a1s, f, dxl, kz[stage], ka[stage])
                for j in range(n):
                    kx[stage, j] = dxl[j] * rot[j].conjugate()
            for j in range(n):
                x[j] += dt / 6.0 * (kx[0, j] + 2.0 * kx[1, j] + 2.0 * kx[2, j] + kx[3, j])
                sz[j] += dt / 6.0 * (kz[0, j] + 2.0 * kz[1, j] + 2.0 * kz[2, j] + kz[3, j])
            for c in range(n_cav):
                a1[c] += dt / 6.0 * (ka[0, c] + 2.0 * ka[1, c] + 2.0 * ka[2, c] + ka[3, c])
                a0[c] = a0_next[c]
            step += 1
        if not _all_finite(x, sz):
            return step
    return -1
