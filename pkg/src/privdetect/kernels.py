"""Hot loops of the Monte Carlo network rollouts.

Both kernels advance a batch of independent closed-loop rollouts through a
chunk of steps, consuming pre-drawn noise so that the numba and numpy paths
see identical inputs. State layout is the stacked network vector (all nodes
concatenated); see ``sysmodel.RolloutPlan`` for how the matrices are built.

Per step (global step k, chunk column s):

    u~(k-1) = u(k-1) + eta(k-1)
    x(k)    = A x(k-1) + B u~(k-1) + w(k-1)
    y(k)    = C x(k) + v(k) - C x_a(k)
    z(k)    = y(k) - C (A x^(k-1) + B u(k-1)) - H alpha(k-1)
    r(k)    = P (y(k) - C (A_loc x^(k-1) + B u(k-1)))
    x^(k)   = Abar (A_loc x^(k-1) + B u(k-1)) + Lbar y(k)
    u(k)    = Kc y(k)
"""
import numpy as np

from ._backend import BACKEND, HAS_NUMBA, njit

__all__ = ["advance", "advance_numpy", "advance_numba", "BACKEND"]


def advance_numpy(mats, x, xh, u, eta, xa_out, w, v, al, rec, z_out, r_out, x_out, y_out, u_out, limit):
    A, Aloc, B, C, Kc, Abar, Lbar, H, P = mats
    n_steps = w.shape[1]
    div_step = -1
    for s in range(n_steps):
        pred_loc = xh @ Aloc.T + u @ B.T
        pred_net = xh @ A.T + u @ B.T
        xn = x @ A.T + (u + eta[s]) @ B.T + w[:, s]
        y = xn @ C.T + v[:, s] - C @ xa_out[s]
        z = y - pred_net @ C.T - al[:, s] @ H.T
        r = (y - pred_loc @ C.T) @ P.T
        xh = pred_loc @ Abar.T + y @ Lbar.T
        u = y @ Kc.T
        x = xn
        slot = rec[s]
        if slot >= 0:
            z_out[:, slot] = z
            r_out[:, slot] = r
            x_out[:, slot] = x
            y_out[:, slot] = y
            u_out[:, slot] = u
        if div_step < 0 and not np.all(np.abs(x) <= limit):
            div_step = s
    return x, xh, u, div_step


@njit(cache=True)
def _mv(out, M, vec, sign):
    for i in range(M.shape[0]):
        acc = 0.0
        for j in range(M.shape[1]):
            acc += M[i, j] * vec[j]
        out[i] += sign * acc


@njit(cache=True)
def _advance_numba_impl(A, Aloc, B, C, Kc, Abar, Lbar, H, P, x, xh, u, eta, xa_out, w, v, al, rec,
                        z_out, r_out, x_out, y_out, u_out, limit):
    T = x.shape[0]
    N = x.shape[1]
    M = C.shape[0]
    Q = B.shape[1]
    n_steps = w.shape[1]
    div_step = -1
    cxa = np.zeros((n_steps, M))
    for s in range(n_steps):
        _mv(cxa[s], C, xa_out[s], 1.0)
    xn = np.zeros(N)
    pl = np.zeros(N)
    pn = np.zeros(N)
    ut = np.zeros(Q)
    y = np.zeros(M)
    z = np.zeros(M)
    d = np.zeros(M)
    for t in range(T):
        for s in range(n_steps):
            for i in range(N):
                pl[i] = 0.0
                pn[i] = 0.0
                xn[i] = w[t, s, i]
            for q in range(Q):
                ut[q] = u[t, q] + eta[s, q]
            _mv(pl, Aloc, xh[t], 1.0)
            _mv(pl, B, u[t], 1.0)
            _mv(pn, A, xh[t], 1.0)
            _mv(pn, B, u[t], 1.0)
            _mv(xn, A, x[t], 1.0)
            _mv(xn, B, ut, 1.0)
            for i in range(M):
                y[i] = v[t, s, i] - cxa[s, i]
            _mv(y, C, xn, 1.0)
            for i in range(M):
                z[i] = y[i]
                d[i] = y[i]
            _mv(z, C, pn, -1.0)
            _mv(z, H, al[t, s], -1.0)
            _mv(d, C, pl, -1.0)
            for i in range(N):
                xh[t, i] = 0.0
            _mv(xh[t], Abar, pl, 1.0)
            _mv(xh[t], Lbar, y, 1.0)
            for q in range(Q):
                u[t, q] = 0.0
            _mv(u[t], Kc, y, 1.0)
            diverged = False
            for i in range(N):
                x[t, i] = xn[i]
                if not (abs(xn[i]) <= limit):
                    diverged = True
            if diverged and (div_step < 0 or s < div_step):
                div_step = s
            slot = rec[s]
            if slot >= 0:
                for i in range(M):
                    z_out[t, slot, i] = z[i]
                    y_out[t, slot, i] = y[i]
                    r_out[t, slot, i] = 0.0
                _mv(r_out[t, slot], P, d, 1.0)
                for i in range(N):
                    x_out[t, slot, i] = xn[i]
                for q in range(Q):
                    u_out[t, slot, q] = u[t, q]
    return div_step


def advance_numba(mats, x, xh, u, eta, xa_out, w, v, al, rec, z_out, r_out, x_out, y_out, u_out, limit):
    x = np.ascontiguousarray(x, dtype=np.float64).copy()
    xh = np.ascontiguousarray(xh, dtype=np.float64).copy()
    u = np.ascontiguousarray(u, dtype=np.float64).copy()
    mats = tuple(np.ascontiguousarray(m, dtype=np.float64) for m in mats)
    div = _advance_numba_impl(*mats, x, xh, u, np.ascontiguousarray(eta), np.ascontiguousarray(xa_out),
                              np.ascontiguousarray(w), np.ascontiguousarray(v), np.ascontiguousarray(al),
                              np.ascontiguousarray(rec, dtype=np.int64), z_out, r_out, x_out, y_out, u_out,
                              float(limit))
    return x, xh, u, int(div)


advance = advance_numba if HAS_NUMBA else advance_numpy
