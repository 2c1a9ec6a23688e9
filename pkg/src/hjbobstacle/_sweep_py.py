"""Pure numpy implementation of the node sweep (same contract as the compiled kernel)."""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp


def _csr(indptr, indices, data, n_rows, n):
    return sp.csr_matrix((data, indices, indptr), shape=(n_rows, n))


def _node_update(q, kappa, r, g, inv_eps, mode, n_alpha, n_beta):
    """Vectorised over nodes: q, kappa have shape (K, m); r, g shape (m,)."""
    s = kappa * r - q
    root = q / kappa
    if mode == 1:
        pen = root < g
        root = np.where(pen, (q + g * inv_eps) / (kappa + inv_eps), root)
    m = r.shape[0]
    s = s.reshape(n_alpha, n_beta, m).max(axis=1).min(axis=0)
    root = root.reshape(n_alpha, n_beta, m).min(axis=1).max(axis=0)
    if mode == 1:
        s = s + inv_eps * np.minimum(r - g, 0.0)
        new = root
    elif mode == 2:
        s = np.minimum(s, r - g)
        new = np.maximum(root, g)
    else:
        new = root
    return s, new


def sweep(indptr, indices, data, kappa, src, g, inv_eps, mode, n_alpha, n_beta, u_in, u_out, gauss_seidel):
    n = u_in.shape[0]
    K = n_alpha * n_beta
    if not gauss_seidel:
        Q = _csr(indptr, indices, data, K * n, n)
        q = (Q @ u_in).reshape(K, n) + src.reshape(K, n)
        s, new = _node_update(q, kappa.reshape(K, n), u_in, g if mode else np.zeros(n), inv_eps, mode, n_alpha, n_beta)
        u_out[:] = new
        return float(np.max(np.abs(s))), float(np.max(np.abs(new - u_in)))
    u_out[:] = u_in
    res = inc = 0.0
    rows = np.arange(K) * n
    gv = g if mode else np.zeros(n)
    for i in range(n):
        q = np.empty(K)
        for k, row in enumerate(rows + i):
            lo, hi = indptr[row], indptr[row + 1]
            q[k] = data[lo:hi] @ u_out[indices[lo:hi]] + src[row]
        r = u_out[i : i + 1]
        s, new = _node_update(q[:, None], kappa[rows + i][:, None], r, gv[i : i + 1], inv_eps, mode, n_alpha, n_beta)
        res = max(res, abs(float(s[0])))
        inc = max(inc, abs(float(new[0] - r[0])))
        u_out[i] = new[0]
    return res, inc


def iterate(indptr, indices, data, kappa, src, g, inv_eps, mode, n_alpha, n_beta, u, gauss_seidel, max_iter, tol, history):
    other = np.empty_like(u)
    it = 0
    while True:
        if gauss_seidel:
            res, _ = sweep(indptr, indices, data, kappa, src, g, inv_eps, mode, n_alpha, n_beta, u, other, True)
            u[:] = other
            if it < len(history):
                history[it] = res
            it += 1
            if res <= tol or it >= max_iter:
                return it
        else:
            res, _ = sweep(indptr, indices, data, kappa, src, g, inv_eps, mode, n_alpha, n_beta, u, other, False)
            if it < len(history):
                history[it] = res
            if res <= tol or it >= max_iter:
                return it
            u[:] = other
            it += 1
