# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled node sweep for the fixed-point map of the discrete schemes.

Per flattened control k and unknown i the discrete operator is
``S_k(i, r) = kappa[k, i] * r - (Q_k u)(i) - src[k, i]``, with ``Q`` stored as
one CSR matrix of shape (K*n, n).  ``mode`` selects plain (0), penalized (1)
or obstacle (2) coupling with the obstacle values ``g``.
"""

import numpy as np
from libc.math cimport fabs, INFINITY


cdef inline double _root(double kap, double q, double gi, double inv_eps, int mode) noexcept nogil:
    cdef double r = q / kap
    if mode == 1 and r < gi:
        r = (q + gi * inv_eps) / (kap + inv_eps)
    return r


cdef void _pass(
    const int[::1] indptr, const int[::1] indices, const double[::1] data,
    const double[::1] kappa, const double[::1] src, const double[::1] g,
    double inv_eps, int mode, int n_alpha, int n_beta,
    const double[::1] read, double[::1] write, double* res_out, double* inc_out,
) noexcept nogil:
    # Jacobi when read and write are distinct buffers, Gauss-Seidel when they alias
    cdef Py_ssize_t n = write.shape[0]
    cdef Py_ssize_t i, j, a, b, k, row
    cdef double r, q, s_k, root_k, s_b, root_b, s_a, root_a, new, kap, gi, inc
    cdef double res = 0.0, incr = 0.0
    for i in range(n):
        r = read[i]
        gi = g[i] if mode != 0 else 0.0
        s_a = INFINITY
        root_a = -INFINITY
        for a in range(n_alpha):
            s_b = -INFINITY
            root_b = INFINITY
            for b in range(n_beta):
                k = a * n_beta + b
                row = k * n + i
                q = 0.0
                for j in range(indptr[row], indptr[row + 1]):
                    q = q + data[j] * read[indices[j]]
                kap = kappa[row]
                q = q + src[row]
                s_k = kap * r - q
                root_k = _root(kap, q, gi, inv_eps, mode)
                if s_k > s_b:
                    s_b = s_k
                if root_k < root_b:
                    root_b = root_k
            if s_b < s_a:
                s_a = s_b
            if root_b > root_a:
                root_a = root_b
        if mode == 1:
            if r < gi:
                s_a = s_a + inv_eps * (r - gi)
            new = root_a
        elif mode == 2:
            if r - gi < s_a:
                s_a = r - gi
            new = root_a if root_a > gi else gi
        else:
            new = root_a
        if fabs(s_a) > res:
            res = fabs(s_a)
        inc = fabs(new - r)
        if inc > incr:
            incr = inc
        write[i] = new
    res_out[0] = res
    inc_out[0] = incr


def sweep(indptr, indices, data, kappa, src, g, double inv_eps, int mode,
          int n_alpha, int n_beta, const double[::1] u_in, double[::1] u_out, bint gauss_seidel):
    """One pass; returns (residual of the visited values, max increment).

    Jacobi reads ``u_in`` and writes ``u_out``; the residual is exactly the
    scheme residual of ``u_in``.  Gauss-Seidel copies ``u_in`` into ``u_out``
    and updates it in place in row-major order.
    """
    cdef double res, inc
    cdef Py_ssize_t i
    if gauss_seidel:
        for i in range(u_out.shape[0]):
            u_out[i] = u_in[i]
        _pass(indptr, indices, data, kappa, src, g, inv_eps, mode, n_alpha, n_beta,
              u_out, u_out, &res, &inc)
    else:
        _pass(indptr, indices, data, kappa, src, g, inv_eps, mode, n_alpha, n_beta,
              u_in, u_out, &res, &inc)
    return res, inc


def iterate(const int[::1] indptr, const int[::1] indices, const double[::1] data,
            const double[::1] kappa, const double[::1] src, const double[::1] g,
            double inv_eps, int mode, int n_alpha, int n_beta,
            double[::1] u, bint gauss_seidel, int max_iter, double tol, double[::1] history):
    """Sweep until the measured residual drops to ``tol`` or ``max_iter`` passes are spent.

    Jacobi stops on the exact residual of the current iterate and leaves that
    iterate in ``u``.  Gauss-Seidel stops when the residual measured during
    the pass is below ``tol``; ``u`` then holds the updated field and the
    caller re-checks the exact residual.  ``history[it]`` receives the
    residual measured in pass ``it``.  Returns the number of map applications.
    """
    cdef Py_ssize_t n = u.shape[0]
    cdef double[::1] other = np.empty(n)
    cdef int it = 0
    cdef double res, inc
    cdef Py_ssize_t i
    cdef Py_ssize_t hlen = history.shape[0]
    with nogil:
        while True:
            if gauss_seidel:
                _pass(indptr, indices, data, kappa, src, g, inv_eps, mode, n_alpha, n_beta,
                      u, u, &res, &inc)
                if it < hlen:
                    history[it] = res
                it += 1
                if res <= tol or it >= max_iter:
                    break
            else:
                _pass(indptr, indices, data, kappa, src, g, inv_eps, mode, n_alpha, n_beta,
                      u, other, &res, &inc)
                if it < hlen:
                    history[it] = res
                if res <= tol or it >= max_iter:
                    break
                for i in range(n):
                    u[i] = other[i]
                it += 1
    return it
