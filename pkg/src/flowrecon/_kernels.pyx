# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot loops: kd-tree nearest-neighbour queries and auction assignment."""
import numpy as np
cimport numpy as cnp
from libc.math cimport INFINITY

cnp.import_array()


cdef inline double _sqdist(const double[:, ::1] a, Py_ssize_t i, const double[:, ::1] b, Py_ssize_t j) nogil:
    cdef double dx = a[i, 0] - b[j, 0]
    cdef double dy = a[i, 1] - b[j, 1]
    cdef double dz = a[i, 2] - b[j, 2]
    return dx * dx + dy * dy + dz * dz


def kdtree_query(const double[:, ::1] queries, const double[:, ::1] points,
                 const Py_ssize_t[::1] perm, const Py_ssize_t[::1] split_dim,
                 const double[::1] split_val, const Py_ssize_t[::1] left,
                 const Py_ssize_t[::1] right, const Py_ssize_t[::1] start,
                 const Py_ssize_t[::1] stop):
    """Exact nearest neighbour of every query row; returns (squared distance, index)."""
    cdef Py_ssize_t nq = queries.shape[0]
    cdef Py_ssize_t nnodes = split_dim.shape[0]
    cdef cnp.ndarray[cnp.float64_t, ndim=1] best_d = np.empty(nq)
    cdef cnp.ndarray[cnp.intp_t, ndim=1] best_i = np.empty(nq, dtype=np.intp)
    cdef Py_ssize_t[::1] stack = np.empty(2 * nnodes + 2, dtype=np.intp)
    cdef double[::1] stack_gap = np.empty(2 * nnodes + 2)
    cdef Py_ssize_t q, top, node, k, j, near, far, dim
    cdef double bd, d, diff, gap
    cdef Py_ssize_t bi
    with nogil:
        for q in range(nq):
            bd = INFINITY
            bi = -1
            top = 0
            stack[0] = 0
            stack_gap[0] = 0.0
            top = 1
            while top > 0:
                top -= 1
                node = stack[top]
                gap = stack_gap[top]
                if gap > bd:
                    continue
                dim = split_dim[node]
                if dim < 0:
                    for k in range(start[node], stop[node]):
                        j = perm[k]
                        d = _sqdist(queries, q, points, j)
                        if d < bd or (d == bd and j < bi):
                            bd = d
                            bi = j
                    continue
                diff = queries[q, dim] - split_val[node]
                if diff < 0:
                    near = left[node]
                    far = right[node]
                else:
                    near = right[node]
                    far = left[node]
                # far child pushed first so the near child is explored first
                stack[top] = far
                stack_gap[top] = diff * diff
                top += 1
                stack[top] = near
                stack_gap[top] = 0.0
                top += 1
            best_d[q] = bd
            best_i[q] = bi
    return best_d, best_i


def auction_assign(const double[:, ::1] cost, double eps_final, double eps_factor, long long max_bids):
    """Gauss-Seidel auction with epsilon scaling on a dense min-cost matrix.

    Returns (assignment row->col, final epsilon, bids used); bids < 0 signals
    that the bid cap was hit.
    """
    cdef Py_ssize_t n = cost.shape[0]
    cdef cnp.ndarray[cnp.float64_t, ndim=1] price_arr = np.zeros(n)
    cdef double[::1] price = price_arr
    cdef cnp.ndarray[cnp.intp_t, ndim=1] row_to_col_arr = np.full(n, -1, dtype=np.intp)
    cdef Py_ssize_t[::1] row_to_col = row_to_col_arr
    cdef Py_ssize_t[::1] col_to_row = np.full(n, -1, dtype=np.intp)
    cdef Py_ssize_t[::1] queue = np.empty(n, dtype=np.intp)
    cdef Py_ssize_t head, tail, count, i, j, jbest, prev
    cdef double cmax = 0.0, eps, v, w1, w2
    cdef long long bids = 0
    cdef bint capped = False

    if n == 0:
        return row_to_col_arr, eps_final, 0
    if n == 1:
        row_to_col_arr[0] = 0
        return row_to_col_arr, eps_final, 0
    for i in range(n):
        for j in range(n):
            if cost[i, j] > cmax:
                cmax = cost[i, j]
    eps = cmax / 2.0
    if eps < eps_final:
        eps = eps_final
    with nogil:
        while True:
            for i in range(n):
                row_to_col[i] = -1
                col_to_row[i] = -1
                queue[i] = i
            head = 0
            count = n
            while count > 0:
                i = queue[head]
                head = (head + 1) % n
                count -= 1
                w1 = -INFINITY
                w2 = -INFINITY
                jbest = 0
                for j in range(n):
                    v = -cost[i, j] - price[j]
                    if v > w1:
                        w2 = w1
                        w1 = v
                        jbest = j
                    elif v > w2:
                        w2 = v
                price[jbest] += w1 - w2 + eps
                prev = col_to_row[jbest]
                col_to_row[jbest] = i
                row_to_col[i] = jbest
                if prev >= 0:
                    row_to_col[prev] = -1
                    tail = (head + count) % n
                    queue[tail] = prev
                    count += 1
                bids += 1
                if bids > max_bids:
                    capped = True
                    break
            if capped or eps <= eps_final:
                break
            eps = eps / eps_factor
            if eps < eps_final:
                eps = eps_final
    if capped:
        return row_to_col_arr, eps, -bids
    return row_to_col_arr, eps, bids
