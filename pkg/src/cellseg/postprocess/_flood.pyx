# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled priority-flood kernel.

Same algorithm as ``flood_py.flood``: claim-on-push growth from seed labels
over a mask, scheduled by a binary min-heap keyed on (height, flat_index).
Each pixel is pushed at most once, so the key is a total order and the two
backends produce bit-identical labels.
"""

import numpy as np

cimport numpy as cnp


cdef inline bint _less(double va, Py_ssize_t ia, double vb, Py_ssize_t ib) nogil:
    if va != vb:
        return va < vb
    return ia < ib


cdef inline void _push(double[::1] hv, Py_ssize_t[::1] hi, Py_ssize_t* size,
                       double v, Py_ssize_t idx) nogil:
    cdef Py_ssize_t pos = size[0]
    cdef Py_ssize_t parent
    hv[pos] = v
    hi[pos] = idx
    size[0] += 1
    while pos > 0:
        parent = (pos - 1) >> 1
        if _less(hv[pos], hi[pos], hv[parent], hi[parent]):
            hv[pos], hv[parent] = hv[parent], hv[pos]
            hi[pos], hi[parent] = hi[parent], hi[pos]
            pos = parent
        else:
            break


cdef inline Py_ssize_t _pop(double[::1] hv, Py_ssize_t[::1] hi, Py_ssize_t* size) nogil:
    cdef Py_ssize_t out = hi[0]
    cdef Py_ssize_t n = size[0] - 1
    cdef Py_ssize_t pos = 0
    cdef Py_ssize_t child
    size[0] = n
    hv[0] = hv[n]
    hi[0] = hi[n]
    while True:
        child = 2 * pos + 1
        if child >= n:
            break
        if child + 1 < n and _less(hv[child + 1], hi[child + 1], hv[child], hi[child]):
            child += 1
        if _less(hv[child], hi[child], hv[pos], hi[pos]):
            hv[pos], hv[child] = hv[child], hv[pos]
            hi[pos], hi[child] = hi[child], hi[pos]
            pos = child
        else:
            break
    return out


def flood(double[:, ::1] height, cnp.int32_t[:, ::1] labels, cnp.uint8_t[:, ::1] mask):
    """Grow seed labels over ``mask`` in increasing ``height`` order (in place)."""
    cdef Py_ssize_t h = height.shape[0]
    cdef Py_ssize_t w = height.shape[1]
    cdef Py_ssize_t n = h * w
    heap_v_arr = np.empty(n, dtype=np.float64)
    heap_i_arr = np.empty(n, dtype=np.intp)
    cdef double[::1] hv = heap_v_arr
    cdef Py_ssize_t[::1] hi = heap_i_arr
    cdef Py_ssize_t size = 0
    cdef Py_ssize_t y, x, idx, ny, nx, k
    cdef cnp.int32_t lab
    cdef Py_ssize_t[4] dy
    cdef Py_ssize_t[4] dx
    dy[0] = -1; dy[1] = 1; dy[2] = 0; dy[3] = 0
    dx[0] = 0; dx[1] = 0; dx[2] = -1; dx[3] = 1

    with nogil:
        for y in range(h):
            for x in range(w):
                if labels[y, x] > 0 and mask[y, x] != 0:
                    _push(hv, hi, &size, height[y, x], y * w + x)
        while size > 0:
            idx = _pop(hv, hi, &size)
            y = idx // w
            x = idx - y * w
            lab = labels[y, x]
            for k in range(4):
                ny = y + dy[k]
                nx = x + dx[k]
                if 0 <= ny < h and 0 <= nx < w:
                    if mask[ny, nx] != 0 and labels[ny, nx] == 0:
                        labels[ny, nx] = lab
                        _push(hv, hi, &size, height[ny, nx], ny * w + nx)
    return np.asarray(labels)
