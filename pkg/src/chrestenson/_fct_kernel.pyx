# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""C kernel for the staged radix-a passes of the fast Chrestenson transform.

Operates on flat complex128 vectors; digit reversal and normalization stay in
the Python layer so the kernel and the NumPy fallback share them bit for bit.
"""

import numpy as np


def apply_stages(values, int a, int m, mat):
    """Run the m radix-a axis passes of the transform over a flat vector.

    ``mat`` is the (a, a) twiddle matrix applied along every axis; pass
    ``mat[k, d] = conj(omega)^(k*d)`` for the forward direction and
    ``omega^(k*d)`` for the inverse.
    """
    cdef double complex[::1] cur = np.array(values, dtype=np.complex128)
    cdef double complex[::1] nxt = np.empty(cur.shape[0], dtype=np.complex128)
    cdef double complex[:, ::1] tw = np.ascontiguousarray(mat, dtype=np.complex128)
    cdef Py_ssize_t N = cur.shape[0]
    cdef Py_ssize_t t, stride, block, q, r, k, d, base, j
    cdef double complex acc
    cdef double complex[::1] tmp

    for t in range(m):
        stride = 1
        for j in range(m - 1 - t):
            stride *= a
        block = stride * a
        for q in range(0, N, block):
            for r in range(stride):
                base = q + r
                for k in range(a):
                    acc = 0
                    for d in range(a):
                        acc = acc + tw[k, d] * cur[base + d * stride]
                    nxt[base + k * stride] = acc
        tmp = cur
        cur = nxt
        nxt = tmp
    return np.asarray(cur).copy()
