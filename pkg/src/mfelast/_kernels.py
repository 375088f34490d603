"""Compiled cell kernels for the partial-assembly tangent application.

Kernels are specialized per polynomial degree: the 1D extents enter the
jitted closures as compile-time constants, so the short contraction loops
unroll and vectorize.  One pass per cell: gather, sum-factorized
reference gradients, quadrature loop on cached spatial tangent data,
transposed sum factorization, scatter.  Scatter order is sequential in
cell index, so results are deterministic.
"""

import numba
import numpy as np

_JIT = dict(cache=False, fastmath=True, nogil=True)

_CACHE_2D = {}
_CACHE_3D = {}


def _make_store_apply_2d(n1, q):
    nloc = 2 * n1 * n1

    @numba.njit(**_JIT)
    def kernel(conn, x, nv, gv, m_map, wj, cpack, sig, out, c0, c1):
        u = np.empty((2, n1, n1))
        tg = np.empty((n1, q))
        tn = np.empty((n1, q))
        hx = np.empty((2, q, q))
        hy = np.empty((2, q, q))
        t1 = np.empty((n1, q))
        t2 = np.empty((n1, q))
        for c in range(c0, c1):
            base = conn[c]
            for ly in range(n1):
                for lx in range(n1):
                    node = ly * n1 + lx
                    u[0, ly, lx] = x[base[2 * node]]
                    u[1, ly, lx] = x[base[2 * node + 1]]
            for i in range(2):
                for ly in range(n1):
                    for qx in range(q):
                        sg = 0.0
                        sn = 0.0
                        for lx in range(n1):
                            sg += gv[qx, lx] * u[i, ly, lx]
                            sn += nv[qx, lx] * u[i, ly, lx]
                        tg[ly, qx] = sg
                        tn[ly, qx] = sn
                for qy in range(q):
                    for qx in range(q):
                        sx = 0.0
                        sy = 0.0
                        for ly in range(n1):
                            sx += nv[qy, ly] * tg[ly, qx]
                            sy += gv[qy, ly] * tn[ly, qx]
                        hx[i, qy, qx] = sx
                        hy[i, qy, qx] = sy
            for qy in range(q):
                for qx in range(q):
                    qp = qy * q + qx
                    m00 = m_map[c, qp, 0, 0]
                    m01 = m_map[c, qp, 0, 1]
                    m10 = m_map[c, qp, 1, 0]
                    m11 = m_map[c, qp, 1, 1]
                    h00 = hx[0, qy, qx] * m00 + hy[0, qy, qx] * m10
                    h01 = hx[0, qy, qx] * m01 + hy[0, qy, qx] * m11
                    h10 = hx[1, qy, qx] * m00 + hy[1, qy, qx] * m10
                    h11 = hx[1, qy, qx] * m01 + hy[1, qy, qx] * m11
                    e01 = 0.5 * (h01 + h10)
                    c0_ = cpack[c, qp, 0]
                    c1_ = cpack[c, qp, 1]
                    c2_ = cpack[c, qp, 2]
                    c3_ = cpack[c, qp, 3]
                    c4_ = cpack[c, qp, 4]
                    c5_ = cpack[c, qp, 5]
                    g0 = c0_ * h00 + c1_ * h11 + 2.0 * c2_ * e01
                    g1 = c1_ * h00 + c3_ * h11 + 2.0 * c4_ * e01
                    g2 = c2_ * h00 + c4_ * h11 + 2.0 * c5_ * e01
                    s00 = sig[c, qp, 0]
                    s11 = sig[c, qp, 1]
                    s01 = sig[c, qp, 2]
                    q00 = g0 + h00 * s00 + h01 * s01
                    q01 = g2 + h00 * s01 + h01 * s11
                    q10 = g2 + h10 * s00 + h11 * s01
                    q11 = g1 + h10 * s01 + h11 * s11
                    w = wj[c, qp]
                    hx[0, qy, qx] = w * (q00 * m00 + q01 * m01)
                    hy[0, qy, qx] = w * (q00 * m10 + q01 * m11)
                    hx[1, qy, qx] = w * (q10 * m00 + q11 * m01)
                    hy[1, qy, qx] = w * (q10 * m10 + q11 * m11)
            for i in range(2):
                for ly in range(n1):
                    for qx in range(q):
                        s1 = 0.0
                        s2 = 0.0
                        for qy in range(q):
                            s1 += nv[qy, ly] * hx[i, qy, qx]
                            s2 += gv[qy, ly] * hy[i, qy, qx]
                        t1[ly, qx] = s1
                        t2[ly, qx] = s2
                    for lx in range(n1):
                        s = 0.0
                        for qx in range(q):
                            s += gv[qx, lx] * t1[ly, qx] \
                                + nv[qx, lx] * t2[ly, qx]
                        out[base[2 * (ly * n1 + lx) + i]] += s

    return kernel


def _make_store_apply_3d(n1, q):

    @numba.njit(**_JIT)
    def kernel(conn, x, nv, gv, m_map, wj, cpack, sig, out, c0, c1):
        u = np.empty((3, n1, n1, n1))
        ax_g = np.empty((n1, n1, q))
        ax_n = np.empty((n1, n1, q))
        y_gn = np.empty((n1, q, q))
        y_ng = np.empty((n1, q, q))
        y_nn = np.empty((n1, q, q))
        hx = np.empty((3, q, q, q))
        hy = np.empty((3, q, q, q))
        hz = np.empty((3, q, q, q))
        vmat = np.empty((6, 6))
        hq = np.empty((3, 3))
        qq = np.empty((3, 3))
        sg = np.empty((3, 3))
        for c in range(c0, c1):
            base = conn[c]
            for lz in range(n1):
                for ly in range(n1):
                    for lx in range(n1):
                        node = (lz * n1 + ly) * n1 + lx
                        u[0, lz, ly, lx] = x[base[3 * node]]
                        u[1, lz, ly, lx] = x[base[3 * node + 1]]
                        u[2, lz, ly, lx] = x[base[3 * node + 2]]
            for i in range(3):
                for lz in range(n1):
                    for ly in range(n1):
                        for qx in range(q):
                            sgv = 0.0
                            snv = 0.0
                            for lx in range(n1):
                                sgv += gv[qx, lx] * u[i, lz, ly, lx]
                                snv += nv[qx, lx] * u[i, lz, ly, lx]
                            ax_g[lz, ly, qx] = sgv
                            ax_n[lz, ly, qx] = snv
                for lz in range(n1):
                    for qy in range(q):
                        for qx in range(q):
                            a = 0.0
                            b = 0.0
                            d_ = 0.0
                            for ly in range(n1):
                                a += nv[qy, ly] * ax_g[lz, ly, qx]
                                b += gv[qy, ly] * ax_n[lz, ly, qx]
                                d_ += nv[qy, ly] * ax_n[lz, ly, qx]
                            y_gn[lz, qy, qx] = a
                            y_ng[lz, qy, qx] = b
                            y_nn[lz, qy, qx] = d_
                for qz in range(q):
                    for qy in range(q):
                        for qx in range(q):
                            a = 0.0
                            b = 0.0
                            d_ = 0.0
                            for lz in range(n1):
                                a += nv[qz, lz] * y_gn[lz, qy, qx]
                                b += nv[qz, lz] * y_ng[lz, qy, qx]
                                d_ += gv[qz, lz] * y_nn[lz, qy, qx]
                            hx[i, qz, qy, qx] = a
                            hy[i, qz, qy, qx] = b
                            hz[i, qz, qy, qx] = d_
            for qz in range(q):
                for qy in range(q):
                    for qx in range(q):
                        qp = (qz * q + qy) * q + qx
                        idx = 0
                        for a in range(6):
                            for b in range(a, 6):
                                vmat[a, b] = cpack[c, qp, idx]
                                vmat[b, a] = cpack[c, qp, idx]
                                idx += 1
                        s0 = sig[c, qp, 0]
                        s1 = sig[c, qp, 1]
                        s2 = sig[c, qp, 2]
                        s3 = sig[c, qp, 3]
                        s4 = sig[c, qp, 4]
                        s5 = sig[c, qp, 5]
                        sg[0, 0] = s0
                        sg[1, 1] = s1
                        sg[2, 2] = s2
                        sg[1, 2] = s3
                        sg[2, 1] = s3
                        sg[0, 2] = s4
                        sg[2, 0] = s4
                        sg[0, 1] = s5
                        sg[1, 0] = s5
                        for i in range(3):
                            for k in range(3):
                                hq[i, k] = (hx[i, qz, qy, qx]
                                            * m_map[c, qp, 0, k]
                                            + hy[i, qz, qy, qx]
                                            * m_map[c, qp, 1, k]
                                            + hz[i, qz, qy, qx]
                                            * m_map[c, qp, 2, k])
                        e0 = hq[0, 0]
                        e1 = hq[1, 1]
                        e2 = hq[2, 2]
                        e3 = hq[1, 2] + hq[2, 1]
                        e4 = hq[0, 2] + hq[2, 0]
                        e5 = hq[0, 1] + hq[1, 0]
                        for i in range(3):
                            gi = (vmat[i, 0] * e0 + vmat[i, 1] * e1
                                  + vmat[i, 2] * e2 + vmat[i, 3] * e3
                                  + vmat[i, 4] * e4 + vmat[i, 5] * e5)
                            qq[i, i] = gi
                        g3 = (vmat[3, 0] * e0 + vmat[3, 1] * e1
                              + vmat[3, 2] * e2 + vmat[3, 3] * e3
                              + vmat[3, 4] * e4 + vmat[3, 5] * e5)
                        g4 = (vmat[4, 0] * e0 + vmat[4, 1] * e1
                              + vmat[4, 2] * e2 + vmat[4, 3] * e3
                              + vmat[4, 4] * e4 + vmat[4, 5] * e5)
                        g5 = (vmat[5, 0] * e0 + vmat[5, 1] * e1
                              + vmat[5, 2] * e2 + vmat[5, 3] * e3
                              + vmat[5, 4] * e4 + vmat[5, 5] * e5)
                        qq[1, 2] = g3
                        qq[2, 1] = g3
                        qq[0, 2] = g4
                        qq[2, 0] = g4
                        qq[0, 1] = g5
                        qq[1, 0] = g5
                        for i in range(3):
                            for k in range(3):
                                acc = qq[i, k]
                                for l in range(3):
                                    acc += hq[i, l] * sg[l, k]
                                qq[i, k] = acc
                        w = wj[c, qp]
                        for i in range(3):
                            bh0 = 0.0
                            bh1 = 0.0
                            bh2 = 0.0
                            for k in range(3):
                                bh0 += qq[i, k] * m_map[c, qp, 0, k]
                                bh1 += qq[i, k] * m_map[c, qp, 1, k]
                                bh2 += qq[i, k] * m_map[c, qp, 2, k]
                            hx[i, qz, qy, qx] = w * bh0
                            hy[i, qz, qy, qx] = w * bh1
                            hz[i, qz, qy, qx] = w * bh2
            for i in range(3):
                for lz in range(n1):
                    for qy in range(q):
                        for qx in range(q):
                            a = 0.0
                            b = 0.0
                            d_ = 0.0
                            for qz in range(q):
                                a += nv[qz, lz] * hx[i, qz, qy, qx]
                                b += nv[qz, lz] * hy[i, qz, qy, qx]
                                d_ += gv[qz, lz] * hz[i, qz, qy, qx]
                            y_gn[lz, qy, qx] = a
                            y_ng[lz, qy, qx] = b
                            y_nn[lz, qy, qx] = d_
                for lz in range(n1):
                    for ly in range(n1):
                        for qx in range(q):
                            a = 0.0
                            b = 0.0
                            for qy in range(q):
                                a += nv[qy, ly] * y_gn[lz, qy, qx]
                                b += gv[qy, ly] * y_ng[lz, qy, qx] \
                                    + nv[qy, ly] * y_nn[lz, qy, qx]
                            ax_g[lz, ly, qx] = a
                            ax_n[lz, ly, qx] = b
                        for lx in range(n1):
                            s = 0.0
                            for qx in range(q):
                                s += gv[qx, lx] * ax_g[lz, ly, qx] \
                                    + nv[qx, lx] * ax_n[lz, ly, qx]
                            out[base[3 * ((lz * n1 + ly) * n1 + lx) + i]] += s

    return kernel


def store_apply(dim, n1, q):
    """Degree-specialized partial-assembly kernel for one spatial dimension."""
    cache = _CACHE_2D if dim == 2 else _CACHE_3D
    key = (n1, q)
    if key not in cache:
        maker = _make_store_apply_2d if dim == 2 else _make_store_apply_3d
        cache[key] = maker(n1, q)
    return cache[key]
