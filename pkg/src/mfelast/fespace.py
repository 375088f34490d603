"""Tensor-product Lagrange basis, Gauss quadrature, geometry, sum factorization.

The reference cell is [0, 1]^d with equidistant Lagrange support points
per direction and (p+1)^d Gauss-Legendre quadrature points.  Gradient
evaluation and its transpose (integration against basis gradients) are
implemented as successive one-dimensional contractions, so the per-cell
cost grows like (p+1)^(d+1) instead of the naive (p+1)^(2d).

Two implementations coexist and are tested against each other:

* a batched float path over all cells of a level (numpy einsum), used by
  the operator module;
* a single-cell generic path that accepts any scalar type, used for
  operation counting and as a structural reference.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .counting import CountingScalar, OpCounter

__all__ = [
    "UnsupportedOrder",
    "gauss_1d",
    "Basis1D",
    "CellGeometry",
    "build_geometry",
    "check_degree",
    "local_to_tensor",
    "tensor_to_local",
    "evaluate_gradients_batch",
    "integrate_gradients_batch",
    "evaluate_gradients_cell",
    "evaluate_gradients_cell_naive",
    "flop_complexity_probe",
    "ProbeCounts",
]

MAX_GAUSS_POINTS = 12
MAX_DEGREE = {2: 8, 3: 4}


class UnsupportedOrder(ValueError):
    """Requested quadrature or polynomial order outside the supported range."""


def check_degree(p: int, dim: int) -> None:
    if not 1 <= p <= MAX_DEGREE[dim]:
        raise UnsupportedOrder(
            f"degree {p} outside supported range [1, {MAX_DEGREE[dim]}] "
            f"in {dim}D")


def gauss_1d(q: int):
    """Gauss-Legendre rule on [0, 1], exact for polynomials of degree 2q-1."""
    if not 1 <= q <= MAX_GAUSS_POINTS:
        raise UnsupportedOrder(f"quadrature order {q} outside [1, 12]")
    pts, wts = np.polynomial.legendre.leggauss(q)
    return 0.5 * (pts + 1.0), 0.5 * wts


def _barycentric_weights(nodes):
    w = np.ones(len(nodes))
    for i, xi in enumerate(nodes):
        for j, xj in enumerate(nodes):
            if i != j:
                w[i] /= xi - xj
    return w


def _lagrange_tables(nodes, points):
    """Values and derivatives of the Lagrange basis at arbitrary points.

    Barycentric form: partition of unity holds to roundoff and the
    derivative rows sum to zero exactly.
    """
    n = len(nodes)
    w = _barycentric_weights(nodes)
    values = np.zeros((len(points), n))
    grads = np.zeros((len(points), n))
    for k, t in enumerate(points):
        diff = t - nodes
        hit = np.where(np.abs(diff) < 1e-13)[0]
        if hit.size:
            i = hit[0]
            values[k, i] = 1.0
            for j in range(n):
                if j != i:
                    grads[k, j] = (w[j] / w[i]) / (nodes[i] - nodes[j])
            grads[k, i] = -np.sum(grads[k, :])
        else:
            r = w / diff
            s = np.sum(r)
            values[k] = r / s
            t2 = np.sum(w / diff**2) / s
            grads[k] = values[k] * (t2 - 1.0 / diff)
    return values, grads


@dataclass
class Basis1D:
    """1D Lagrange basis tabulated at its Gauss points."""

    p: int
    nodes: np.ndarray     # p+1 equidistant support points on [0, 1]
    qpoints: np.ndarray   # p+1 Gauss points
    qweights: np.ndarray
    values: np.ndarray    # (q, p+1)
    grads: np.ndarray     # (q, p+1), d/dx on [0, 1]

    @classmethod
    def build(cls, p: int) -> "Basis1D":
        if p < 1:
            raise UnsupportedOrder("degree must be >= 1")
        nodes = np.linspace(0.0, 1.0, p + 1)
        qp, qw = gauss_1d(p + 1)
        values, grads = _lagrange_tables(nodes, qp)
        return cls(p, nodes, qp, qw, values, grads)

    @property
    def q(self) -> int:
        return len(self.qpoints)

    def tensor_weights(self, dim: int) -> np.ndarray:
        """Flattened tensor-product weights, x-fastest qp ordering."""
        w = self.qweights
        out = w
        for _ in range(dim - 1):
            out = np.multiply.outer(w, out)  # slower axes prepend
        return out.ravel()


def _multilinear_jacobian(dim, corners, points):
    """Jacobian of the multilinear vertex map at reference points.

    corners: (2^d, d) physical corner coordinates, x-fastest corner order.
    Returns (n_pts, d, d) with J[k, i, m] = d x_i / d xhat_m.
    """
    n_pts = len(points)
    jac = np.zeros((n_pts, dim, dim))
    offs = [((c >> k) & 1 for k in range(dim)) for c in range(2**dim)]
    offs = np.array([[(c >> k) & 1 for k in range(dim)]
                     for c in range(2**dim)])
    for ci, s in enumerate(offs):
        for m in range(dim):
            factor = np.ones(n_pts)
            for k in range(dim):
                if k == m:
                    factor = factor * (1.0 if s[k] else -1.0)
                else:
                    xk = points[:, k]
                    factor = factor * (xk if s[k] else 1.0 - xk)
            jac[:, :, m] += factor[:, None] * corners[ci][None, :]
    return jac


@dataclass
class CellGeometry:
    """Per-cell mapping data at quadrature points.

    ``layout`` is "per_qp" (inverse Jacobian stored at every quadrature
    point, the accounting-faithful layout) or "per_cell" (one inverse
    Jacobian per cell, valid for affine cells).  Both layouts produce
    identical results on the structured meshes used here.
    """

    layout: str
    inv_jacobian: np.ndarray  # (n_cells, nqp, d, d) or (n_cells, d, d)
    jxw: np.ndarray           # (n_cells, nqp)

    def inv_jacobian_at(self, per_qp: bool) -> np.ndarray:
        if per_qp and self.layout == "per_cell":
            nqp = self.jxw.shape[1]
            return np.repeat(self.inv_jacobian[:, None], nqp, axis=1)
        return self.inv_jacobian

    def storage_bytes(self) -> int:
        return self.inv_jacobian.nbytes + self.jxw.nbytes


def build_geometry(level, basis: Basis1D, layout: str = "per_qp") -> CellGeometry:
    dim = level.dim
    q = basis.q
    pts_1d = basis.qpoints
    grids = np.meshgrid(*([pts_1d] * dim), indexing="ij")
    points = np.stack([g.ravel(order="F") for g in grids], axis=1)
    weights = basis.tensor_weights(dim)

    n_cells = level.n_cells
    nqp = q**dim
    inv_per_qp = np.zeros((n_cells, nqp, dim, dim))
    jxw = np.zeros((n_cells, nqp))
    for c in range(n_cells):
        corners = level.vertices[level.cells[c]]
        jac = _multilinear_jacobian(dim, corners, points)
        det = np.linalg.det(jac)
        if np.any(det <= 0):
            raise ValueError("non-positive mapping Jacobian")
        inv_per_qp[c] = np.linalg.inv(jac)
        jxw[c] = det * weights
    if layout == "per_cell":
        return CellGeometry("per_cell", inv_per_qp[:, 0].copy(), jxw)
    if layout != "per_qp":
        raise ValueError("layout must be 'per_qp' or 'per_cell'")
    return CellGeometry("per_qp", inv_per_qp, jxw)


def local_to_tensor(coeffs, dim, n1):
    """(n_cells, nloc) interleaved local vectors -> (n_cells, d, [z, y,] x)."""
    n_cells = coeffs.shape[0]
    a = coeffs.reshape(n_cells, -1, dim)          # (cells, nodes, comp)
    a = np.moveaxis(a, -1, 1)                     # (cells, comp, nodes)
    return a.reshape((n_cells, dim) + (n1,) * dim)


def tensor_to_local(a, dim, n1):
    n_cells = a.shape[0]
    flat = a.reshape(n_cells, dim, n1**dim)
    return np.moveaxis(flat, 1, -1).reshape(n_cells, dim * n1**dim)


def hat_gradients_batch(basis, dim, a):
    """Reference-cell gradients by 1D contractions; (cells, nqp, d, d_hat)."""
    n, g = basis.values, basis.grads
    n_cells = a.shape[0]
    q = basis.q
    if dim == 2:
        tg = np.einsum("qx,ciyx->ciyq", g, a)
        tn_ = np.einsum("qx,ciyx->ciyq", n, a)
        gx = np.einsum("ry,ciyq->cirq", n, tg)
        gy = np.einsum("ry,ciyq->cirq", g, tn_)
        hat = np.stack([gx, gy], axis=-1)             # (c, i, qy, qx, 2)
        return hat.reshape(n_cells, dim, q * q, dim).transpose(0, 2, 1, 3)
    tg = np.einsum("qx,cizyx->cizyq", g, a)
    tn_ = np.einsum("qx,cizyx->cizyq", n, a)
    s_gn = np.einsum("ry,cizyq->cizrq", n, tg)
    s_ng = np.einsum("ry,cizyq->cizrq", g, tn_)
    s_nn = np.einsum("ry,cizyq->cizrq", n, tn_)
    gx = np.einsum("sz,cizrq->cisrq", n, s_gn)
    gy = np.einsum("sz,cizrq->cisrq", n, s_ng)
    gz = np.einsum("sz,cizrq->cisrq", g, s_nn)
    hat = np.stack([gx, gy, gz], axis=-1)
    return hat.reshape(n_cells, dim, q**3, dim).transpose(0, 2, 1, 3)


def hat_integrate_batch(basis, dim, bhat):
    """Exact transpose of :func:`hat_gradients_batch`."""
    n, g = basis.values, basis.grads
    n_cells, nqp = bhat.shape[0], bhat.shape[1]
    q = basis.q
    b = bhat.transpose(0, 2, 1, 3)  # (c, i, nqp, d_hat)
    if dim == 2:
        b = b.reshape(n_cells, dim, q, q, dim)
        bx, by = b[..., 0], b[..., 1]
        t1 = np.einsum("ry,cirq->ciyq", n, bx)
        t2 = np.einsum("ry,cirq->ciyq", g, by)
        out = np.einsum("qx,ciyq->ciyx", g, t1) \
            + np.einsum("qx,ciyq->ciyx", n, t2)
        return out
    b = b.reshape(n_cells, dim, q, q, q, dim)
    bx, by, bz = b[..., 0], b[..., 1], b[..., 2]
    u_gn = np.einsum("sz,cisrq->cizrq", n, bx)
    u_ng = np.einsum("sz,cisrq->cizrq", n, by)
    u_nn = np.einsum("sz,cisrq->cizrq", g, bz)
    t_g = np.einsum("ry,cizrq->cizyq", n, u_gn)
    t_n = np.einsum("ry,cizrq->cizyq", g, u_ng) \
        + np.einsum("ry,cizrq->cizyq", n, u_nn)
    out = np.einsum("qx,cizyq->cizyx", g, t_g) \
        + np.einsum("qx,cizyq->cizyx", n, t_n)
    return out


def evaluate_gradients_batch(basis, dim, coeffs, geom: CellGeometry):
    """Referential gradients of the interpolated field at all qps.

    coeffs: (n_cells, d (p+1)^d) interleaved local vectors.
    Returns (n_cells, nqp, d, d) with entry [c, q, i, k] = d u_i / d X_k.
    """
    a = local_to_tensor(coeffs, dim, basis.p + 1)
    hat = hat_gradients_batch(basis, dim, a)
    if geom.layout == "per_qp":
        return np.einsum("cqim,cqmk->cqik", hat, geom.inv_jacobian)
    return np.einsum("cqim,cmk->cqik", hat, geom.inv_jacobian)


def integrate_gradients_batch(basis, dim, qp_tensors, geom: CellGeometry):
    """Quadrature of G : grad(phi_i) for all test functions; exact transpose
    of :func:`evaluate_gradients_batch` composed with JxW scaling.

    qp_tensors: (n_cells, nqp, d, d).  Returns (n_cells, d (p+1)^d).
    """
    if geom.layout == "per_qp":
        bhat = np.einsum("cqik,cqmk->cqim", qp_tensors, geom.inv_jacobian)
    else:
        bhat = np.einsum("cqik,cmk->cqim", qp_tensors, geom.inv_jacobian)
    bhat = bhat * geom.jxw[..., None, None]
    out = hat_integrate_batch(basis, dim, bhat)
    return tensor_to_local(out.reshape((out.shape[0], dim) + out.shape[2:]),
                           dim, basis.p + 1)


# --- generic single-cell path (any scalar type) ------------------------


def _cell_components(coeffs_flat, dim, n1):
    """Interleaved local vector -> per-component nested lists, x-fastest."""
    n_nodes = n1**dim
    comps = []
    for i in range(dim):
        comps.append([coeffs_flat[dim * node + i] for node in range(n_nodes)])
    return comps


def _contract_1d(table, data, n1, axis_stride, n_lines, q):
    """Contract one tensor axis of ``data`` (flat list) with ``table``."""
    out = [None] * (n_lines * q)
    for line in range(n_lines):
        base = (line // axis_stride) * axis_stride * n1 + line % axis_stride
        for k in range(q):
            s = table[k][0] * data[base]
            for j in range(1, n1):
                s = s + table[k][j] * data[base + j * axis_stride]
            out[(line // axis_stride) * axis_stride * q
                + line % axis_stride + k * axis_stride] = s
    return out


def sumfac_hat_gradients_cell(basis, dim, coeffs_flat):
    """Generic sum-factorized reference gradients of one cell.

    Returns a list over qps (x-fastest) of (d, d_hat) nested lists.
    """
    n1 = basis.p + 1
    q = basis.q
    nv = [[float(v) for v in row] for row in basis.values]
    ng = [[float(v) for v in row] for row in basis.grads]
    comps = _cell_components(coeffs_flat, dim, n1)
    nqp = q**dim
    hat = [[[None] * dim for _ in range(dim)] for _ in range(nqp)]
    for i, u in enumerate(comps):
        for gdir in range(dim):
            data = u
            size = [n1] * dim
            for axis in range(dim):
                table = ng if axis == gdir else nv
                stride = 1
                for a2 in range(axis):
                    stride *= size[a2]
                n_lines = 1
                for a2 in range(dim):
                    if a2 != axis:
                        n_lines *= size[a2]
                data = _contract_1d(table, data, n1, stride, n_lines, q)
                size[axis] = q
            for qp in range(nqp):
                hat[qp][i][gdir] = data[qp]
    return hat


def map_hat_gradients(hat, inv_jac):
    """Apply the (d, d) inverse Jacobian to per-qp reference gradients."""
    dim = len(inv_jac)
    out = []
    for h in hat:
        g = [[None] * dim for _ in range(dim)]
        for i in range(dim):
            for k in range(dim):
                s = h[i][0] * inv_jac[0][k]
                for m in range(1, dim):
                    s = s + h[i][m] * inv_jac[m][k]
                g[i][k] = s
        out.append(g)
    return out


def evaluate_gradients_cell(basis, dim, coeffs_flat, inv_jac):
    """Generic single-cell version of :func:`evaluate_gradients_batch`."""
    return map_hat_gradients(sumfac_hat_gradients_cell(basis, dim,
                                                       coeffs_flat), inv_jac)


def evaluate_gradients_cell_naive(basis, dim, coeffs_flat, inv_jac):
    """Per-basis-function summation: one full loop per (qp, node) pair."""
    n1 = basis.p + 1
    q = basis.q
    comps = _cell_components(coeffs_flat, dim, n1)
    nqp = q**dim
    hat = []
    for qp in range(nqp):
        qidx = [(qp // q**k) % q for k in range(dim)]
        g = [[0.0] * dim for _ in range(dim)]
        for node in range(n1**dim):
            nidx = [(node // n1**k) % n1 for k in range(dim)]
            for gdir in range(dim):
                w = 1.0
                for k in range(dim):
                    table = basis.grads if k == gdir else basis.values
                    w = w * float(table[qidx[k]][nidx[k]])
                for i in range(dim):
                    g[i][gdir] = g[i][gdir] + comps[i][node] * w
        hat.append(g)
    return map_hat_gradients(hat, inv_jac)


@dataclass
class ProbeCounts:
    """Operation counts of one cell-gradient evaluation."""

    contractions: int  # sum-factorized 1D contraction work
    mapping: int       # per-qp inverse-Jacobian application
    naive: int         # full per-basis-function loop, mapping included

    @property
    def total(self) -> int:
        return self.contractions + self.mapping


def flop_complexity_probe(p: int, dim: int, seed: int = 0) -> ProbeCounts:
    """Instrument gradient evaluation with counting scalars.

    The contraction count follows the (p+1)^(d+1) sum-factorization model;
    the naive count follows (p+1)^(2d).
    """
    basis = Basis1D.build(p)
    rng = np.random.default_rng(seed)
    n_loc = dim * (p + 1) ** dim
    raw = rng.standard_normal(n_loc)
    inv_plain = [[1.0 if i == k else 0.0 for k in range(dim)]
                 for i in range(dim)]

    c1 = OpCounter()
    coeffs = [CountingScalar(v, c1) for v in raw]
    hat = sumfac_hat_gradients_cell(basis, dim, coeffs)
    contractions = c1.total

    c2 = OpCounter()
    inv = [[CountingScalar(v, c2) for v in row] for row in inv_plain]
    map_hat_gradients(hat, inv)
    mapping = c2.total

    c3 = OpCounter()
    coeffs3 = [CountingScalar(v, c3) for v in raw]
    inv3 = [[CountingScalar(v, c3) for v in row] for row in inv_plain]
    evaluate_gradients_cell_naive(basis, dim, coeffs3, inv3)
    naive = c3.total

    return ProbeCounts(contractions, mapping, naive)
