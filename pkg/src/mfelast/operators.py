"""Residual evaluation and the strategy-parameterized tangent operator.

Strategies for applying the Newton tangent at a fixed linearization state:

* ``NAIVE``        per point, form the full fourth-order tangent by
                   differentiating the energy twice, then contract;
* ``RECOMPUTE``    per point, a seeded Hessian-vector product of the
                   energy (the tangent is never formed); the linearization
                   gradients are recomputed from the nodal state by an
                   extra sum-factorization pass on every application;
* ``STORE``        partial assembly: cache the spatial tangent data
                   (21 + 6 reals per point in 3D) once, apply it with a
                   model-independent kernel;
* ``SPARSE_BASELINE``  assembled CSR matrix, classical SpMV.

Dirichlet handling is symmetric condensation everywhere: constrained rows
and columns act as the identity, so all four strategies agree exactly.
"""

from __future__ import annotations

import concurrent.futures
from dataclasses import dataclass
from enum import Enum

import numpy as np
import scipy.sparse as sp

from . import autodiff as ad
from . import fespace as fe
from . import materials as mat
from . import tensors as tn
from .meshes import BoundaryTag, MeshLevel, distribute_dofs

try:
    from . import _kernels
    HAVE_COMPILED_KERNELS = True
except ImportError:  # pragma: no cover - numba is a hard dependency
    _kernels = None
    HAVE_COMPILED_KERNELS = False

__all__ = [
    "TangentStrategy",
    "StateNotPrepared",
    "LevelContext",
    "QpCache",
    "TangentOperator",
    "build_level_context",
    "residual",
    "total_energy",
    "gather_cells",
    "scatter_add",
    "qp_body_naive",
    "qp_body_recompute",
    "qp_body_store",
    "HAVE_COMPILED_KERNELS",
]


class TangentStrategy(Enum):
    NAIVE = "naive"
    RECOMPUTE = "recompute"
    STORE = "store"
    SPARSE_BASELINE = "sparse"


MATRIX_FREE_STRATEGIES = (TangentStrategy.NAIVE, TangentStrategy.RECOMPUTE,
                          TangentStrategy.STORE)


class StateNotPrepared(RuntimeError):
    """vmult/diagonal requested before prepare() for the current state."""


@dataclass
class LevelContext:
    """Mesh level + degree + materials: everything the operator needs that
    does not depend on the linearization state."""

    level: MeshLevel
    dofmap: "object"
    basis: fe.Basis1D
    geom: fe.CellGeometry        # per-cell inverse Jacobians (affine cells)
    mu_cells: np.ndarray
    lam_cells: np.ndarray
    kappa_cells: np.ndarray
    model: mat.Model
    f_ext: np.ndarray            # discrete surface load at full traction
    traction: np.ndarray

    @property
    def dim(self) -> int:
        return self.level.dim

    @property
    def n_dofs(self) -> int:
        return self.dofmap.n_dofs

    @property
    def nqp(self) -> int:
        return self.basis.q**self.dim

    def qp_params(self) -> mat.MaterialParams:
        """Material parameters broadcast to one flat array per qp."""
        rep = self.nqp
        return mat.MaterialParams(
            mu=np.repeat(self.mu_cells, rep),
            lam=np.repeat(self.lam_cells, rep),
            kappa=np.repeat(self.kappa_cells, rep),
            model=self.model,
        )

    def geometry_bytes(self) -> int:
        # accounting uses the per-qp layout: d^2 + 1 reals per point
        n_qp_total = self.level.n_cells * self.nqp
        return 8 * n_qp_total * (self.dim**2 + 1)


def build_surface_load(level, dofmap, basis, traction):
    """Discrete load vector of the full traction on the top face."""
    dim, p = level.dim, dofmap.p
    n1 = p + 1
    h = level.h
    w_int = basis.qweights @ basis.values  # exact 1D integrals of the basis
    f = np.zeros(dofmap.n_dofs)
    top_faces = level.boundary_faces[
        level.boundary_faces[:, 2] == BoundaryTag.NEUMANN_TOP]
    for cell, _, _ in top_faces:
        conn = dofmap.conn[cell]
        if dim == 2:
            ly = p
            for lx in range(n1):
                node = ly * n1 + lx
                for comp in range(dim):
                    f[conn[dim * node + comp]] += traction[comp] * h * w_int[lx]
        else:
            ly = p
            for lz in range(n1):
                for lx in range(n1):
                    node = (lz * n1 + ly) * n1 + lx
                    val = h * h * w_int[lx] * w_int[lz]
                    for comp in range(dim):
                        f[conn[dim * node + comp]] += traction[comp] * val
    return f


def build_level_context(level, p, params_by_id, traction) -> LevelContext:
    fe.check_degree(p, level.dim)
    dofmap = distribute_dofs(level, p)
    basis = fe.Basis1D.build(p)
    geom = fe.build_geometry(level, basis, layout="per_cell")
    mu = np.array([params_by_id[m].mu for m in level.material_id])
    lam = np.array([params_by_id[m].lam for m in level.material_id])
    kappa = np.array([params_by_id[m].kappa for m in level.material_id])
    model = params_by_id[0].model
    f_ext = build_surface_load(level, dofmap, basis, np.asarray(traction))
    return LevelContext(level, dofmap, basis, geom, mu, lam, kappa, model,
                        f_ext, np.asarray(traction, dtype=float))


def gather_cells(u, conn):
    return u[conn]


def scatter_add(values, conn, n_dofs):
    """Deterministic accumulation of per-cell vectors into the global one."""
    return np.bincount(conn.ravel(), weights=values.ravel(),
                       minlength=n_dofs)


def _ref_gradients(ctx, u):
    return fe.evaluate_gradients_batch(ctx.basis, ctx.dim,
                                       gather_cells(u, ctx.dofmap.conn),
                                       ctx.geom)


def residual(ctx: LevelContext, u, load_fraction):
    """Discrete nonlinear residual; constrained entries are zeroed.

    Entry i is the internal virtual work of the first Piola-Kirchhoff
    stress against basis gradient i minus the scaled surface load.
    """
    dim = ctx.dim
    hbar = _ref_gradients(ctx, u)
    shape = hbar.shape[:2]
    fcomp = tn.component_form(hbar.reshape(-1, dim, dim))
    for i in range(dim):
        fcomp[i, i] = fcomp[i, i] + 1.0
    p = mat.pk1(ctx.qp_params(), fcomp)
    p_arr = np.empty(shape + (dim, dim))
    for i in range(dim):
        for k in range(dim):
            p_arr[..., i, k] = p[i, k].reshape(shape)
    local = fe.integrate_gradients_batch(ctx.basis, dim, p_arr, ctx.geom)
    r = scatter_add(local, ctx.dofmap.conn, ctx.n_dofs)
    r -= load_fraction * ctx.f_ext
    r[ctx.dofmap.dirichlet_mask] = 0.0
    return r


def total_energy(ctx: LevelContext, u, load_fraction):
    """Potential energy: stored strain energy minus external work."""
    dim = ctx.dim
    hbar = _ref_gradients(ctx, u)
    fcomp = tn.component_form(hbar.reshape(-1, dim, dim))
    for i in range(dim):
        fcomp[i, i] = fcomp[i, i] + 1.0
    psi = mat.energy(ctx.qp_params(), fcomp).reshape(hbar.shape[:2])
    return float(np.sum(psi * ctx.geom.jxw)) - load_fraction * float(
        ctx.f_ext @ u)


@dataclass
class QpCache:
    """Partial-assembly data per quadrature point."""

    constitutive: mat.ConstitutiveCache   # packed tangent + Voigt stress
    jxw_times_j: np.ndarray               # (n_cells, nqp)
    inv_jacobian_deformed: np.ndarray     # (n_cells, nqp, d, d)

    def constitutive_bytes(self) -> int:
        return self.constitutive.c_spatial.nbytes + self.constitutive.sigma.nbytes

    def geometry_bytes(self) -> int:
        return self.inv_jacobian_deformed.nbytes + self.jxw_times_j.nbytes


def _batch_inverse(a):
    """Inverse of a (..., d, d) float array by cofactors."""
    d = a.shape[-1]
    out = np.empty_like(a)
    if d == 2:
        det = a[..., 0, 0] * a[..., 1, 1] - a[..., 0, 1] * a[..., 1, 0]
        out[..., 0, 0] = a[..., 1, 1] / det
        out[..., 0, 1] = -a[..., 0, 1] / det
        out[..., 1, 0] = -a[..., 1, 0] / det
        out[..., 1, 1] = a[..., 0, 0] / det
        return out
    comp = tn.component_form(a.reshape(-1, d, d))
    inv = tn.inverse(comp)
    for i in range(d):
        for k in range(d):
            out[..., i, k] = inv[i, k].reshape(a.shape[:-2])
    return out


class TangentOperator:
    """Appliable tangent at a fixed linearization state, per strategy."""

    def __init__(self, ctx: LevelContext, strategy: TangentStrategy,
                 workers: int = 1):
        self.ctx = ctx
        self.strategy = strategy
        self.workers = workers
        self.u_bar = None
        self.cache: QpCache | None = None
        self.csr = None
        self._prepared = False

    @property
    def n_dofs(self):
        return self.ctx.n_dofs

    # -- preparation ----------------------------------------------------

    def prepare(self, u_bar):
        """Build the per-strategy caches for linearization state ``u_bar``."""
        self.u_bar = np.array(u_bar, dtype=float, copy=True)
        self.cache = None
        self.csr = None
        if self.strategy is TangentStrategy.STORE:
            self.cache = self._build_qp_cache()
        elif self.strategy is TangentStrategy.SPARSE_BASELINE:
            self.csr = self.assemble_csr()
        else:
            # on-the-fly strategies keep no constitutive data; gradients of
            # u_bar are recomputed by sum factorization on every application
            hbar = _ref_gradients(self.ctx, self.u_bar)
            dim = self.ctx.dim
            det = np.linalg.det(np.eye(dim) + hbar)
            if np.any(det <= 0.0):
                raise mat.NonPositiveJacobian("det F <= 0 at a point")
        self._prepared = True

    def _build_qp_cache(self) -> QpCache:
        ctx = self.ctx
        dim = ctx.dim
        hbar = _ref_gradients(ctx, self.u_bar)
        shape = hbar.shape[:2]
        cache, j = mat.spatial_data(ctx.qp_params(), tn.component_form(
            hbar.reshape(-1, dim, dim)))
        f_arr = np.eye(dim) + hbar
        f_inv = _batch_inverse(f_arr.reshape(-1, dim, dim)).reshape(
            f_arr.shape)
        m_map = np.einsum("cmk,cqkl->cqml", ctx.geom.inv_jacobian, f_inv)
        wj = ctx.geom.jxw * j.reshape(shape)
        return QpCache(
            mat.ConstitutiveCache(
                np.ascontiguousarray(cache.c_spatial.reshape(shape + (-1,))),
                np.ascontiguousarray(cache.sigma.reshape(shape + (-1,)))),
            np.ascontiguousarray(wj),
            np.ascontiguousarray(m_map),
        )

    def _require(self, *strategies):
        if not self._prepared:
            raise StateNotPrepared("call prepare() first")
        if strategies and self.strategy not in strategies:
            raise StateNotPrepared(
                f"operator prepared for {self.strategy}, not {strategies}")

    # -- application ----------------------------------------------------

    def vmult(self, x):
        """Apply the tangent; constrained entries pass through unchanged."""
        self._require()
        x = np.asarray(x, dtype=float)
        free = self.ctx.dofmap.free_mask
        xt = np.where(free, x, 0.0)
        if self.strategy is TangentStrategy.SPARSE_BASELINE:
            y = self.csr @ x
            return y
        if self.strategy is TangentStrategy.STORE:
            y = self._vmult_store(xt)
        else:
            y = self._vmult_on_the_fly(xt)
        y[~free] = x[~free]
        return y

    def _cell_ranges(self):
        n_cells = self.ctx.level.n_cells
        w = max(1, min(self.workers, n_cells))
        bounds = np.linspace(0, n_cells, w + 1, dtype=int)
        return [(int(bounds[i]), int(bounds[i + 1])) for i in range(w)
                if bounds[i] < bounds[i + 1]]

    def _vmult_store(self, xt):
        ctx = self.ctx
        cache = self.cache
        if HAVE_COMPILED_KERNELS:
            kernel = _kernels.store_apply(ctx.dim, ctx.basis.p + 1,
                                          ctx.basis.q)
            ranges = self._cell_ranges()
            if len(ranges) == 1:
                out = np.zeros(ctx.n_dofs)
                kernel(ctx.dofmap.conn, xt, ctx.basis.values, ctx.basis.grads,
                       cache.inv_jacobian_deformed, cache.jxw_times_j,
                       cache.constitutive.c_spatial, cache.constitutive.sigma,
                       out, ranges[0][0], ranges[0][1])
                return out
            outs = [np.zeros(ctx.n_dofs) for _ in ranges]

            def run(i):
                c0, c1 = ranges[i]
                kernel(ctx.dofmap.conn, xt, ctx.basis.values, ctx.basis.grads,
                       cache.inv_jacobian_deformed, cache.jxw_times_j,
                       cache.constitutive.c_spatial, cache.constitutive.sigma,
                       outs[i], c0, c1)

            with concurrent.futures.ThreadPoolExecutor(len(ranges)) as pool:
                list(pool.map(run, range(len(ranges))))
            total = outs[0]
            for o in outs[1:]:
                total += o
            return total
        return self._vmult_store_numpy(xt)

    def _vmult_store_numpy(self, xt):
        """Vectorized reference path for the partial-assembly product."""
        ctx = self.ctx
        dim = ctx.dim
        cache = self.cache
        a = fe.local_to_tensor(gather_cells(xt, ctx.dofmap.conn), dim,
                               ctx.basis.p + 1)
        hat = fe.hat_gradients_batch(ctx.basis, dim, a)
        grad = np.einsum("cqim,cqmk->cqik", hat, cache.inv_jacobian_deformed)
        eps = 0.5 * (grad + np.swapaxes(grad, -1, -2))
        nv = len(tn.VOIGT_PAIRS[dim])
        pairs = tn.VOIGT_PAIRS[dim]
        e_v = np.stack([eps[..., i, k] for (i, k) in pairs], axis=-1)
        weights = np.array([1.0 if i == k else 2.0 for (i, k) in pairs])
        pack_idx = np.zeros((nv, nv), dtype=int)
        idx = 0
        for ai in range(nv):
            for bi in range(ai, nv):
                pack_idx[ai, bi] = idx
                pack_idx[bi, ai] = idx
                idx += 1
        vmat = cache.constitutive.c_spatial[..., pack_idx]
        g_v = np.einsum("cqab,cqb->cqa", vmat, e_v * weights)
        g = np.zeros_like(grad)
        for a_, (i, k) in enumerate(pairs):
            g[..., i, k] = g_v[..., a_]
            g[..., k, i] = g_v[..., a_]
        sig = np.zeros_like(grad)
        for a_, (i, k) in enumerate(pairs):
            sig[..., i, k] = cache.constitutive.sigma[..., a_]
            sig[..., k, i] = cache.constitutive.sigma[..., a_]
        q_t = g + np.einsum("cqil,cqlk->cqik", grad, sig)
        bhat = np.einsum("cqik,cqmk->cqim", q_t, cache.inv_jacobian_deformed)
        bhat *= cache.jxw_times_j[..., None, None]
        loc = fe.hat_integrate_batch(ctx.basis, dim, bhat)
        loc = fe.tensor_to_local(loc, dim, ctx.basis.p + 1)
        return scatter_add(loc, ctx.dofmap.conn, ctx.n_dofs)

    def _vmult_on_the_fly(self, xt):
        ctx = self.ctx
        dim = ctx.dim
        hbar = _ref_gradients(ctx, self.u_bar)   # fresh pass per application
        dgrad = _ref_gradients(ctx, xt)
        shape = hbar.shape[:2]
        hcomp = tn.component_form(hbar.reshape(-1, dim, dim))
        dcomp = tn.component_form(dgrad.reshape(-1, dim, dim))
        params = ctx.qp_params()
        if self.strategy is TangentStrategy.NAIVE:
            lt = mat.full_tangent(params, hcomp)
            g = tn.contract42(lt, dcomp)
        else:
            g = mat.tangent_action(params, hcomp, dcomp)
        g_arr = np.empty(shape + (dim, dim))
        for i in range(dim):
            for k in range(dim):
                g_arr[..., i, k] = g[i, k].reshape(shape)
        loc = fe.integrate_gradients_batch(ctx.basis, dim, g_arr, ctx.geom)
        return scatter_add(loc, ctx.dofmap.conn, ctx.n_dofs)

    # -- assembled baseline ----------------------------------------------

    def _basis_hat_gradients(self):
        """Reference gradients of all scalar basis functions at all qps."""
        ctx = self.ctx
        dim = ctx.dim
        n1 = ctx.basis.p + 1
        n_nodes = n1**dim
        eye = np.eye(n_nodes)
        coeffs = np.zeros((n_nodes, dim * n_nodes))
        for node in range(n_nodes):
            coeffs[node, dim * node] = eye[node, node]  # component 0 only
        a = fe.local_to_tensor(coeffs, dim, n1)
        hat = fe.hat_gradients_batch(ctx.basis, dim, a)
        return hat[:, :, 0, :]  # (n_nodes as cells, nqp, d_hat)

    def assemble_csr(self):
        """Assemble the condensed tangent matrix from the per-point kernel."""
        if self.u_bar is None:
            raise StateNotPrepared("call prepare() first")
        ctx = self.ctx
        dim = ctx.dim
        n1 = ctx.basis.p + 1
        n_nodes = n1**dim
        n_loc = dim * n_nodes
        nqp = ctx.nqp
        n_cells = ctx.level.n_cells

        hbar = _ref_gradients(ctx, self.u_bar)
        hcomp = tn.component_form(hbar.reshape(-1, dim, dim))
        lt = mat.full_tangent(ctx.qp_params(), hcomp)
        lt_arr = np.empty((n_cells, nqp, dim, dim, dim, dim))
        for idx4 in np.ndindex((dim,) * 4):
            lt_arr[(...,) + idx4] = lt[idx4].reshape(n_cells, nqp)

        phi_hat = self._basis_hat_gradients()          # (n_nodes, nqp, d)
        phi_ref = np.einsum("nqm,cmk->cqnk", phi_hat, ctx.geom.inv_jacobian)

        dirichlet = ctx.dofmap.dirichlet_mask
        rows, cols, vals = [], [], []
        chunk = max(1, min(n_cells, 2**20 // (n_loc * n_loc)))
        for c0 in range(0, n_cells, chunk):
            c1 = min(n_cells, c0 + chunk)
            # gradient of local dof (node, comp): delta_{i,comp} dN_node/dX_a
            t1 = np.einsum("cqnb,cqiajb->cqnjia", phi_ref[c0:c1],
                           lt_arr[c0:c1])
            k_cell = np.einsum("cqma,cqnjia,cq->cminj", phi_ref[c0:c1],
                               t1, ctx.geom.jxw[c0:c1])
            # axis order (m, i, n, j) flattens to local dof = dim*node + comp
            k_flat = k_cell.reshape(c1 - c0, n_nodes * dim, n_nodes * dim)
            conn = ctx.dofmap.conn[c0:c1]
            r = np.repeat(conn[:, :, None], n_loc, axis=2)
            cc = np.repeat(conn[:, None, :], n_loc, axis=1)
            keep = ~(dirichlet[r] | dirichlet[cc])
            rows.append(r[keep])
            cols.append(cc[keep])
            vals.append(k_flat[keep])
        n = ctx.n_dofs
        a = sp.coo_matrix(
            (np.concatenate(vals), (np.concatenate(rows),
                                    np.concatenate(cols))),
            shape=(n, n)).tocsr()
        ones = np.zeros(n)
        ones[dirichlet] = 1.0
        return a + sp.diags(ones, format="csr")

    # -- diagonal ---------------------------------------------------------

    def diagonal(self):
        """Exact diagonal of the condensed tangent matrix."""
        self._require()
        ctx = self.ctx
        dim = ctx.dim
        if self.strategy is TangentStrategy.SPARSE_BASELINE:
            return np.asarray(self.csr.diagonal())
        n1 = ctx.basis.p + 1
        n_nodes = n1**dim
        phi_hat = self._basis_hat_gradients()
        if self.strategy is TangentStrategy.STORE:
            cache = self.cache
            phi_sp = np.einsum("nqm,cqmk->cqnk", phi_hat,
                               cache.inv_jacobian_deformed)
            pairs = tn.VOIGT_PAIRS[dim]
            nv = len(pairs)
            pack_idx = np.zeros((nv, nv), dtype=int)
            idx = 0
            for ai in range(nv):
                for bi in range(ai, nv):
                    pack_idx[ai, bi] = idx
                    pack_idx[bi, ai] = idx
                    idx += 1
            vmat = cache.constitutive.c_spatial[..., pack_idx]
            c4 = np.empty(vmat.shape[:2] + (dim, dim, dim, dim))
            for a_, (i, k) in enumerate(pairs):
                for b_, (l, m) in enumerate(pairs):
                    v = vmat[..., a_, b_]
                    c4[..., i, k, l, m] = v
                    c4[..., k, i, l, m] = v
                    c4[..., i, k, m, l] = v
                    c4[..., k, i, m, l] = v
            sig = np.zeros(vmat.shape[:2] + (dim, dim))
            for a_, (i, k) in enumerate(pairs):
                sig[..., i, k] = cache.constitutive.sigma[..., a_]
                sig[..., k, i] = cache.constitutive.sigma[..., a_]
            # unit local vector (node, comp): spatial gradient tensor is
            # e_comp outer dN_node; material part picks the symmetrized one
            mat_part = np.einsum("cqna,cqiakb,cqnb->cqnik", phi_sp, c4,
                                 phi_sp)
            geo = np.einsum("cqna,cqab,cqnb->cqn", phi_sp, sig, phi_sp)
            w = cache.jxw_times_j
            diag_nodes = np.einsum("cq,cqnii->cni", w,
                                   mat_part) + np.einsum(
                "cq,cqn->cn", w, geo)[..., None]
            loc = diag_nodes.reshape(-1, n_nodes * dim)
        else:
            hbar = _ref_gradients(ctx, self.u_bar)
            hcomp = tn.component_form(
                hbar.reshape(-1, dim, dim))
            lt = mat.full_tangent(ctx.qp_params(), hcomp)
            n_cells = ctx.level.n_cells
            lt_arr = np.empty((n_cells, ctx.nqp, dim, dim, dim, dim))
            for idx4 in np.ndindex((dim,) * 4):
                lt_arr[(...,) + idx4] = lt[idx4].reshape(n_cells, ctx.nqp)
            phi_ref = np.einsum("nqm,cmk->cqnk", phi_hat,
                                ctx.geom.inv_jacobian)
            diag_nodes = np.einsum("cqna,cqiaib,cqnb,cq->cni", phi_ref,
                                   lt_arr, phi_ref, ctx.geom.jxw)
            loc = diag_nodes.reshape(-1, n_nodes * dim)
        d = scatter_add(loc, ctx.dofmap.conn, ctx.n_dofs)
        d[ctx.dofmap.dirichlet_mask] = 1.0
        return d

    # -- storage accounting ----------------------------------------------

    def storage_bytes(self):
        """(constitutive, geometry+matrix) byte counts of the prepared state."""
        self._require()
        if self.strategy is TangentStrategy.STORE:
            return self.cache.constitutive_bytes(), self.cache.geometry_bytes()
        if self.strategy is TangentStrategy.SPARSE_BASELINE:
            extra = (self.csr.data.nbytes + self.csr.indices.nbytes
                     + self.csr.indptr.nbytes)
            return 0, extra
        return 0, self.ctx.geometry_bytes()


# -- generic per-point bodies (operation census and reference) -----------


def qp_body_naive(params, hbar_t, dh_t):
    """Quadrature-point body of the naive strategy on generic scalars."""
    lt = mat.full_tangent(params, hbar_t)
    return tn.contract42(lt, dh_t)


def qp_body_recompute(params, hbar_t, dh_t):
    """Quadrature-point body of the on-the-fly strategy."""
    return mat.tangent_action(params, hbar_t, dh_t)


def qp_body_store(c_packed, sigma_v, m_map, wj, hat_grad, d):
    """Quadrature-point body of the partial-assembly strategy.

    Mirrors the compiled kernel: map reference-cell gradients to spatial
    ones, apply the cached tangent and stress, scale by the effective
    measure, and map back to the reference-cell dual.
    """
    grad = np.empty((d, d), dtype=object)
    for i in range(d):
        for k in range(d):
            s = hat_grad[i, 0] * m_map[0, k]
            for m in range(1, d):
                s = s + hat_grad[i, m] * m_map[m, k]
            grad[i, k] = s
    eps_v = tn.sym2_to_voigt(grad)
    g_v = tn.sym_apply(c_packed, eps_v, d)
    g = tn.voigt_to_sym2(g_v, d)
    sig = tn.voigt_to_sym2(sigma_v, d)
    q_t = np.empty((d, d), dtype=object)
    for i in range(d):
        for k in range(d):
            s = g[i, k] + grad[i, 0] * sig[0, k]
            for l in range(1, d):
                s = s + grad[i, l] * sig[l, k]
            q_t[i, k] = s
    out = np.empty((d, d), dtype=object)
    for i in range(d):
        for m in range(d):
            s = q_t[i, 0] * m_map[m, 0]
            for k in range(1, d):
                s = s + q_t[i, k] * m_map[m, k]
            out[i, m] = wj * s
    return out
