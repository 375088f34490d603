import numpy as np
import pytest

from mfelast import fespace as fe
from mfelast import materials as mat
from mfelast import meshes as msh
from mfelast import operators as op
from mfelast import tensors as tn
from mfelast.counting import CountingScalar, OpCounter

MU, NU = 0.4225e6, 0.3


def make_ctx(dim, p, n0=2, model=mat.Model.COMPRESSIBLE, contrast=100.0,
             mu=MU, extent=1000.0, traction_scale=12.5e3):
    hier = msh.build_hierarchy(dim, n0, 0, extent=extent)
    base = mat.MaterialParams.from_shear_poisson(mu, NU, model)
    traction = np.zeros(dim)
    traction[0] = traction_scale
    return op.build_level_context(hier.levels[0], p,
                                  {0: base, 1: base.scaled(contrast)},
                                  traction)


def random_state(ctx, rng, bound=0.15):
    u = rng.standard_normal(ctx.n_dofs)
    u[ctx.dofmap.dirichlet_mask] = 0.0
    h = op._ref_gradients(ctx, u)
    u *= bound / np.max(np.abs(h))
    return u


def random_direction(ctx, rng):
    x = rng.standard_normal(ctx.n_dofs)
    x[ctx.dofmap.dirichlet_mask] = 0.0
    return x


def rel(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(a),
                                       np.linalg.norm(b), 1e-300)


class TestResidual:
    def test_zero_state_zero_load(self):
        ctx = make_ctx(2, 2)
        r = op.residual(ctx, np.zeros(ctx.n_dofs), 0.0)
        assert np.max(np.abs(r)) == 0.0

    @pytest.mark.parametrize("dim,p", [(2, 2), (3, 1)])
    def test_energy_fd_oracle(self, dim, p):
        # normalized units: the h = 1e-6 quotient needs energies of order one
        ctx = make_ctx(dim, p, mu=2.0, extent=2.0, traction_scale=0.1)
        rng = np.random.default_rng(80)
        u = random_state(ctx, rng, bound=0.05)
        r = op.residual(ctx, u, 0.0)
        h = 1e-6
        free = np.nonzero(ctx.dofmap.free_mask)[0]
        sample = rng.choice(free, size=min(60, len(free)), replace=False)
        for i in sample:
            e = np.zeros(ctx.n_dofs)
            e[i] = h
            fd = (op.total_energy(ctx, u + e, 0.0)
                  - op.total_energy(ctx, u - e, 0.0)) / (2 * h)
            assert abs(r[i] - fd) <= 1e-5 * max(abs(fd), 1e-4 * np.max(
                np.abs(r)))

    @pytest.mark.parametrize("dim", [2, 3])
    def test_traction_face_quadrature_oracle(self, dim):
        ctx = make_ctx(dim, 3 if dim == 2 else 2)
        r = op.residual(ctx, np.zeros(ctx.n_dofs), 1.0)
        # independent oracle: explicit face quadrature with a richer rule
        level, dm, basis = ctx.level, ctx.dofmap, ctx.basis
        n1 = basis.p + 1
        h = level.h
        qp, qw = fe.gauss_1d(basis.q + 3)
        vals, _ = fe._lagrange_tables(basis.nodes, qp)
        want = np.zeros(ctx.n_dofs)
        top = level.boundary_faces[level.boundary_faces[:, 2]
                                   == msh.BoundaryTag.NEUMANN_TOP]
        for cell, _, _ in top:
            conn = dm.conn[cell]
            if dim == 2:
                for lx in range(n1):
                    node = basis.p * n1 + lx
                    wint = float(qw @ vals[:, lx]) * h
                    for comp in range(dim):
                        want[conn[dim * node + comp]] += \
                            ctx.traction[comp] * wint
            else:
                for lz in range(n1):
                    for lx in range(n1):
                        node = (lz * n1 + basis.p) * n1 + lx
                        wint = float(qw @ vals[:, lx]) * float(
                            qw @ vals[:, lz]) * h * h
                        for comp in range(dim):
                            want[conn[dim * node + comp]] += \
                                ctx.traction[comp] * wint
        want[dm.dirichlet_mask] = 0.0
        assert rel(r, -want) <= 1e-12

    def test_nonpositive_jacobian_propagates(self):
        ctx = make_ctx(2, 1)
        u = np.zeros(ctx.n_dofs)
        # crush the cells: displacement gradient below -1 flips orientation
        u[0::2] = -2.0 * ctx.dofmap.support_points[:, 0]
        with pytest.raises(mat.NonPositiveJacobian):
            op.residual(ctx, u, 0.0)


CONFIGS = [(2, 1), (2, 2), (2, 3), (3, 1), (3, 2)]


class TestVmult:
    def test_zero_input(self):
        ctx = make_ctx(2, 2)
        o = op.TangentOperator(ctx, op.TangentStrategy.STORE)
        o.prepare(np.zeros(ctx.n_dofs))
        assert np.max(np.abs(o.vmult(np.zeros(ctx.n_dofs)))) == 0.0

    @pytest.mark.parametrize("dim,p", CONFIGS)
    def test_strategy_equivalence(self, dim, p):
        ctx = make_ctx(dim, p)
        rng = np.random.default_rng(81)
        u = random_state(ctx, rng)
        x = random_direction(ctx, rng)
        outs = []
        for strat in op.TangentStrategy:
            o = op.TangentOperator(ctx, strat)
            o.prepare(u)
            outs.append(o.vmult(x))
        for a in range(len(outs)):
            for b in range(a + 1, len(outs)):
                assert rel(outs[a], outs[b]) <= 1e-10

    @pytest.mark.parametrize("dim,p", [(2, 2), (3, 1)])
    def test_fd_oracle(self, dim, p):
        ctx = make_ctx(dim, p)
        rng = np.random.default_rng(82)
        u = random_state(ctx, rng)
        x = random_direction(ctx, rng)
        o = op.TangentOperator(ctx, op.TangentStrategy.RECOMPUTE)
        o.prepare(u)
        h = 1e-6
        fd = (op.residual(ctx, u + h * x, 0.4)
              - op.residual(ctx, u - h * x, 0.4)) / (2 * h)
        assert rel(o.vmult(x), fd) <= 1e-5

    @pytest.mark.parametrize("strat", list(op.TangentStrategy))
    def test_operator_symmetry(self, strat):
        ctx = make_ctx(2, 2)
        rng = np.random.default_rng(83)
        u = random_state(ctx, rng)
        o = op.TangentOperator(ctx, strat)
        o.prepare(u)
        x = random_direction(ctx, rng)
        y = random_direction(ctx, rng)
        lhs = float(x @ o.vmult(y))
        rhs = float(y @ o.vmult(x))
        assert abs(lhs - rhs) <= 1e-10 * max(abs(lhs), abs(rhs))

    def test_determinism_bitwise(self):
        ctx = make_ctx(2, 3)
        rng = np.random.default_rng(84)
        u = random_state(ctx, rng)
        x = random_direction(ctx, rng)
        for strat in op.TangentStrategy:
            o = op.TangentOperator(ctx, strat)
            o.prepare(u)
            a = o.vmult(x)
            b = o.vmult(x)
            assert np.array_equal(a, b)

    def test_store_numpy_fallback_matches_kernel(self):
        for dim, p in ((2, 2), (3, 1)):
            ctx = make_ctx(dim, p)
            rng = np.random.default_rng(85)
            u = random_state(ctx, rng)
            x = random_direction(ctx, rng)
            o = op.TangentOperator(ctx, op.TangentStrategy.STORE)
            o.prepare(u)
            fast = o._vmult_store(np.where(ctx.dofmap.free_mask, x, 0.0))
            ref = o._vmult_store_numpy(np.where(ctx.dofmap.free_mask, x, 0.0))
            assert rel(fast, ref) <= 1e-13

    def test_workers_deterministic_merge(self):
        ctx = make_ctx(2, 2, n0=3)
        rng = np.random.default_rng(86)
        u = random_state(ctx, rng)
        x = random_direction(ctx, rng)
        single = op.TangentOperator(ctx, op.TangentStrategy.STORE)
        single.prepare(u)
        multi = op.TangentOperator(ctx, op.TangentStrategy.STORE, workers=3)
        multi.prepare(u)
        a = multi.vmult(x)
        b = multi.vmult(x)
        assert np.array_equal(a, b)
        assert rel(a, single.vmult(x)) <= 1e-13

    def test_dirichlet_identity(self):
        ctx = make_ctx(2, 1)
        rng = np.random.default_rng(87)
        u = random_state(ctx, rng)
        x = rng.standard_normal(ctx.n_dofs)  # nonzero on constrained dofs
        for strat in op.TangentStrategy:
            o = op.TangentOperator(ctx, strat)
            o.prepare(u)
            y = o.vmult(x)
            mask = ctx.dofmap.dirichlet_mask
            assert np.array_equal(y[mask], x[mask])

    def test_state_not_prepared(self):
        ctx = make_ctx(2, 1)
        o = op.TangentOperator(ctx, op.TangentStrategy.STORE)
        with pytest.raises(op.StateNotPrepared):
            o.vmult(np.zeros(ctx.n_dofs))
        with pytest.raises(op.StateNotPrepared):
            o.diagonal()


class TestPrepare:
    def test_zero_state_zero_stress(self):
        ctx = make_ctx(3, 1)
        o = op.TangentOperator(ctx, op.TangentStrategy.STORE)
        o.prepare(np.zeros(ctx.n_dofs))
        assert np.max(np.abs(o.cache.constitutive.sigma)) < 1e-12

    def test_cache_byte_accounting(self):
        ctx = make_ctx(3, 1)
        o = op.TangentOperator(ctx, op.TangentStrategy.STORE)
        o.prepare(np.zeros(ctx.n_dofs))
        n_qp = ctx.level.n_cells * ctx.nqp
        constitutive, _ = o.storage_bytes()
        assert constitutive == 27 * 8 * n_qp
        ctx2 = make_ctx(2, 1)
        o2 = op.TangentOperator(ctx2, op.TangentStrategy.STORE)
        o2.prepare(np.zeros(ctx2.n_dofs))
        assert o2.storage_bytes()[0] == 9 * 8 * ctx2.level.n_cells * ctx2.nqp

    def test_rebuild_after_state_change(self):
        ctx = make_ctx(2, 2)
        rng = np.random.default_rng(88)
        u1 = random_state(ctx, rng)
        u2 = random_state(ctx, rng)
        x = random_direction(ctx, rng)
        store = op.TangentOperator(ctx, op.TangentStrategy.STORE)
        ref = op.TangentOperator(ctx, op.TangentStrategy.NAIVE)
        for u in (u1, u2):
            store.prepare(u)
            ref.prepare(u)
            assert rel(store.vmult(x), ref.vmult(x)) <= 1e-10


class TestAssembleCsr:
    @pytest.mark.parametrize("dim,p", [(2, 2), (3, 1)])
    def test_spmv_matches_vmult(self, dim, p):
        ctx = make_ctx(dim, p)
        rng = np.random.default_rng(89)
        u = random_state(ctx, rng)
        naive = op.TangentOperator(ctx, op.TangentStrategy.NAIVE)
        naive.prepare(u)
        a = naive.assemble_csr()
        for _ in range(3):
            x = random_direction(ctx, rng)
            assert rel(a @ x, naive.vmult(x)) <= 1e-10

    def test_symmetry(self):
        ctx = make_ctx(2, 2)
        rng = np.random.default_rng(90)
        o = op.TangentOperator(ctx, op.TangentStrategy.SPARSE_BASELINE)
        o.prepare(random_state(ctx, rng))
        diff = (o.csr - o.csr.T).toarray()
        assert np.max(np.abs(diff)) <= 1e-10 * np.max(np.abs(o.csr.toarray()))

    def test_small_strain_oracle_at_zero(self):
        # independent assembler from the closed-form identity-state tangent
        ctx = make_ctx(2, 1, contrast=1.0)
        o = op.TangentOperator(ctx, op.TangentStrategy.SPARSE_BASELINE)
        o.prepare(np.zeros(ctx.n_dofs))
        got = o.csr.toarray()

        lam2 = 2.0 * ctx.lam_cells[0]
        mu = ctx.mu_cells[0]
        eye = np.eye(2)
        lt = np.zeros((2, 2, 2, 2))
        for i in range(2):
            for a in range(2):
                for j in range(2):
                    for b in range(2):
                        lt[i, a, j, b] = (mu * (eye[i, j] * eye[a, b]
                                                + eye[i, b] * eye[j, a])
                                          + lam2 * eye[i, a] * eye[j, b])
        n = ctx.n_dofs
        want = np.zeros((n, n))
        basis, dm, geom = ctx.basis, ctx.dofmap, ctx.geom
        inv = [list(row) for row in geom.inv_jacobian[0]]
        n_loc = 2 * (basis.p + 1) ** 2
        for c in range(ctx.level.n_cells):
            grads = []
            for l in range(n_loc):
                e = [0.0] * n_loc
                e[l] = 1.0
                grads.append(np.array(fe.evaluate_gradients_cell_naive(
                    basis, 2, e, inv), dtype=float))
            for l1 in range(n_loc):
                for l2 in range(n_loc):
                    acc = 0.0
                    for qp in range(ctx.nqp):
                        acc += geom.jxw[c, qp] * np.einsum(
                            "ia,iajb,jb->", grads[l1][qp], lt, grads[l2][qp])
                    want[dm.conn[c, l1], dm.conn[c, l2]] += acc
        mask = dm.dirichlet_mask
        want[mask, :] = 0.0
        want[:, mask] = 0.0
        want[mask, mask] = 1.0
        assert np.allclose(got, want, rtol=1e-10,
                           atol=1e-10 * np.max(np.abs(want)))


class TestDiagonal:
    @pytest.mark.parametrize("dim,p", [(2, 2), (3, 1)])
    def test_matches_csr_diagonal(self, dim, p):
        ctx = make_ctx(dim, p)
        rng = np.random.default_rng(91)
        u = random_state(ctx, rng)
        sparse = op.TangentOperator(ctx, op.TangentStrategy.SPARSE_BASELINE)
        sparse.prepare(u)
        want = sparse.diagonal()
        for strat in op.MATRIX_FREE_STRATEGIES:
            o = op.TangentOperator(ctx, strat)
            o.prepare(u)
            got = o.diagonal()
            assert rel(got, want) <= 1e-12

    def test_positive_at_zero_state(self):
        ctx = make_ctx(2, 2)
        o = op.TangentOperator(ctx, op.TangentStrategy.STORE)
        o.prepare(np.zeros(ctx.n_dofs))
        assert np.all(o.diagonal() > 0)


class TestQpBodies:
    def test_store_body_matches_cached_apply(self):
        # the generic per-point body reproduces the compiled kernel's math
        ctx = make_ctx(2, 1)
        rng = np.random.default_rng(92)
        u = random_state(ctx, rng)
        o = op.TangentOperator(ctx, op.TangentStrategy.STORE)
        o.prepare(u)
        c, qp = 1, 2
        cache = o.cache
        hat = rng.standard_normal((2, 2))
        out = op.qp_body_store(
            cache.constitutive.c_spatial[c, qp].astype(float),
            cache.constitutive.sigma[c, qp].astype(float),
            cache.inv_jacobian_deformed[c, qp], cache.jxw_times_j[c, qp],
            tn.component_form(hat[None])[()] if False else
            np.array([[hat[0, 0], hat[0, 1]], [hat[1, 0], hat[1, 1]]],
                     dtype=object),
            2)
        # oracle: naive body mapped through the configuration change
        params = mat.MaterialParams(ctx.mu_cells[c], ctx.lam_cells[c],
                                    ctx.kappa_cells[c], ctx.model)
        hbar = op._ref_gradients(ctx, u)[c, qp]
        inv_ref = ctx.geom.inv_jacobian[c]
        dh_ref = hat @ inv_ref  # reference gradient of the probe direction
        g_ref = np.array(mat.tangent_action(
            params, hbar, dh_ref).tolist(), dtype=float)
        want = ctx.geom.jxw[c, qp] * g_ref @ inv_ref.T
        got = np.array(out.tolist(), dtype=float)
        assert np.allclose(got, want, rtol=1e-10)

    def test_bodies_run_with_counting_scalars(self):
        d = 3
        rng = np.random.default_rng(93)
        params_f = mat.MaterialParams.from_shear_poisson(2.0, 0.3)
        h = 0.1 * rng.standard_normal((d, d))
        dh = rng.standard_normal((d, d))
        counts = {}
        for name, body in (("naive", op.qp_body_naive),
                           ("recompute", op.qp_body_recompute)):
            counter = OpCounter()
            params = mat.MaterialParams(
                CountingScalar(params_f.mu, counter),
                CountingScalar(params_f.lam, counter),
                CountingScalar(params_f.kappa, counter), params_f.model)
            hw = np.array([[CountingScalar(v, counter) for v in row]
                           for row in h], dtype=object)
            dw = np.array([[CountingScalar(v, counter) for v in row]
                           for row in dh], dtype=object)
            body(params, hw, dw)
            counts[name] = counter.total
        assert 0 < counts["recompute"] < counts["naive"]
