import numpy as np
import pytest

from mfelast import autodiff as ad
from mfelast.counting import CountingScalar, OpCounter


def nh_energy_flat(xs):
    """Compressible neo-Hookean energy over the 9 entries of F (3D)."""
    mu, lam = 2.0, 3.0
    f = [[xs[3 * i + j] for j in range(3)] for i in range(3)]
    det = (f[0][0] * (f[1][1] * f[2][2] - f[1][2] * f[2][1])
           - f[0][1] * (f[1][0] * f[2][2] - f[1][2] * f[2][0])
           + f[0][2] * (f[1][0] * f[2][1] - f[1][1] * f[2][0]))
    trc = sum(f[i][j] * f[i][j] for i in range(3) for j in range(3))
    lj = ad.log(det)
    return 0.5 * mu * (trc - 3.0 - 2.0 * lj) + lam * lj * lj


def random_f_flat(rng, scale=0.2):
    f = np.eye(3) + scale * rng.uniform(-1, 1, (3, 3))
    assert np.linalg.det(f) > 0
    return list(f.ravel())


def fd_gradient(fn, x, h=1e-6):
    g = np.zeros(len(x))
    for i in range(len(x)):
        xp = list(x)
        xm = list(x)
        xp[i] += h
        xm[i] -= h
        g[i] = (fn(xp) - fn(xm)) / (2 * h)
    return g


class TestGradient:
    def test_quadratic(self):
        val, grad = ad.gradient(lambda xs: xs[0] * xs[0] + xs[1] * xs[1]
                                + xs[2] * xs[2], [1.0, 2.0, 3.0])
        assert val == 14.0
        assert grad == [2.0, 4.0, 6.0]

    def test_log(self):
        val, grad = ad.gradient(lambda xs: ad.log(xs[0]), [1.0])
        assert val == 0.0
        assert grad == [1.0]

    def test_nh_energy_vs_fd(self):
        rng = np.random.default_rng(21)
        for _ in range(5):
            x = random_f_flat(rng)
            val, grad = ad.gradient(nh_energy_flat, x)
            fd = fd_gradient(nh_energy_flat, x)
            assert np.allclose(grad, fd, rtol=1e-6, atol=1e-8)

    def test_domain_error(self):
        with pytest.raises(ad.DomainError):
            ad.gradient(lambda xs: ad.log(xs[0]), [-1.0])


class TestSeededHvp:
    def test_identity_hessian(self):
        rng = np.random.default_rng(22)
        x = list(rng.standard_normal(4))
        v = list(rng.standard_normal(4))
        _, _, hvp = ad.seeded_hvp(
            lambda xs: 0.5 * sum(t * t for t in xs), x, v)
        assert np.allclose(hvp, v, atol=1e-15)

    def test_off_diagonal_hessian(self):
        _, _, hvp = ad.seeded_hvp(lambda xs: xs[0] * xs[1],
                                  [2.0, 5.0], [1.0, 0.0])
        assert hvp == [0.0, 1.0]

    def test_nh_energy_vs_fd_of_gradient(self):
        rng = np.random.default_rng(23)
        h = 1e-6
        for _ in range(5):
            x = np.array(random_f_flat(rng))
            v = rng.standard_normal(9)
            _, _, hvp = ad.seeded_hvp(nh_energy_flat, list(x), list(v))
            _, gp = ad.gradient(nh_energy_flat, list(x + h * v))
            _, gm = ad.gradient(nh_energy_flat, list(x - h * v))
            fd = (np.array(gp) - np.array(gm)) / (2 * h)
            scale = np.max(np.abs(fd))
            assert np.allclose(hvp, fd, rtol=1e-5, atol=1e-5 * scale)

    def test_seed_linearity(self):
        rng = np.random.default_rng(24)
        x = random_f_flat(rng)
        v = rng.standard_normal(9)
        w = rng.standard_normal(9)
        a, b = 0.7, -1.3
        _, _, hv = ad.seeded_hvp(nh_energy_flat, x, list(v))
        _, _, hw = ad.seeded_hvp(nh_energy_flat, x, list(w))
        _, _, hc = ad.seeded_hvp(nh_energy_flat, x, list(a * v + b * w))
        combo = a * np.array(hv) + b * np.array(hw)
        assert np.allclose(hc, combo, rtol=1e-12,
                           atol=1e-12 * np.max(np.abs(combo)))

    def test_symmetry_of_hvp(self):
        rng = np.random.default_rng(25)
        x = random_f_flat(rng)
        v = rng.standard_normal(9)
        w = rng.standard_normal(9)
        _, _, hv = ad.seeded_hvp(nh_energy_flat, x, list(v))
        _, _, hw = ad.seeded_hvp(nh_energy_flat, x, list(w))
        lhs = float(w @ np.array(hv))
        rhs = float(v @ np.array(hw))
        assert abs(lhs - rhs) <= 1e-12 * max(abs(lhs), 1.0)

    def test_value_grad_bitwise_match_gradient(self):
        rng = np.random.default_rng(26)
        x = random_f_flat(rng)
        v = list(rng.standard_normal(9))
        val_g, grad_g = ad.gradient(nh_energy_flat, x)
        val_h, grad_h, _ = ad.seeded_hvp(nh_energy_flat, x, v)
        assert val_g == val_h
        assert all(a == b for a, b in zip(grad_g, grad_h))


class TestFullHessian:
    def test_diagonal_quadratic(self):
        _, _, hess = ad.full_hessian(
            lambda xs: 0.5 * (xs[0] * xs[0] + 2.0 * xs[1] * xs[1]
                              + 3.0 * xs[2] * xs[2]),
            [1.0, 1.0, 1.0])
        assert np.allclose(np.array(hess), np.diag([1.0, 2.0, 3.0]), atol=0)

    def test_off_diagonal(self):
        _, _, hess = ad.full_hessian(lambda xs: xs[0] * xs[1], [3.0, 4.0])
        assert np.array_equal(np.array(hess), [[0.0, 1.0], [1.0, 0.0]])

    def test_columns_match_seeded_hvp_exactly(self):
        rng = np.random.default_rng(27)
        x = random_f_flat(rng)
        _, _, hess = ad.full_hessian(nh_energy_flat, x)
        for i in range(9):
            e = [0.0] * 9
            e[i] = 1.0
            _, _, hvp = ad.seeded_hvp(nh_energy_flat, x, e)
            col = [hess[j][i] for j in range(9)]
            assert col == hvp

    def test_symmetry(self):
        rng = np.random.default_rng(28)
        x = random_f_flat(rng)
        _, _, hess = ad.full_hessian(nh_energy_flat, x)
        h = np.array(hess)
        assert np.max(np.abs(h - h.T)) <= 1e-12 * np.max(np.abs(h))


class TestArrayPayloads:
    def test_batched_gradient_matches_scalar(self):
        rng = np.random.default_rng(29)
        xs = [random_f_flat(rng) for _ in range(6)]
        batch = [np.array([x[i] for x in xs]) for i in range(9)]
        val_b, grad_b = ad.gradient(nh_energy_flat, batch)
        for q, x in enumerate(xs):
            val_s, grad_s = ad.gradient(nh_energy_flat, x)
            assert val_b[q] == val_s
            for i in range(9):
                assert grad_b[i][q] == grad_s[i]


class TestCountingScalar:
    def test_bitwise_identical_to_floats(self):
        rng = np.random.default_rng(30)
        x = random_f_flat(rng)
        counter = OpCounter()
        wrapped = [CountingScalar(v, counter) for v in x]
        plain = nh_energy_flat(x)
        counted = nh_energy_flat(wrapped)
        assert counted.value == plain
        assert counter.total > 0

    def test_counts_through_jets(self):
        rng = np.random.default_rng(31)
        x = random_f_flat(rng)
        counter = OpCounter()
        wrapped = [CountingScalar(v, counter) for v in x]
        val, grad = ad.gradient(nh_energy_flat, wrapped)
        plain_val, plain_grad = ad.gradient(nh_energy_flat, x)
        assert val.value == plain_val
        grad_ops = counter.total
        assert grad_ops > 0
        counter.reset()
        v = [CountingScalar(t, counter) for t in rng.standard_normal(9)]
        ad.seeded_hvp(nh_energy_flat, wrapped, v)
        assert counter.total > grad_ops

    def test_op_kinds(self):
        counter = OpCounter()
        a = CountingScalar(2.0, counter)
        b = CountingScalar(3.0, counter)
        _ = a + b
        _ = a * b
        _ = a / b
        _ = a.log()
        assert (counter.adds, counter.muls, counter.divs, counter.funcs) == \
            (1, 1, 1, 1)
