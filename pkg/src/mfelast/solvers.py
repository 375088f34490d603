"""Newton / CG / Chebyshev / geometric multigrid solution pipeline.

The linear solver is conjugate gradients preconditioned by one V-cycle of
geometric multigrid over the nested mesh hierarchy.  Level operators are
the tangent at the current Newton iterate transferred to each level;
smoothing is a fixed-degree Chebyshev iteration on the Jacobi-preconditioned
operator, with the upper spectral edge estimated by Lanczos.  The coarsest
level is solved directly (dense factorization) below a size threshold.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from . import operators as op_mod
from .materials import NonPositiveJacobian
from .operators import TangentOperator, TangentStrategy, residual, total_energy

__all__ = [
    "MaxIterations",
    "NewtonDiverged",
    "SolverConfig",
    "cg_solve",
    "chebyshev_smooth",
    "estimate_lambda_max",
    "TransferOperator",
    "build_transfer",
    "MgLevelData",
    "MultigridPreconditioner",
    "build_multigrid",
    "NewtonLog",
    "newton_solve",
]


class MaxIterations(RuntimeError):
    """Iterative solver exhausted its iteration budget."""


class NewtonDiverged(RuntimeError):
    """Newton loop exceeded max iterations or the line search failed."""


@dataclass
class SolverConfig:
    newton_disp_tol: float = 1e-5    # RMS of the accepted update [mm]
    newton_res_tol: float = 1e-8     # force norm, relative to step start
    linear_rel_tol: float = 1e-6
    load_steps: int = 5
    max_newton: int = 20
    cheb_degree: int = 4
    cg_max_iter: int = 1000
    lanczos_iters: int = 12
    lambda_safety: float = 1.1
    smoother_range_divisor: float = 15.0
    coarse_direct_max: int = 2000
    line_search: bool = True
    max_line_search: int = 10
    workers: int = 1


def cg_solve(op_apply, prec_apply, b, rel_tol, max_iter=1000):
    """Preconditioned conjugate gradients down to ||b - A x|| <= rel_tol ||b||.

    Returns (x, iterations).  Raises MaxIterations on budget exhaustion.
    """
    b = np.asarray(b, dtype=float)
    norm_b = np.linalg.norm(b)
    x = np.zeros_like(b)
    if norm_b == 0.0:
        return x, 0
    r = b.copy()
    z = prec_apply(r)
    p = z.copy()
    rz = float(r @ z)
    for k in range(1, max_iter + 1):
        ap = op_apply(p)
        alpha = rz / float(p @ ap)
        x += alpha * p
        r -= alpha * ap
        if np.linalg.norm(r) <= rel_tol * norm_b:
            return x, k
        z = prec_apply(r)
        rz_new = float(r @ z)
        p = z + (rz_new / rz) * p
        rz = rz_new
    raise MaxIterations(f"CG did not reach {rel_tol} in {max_iter} iterations")


def chebyshev_smooth(op_apply, inv_diag, x, b, degree, lam_min, lam_max):
    """Degree-k Chebyshev iteration on the Jacobi-preconditioned operator.

    Damps error components with D^-1 A eigenvalues in [lam_min, lam_max];
    exact solutions are fixed points.
    """
    theta = 0.5 * (lam_max + lam_min)
    delta = 0.5 * (lam_max - lam_min)
    sigma = theta / delta
    rho_old = 1.0 / sigma
    x = np.array(x, dtype=float, copy=True)
    r = b - op_apply(x)
    dx = (inv_diag * r) / theta
    x += dx
    for _ in range(1, degree):
        rho = 1.0 / (2.0 * sigma - rho_old)
        r -= op_apply(dx)
        dx = (rho * rho_old) * dx + (2.0 * rho / delta) * (inv_diag * r)
        x += dx
        rho_old = rho
    return x


def _lanczos_start(n):
    # fixed, aperiodic start vector: deterministic estimates
    v = 1.0 + 0.5 * np.sin(0.7 * np.arange(n) + 0.3)
    return v / np.linalg.norm(v)


def estimate_lambda_max(op_apply, diag, iters=12, safety=1.1):
    """Upper bound estimate of the D^-1 A spectrum via Lanczos.

    Runs on the symmetrized D^-1/2 A D^-1/2 with full reorthogonalization
    (the iteration count is small), then applies the safety factor.
    """
    d_isqrt = 1.0 / np.sqrt(diag)
    n = len(diag)
    m = min(iters, n)
    v = _lanczos_start(n)
    basis = [v]
    alphas, betas = [], []
    for _ in range(m):
        w = d_isqrt * op_apply(d_isqrt * basis[-1])
        a = float(basis[-1] @ w)
        alphas.append(a)
        for q in basis:  # full reorthogonalization
            w -= (q @ w) * q
        nb = np.linalg.norm(w)
        if nb < 1e-12:
            break
        betas.append(nb)
        basis.append(w / nb)
    if len(alphas) == 1:
        lam = alphas[0]
    else:
        lam = scipy.linalg.eigvalsh_tridiagonal(
            np.array(alphas), np.array(betas[: len(alphas) - 1]))[-1]
    return safety * float(lam)


# --- transfers ----------------------------------------------------------


def _prolongation_1d(p, nc_coarse):
    """1D embedding of degree-p nodes from nc to 2 nc cells."""
    from .fespace import _lagrange_tables

    n_coarse = p * nc_coarse + 1
    n_fine = 2 * p * nc_coarse + 1
    nodes = np.linspace(0.0, 1.0, p + 1)
    rows, cols, vals = [], [], []
    for gf in range(n_fine):
        s = gf / (2.0 * p)                # position in coarse-cell units
        cell = min(int(np.floor(s + 1e-12)), nc_coarse - 1)
        xhat = s - cell
        values, _ = _lagrange_tables(nodes, np.array([xhat]))
        for j in range(p + 1):
            w = values[0, j]
            if abs(w) > 1e-14:
                rows.append(gf)
                cols.append(cell * p + j)
                vals.append(w)
    return sp.csr_matrix((vals, (rows, cols)), shape=(n_fine, n_coarse))


@dataclass
class TransferOperator:
    """Prolongation between consecutive levels; restriction is its transpose."""

    p_mat: sp.csr_matrix       # (n_fine_dofs, n_coarse_dofs)
    inject_weights: np.ndarray  # column sums of p_mat, for state transfer

    def prolongate(self, v_coarse):
        return self.p_mat @ v_coarse

    def restrict(self, v_fine):
        return self.p_mat.T @ v_fine

    def inject_state(self, u_fine):
        """Weighted injection of a fine state to the coarse space."""
        return (self.p_mat.T @ u_fine) / self.inject_weights


def build_transfer(dim, p, nc_coarse) -> TransferOperator:
    p1d = _prolongation_1d(p, nc_coarse)
    p_node = p1d
    for _ in range(dim - 1):
        p_node = sp.kron(p1d, p_node, format="csr")  # earlier factor: slower axis
    p_vec = sp.kron(p_node, sp.identity(dim, format="csr"), format="csr")
    w = np.asarray(p_vec.sum(axis=0)).ravel()
    w[np.abs(w) < 1e-12] = 1.0
    return TransferOperator(p_vec, w)


# --- multigrid ----------------------------------------------------------


@dataclass
class MgLevelData:
    operator: TangentOperator
    inv_diag: np.ndarray
    lam_max: float
    dirichlet: np.ndarray


@dataclass
class MultigridPreconditioner:
    levels: list              # MgLevelData, index 0 = coarsest
    transfers: list           # TransferOperator, entry l maps l <-> l+1
    config: SolverConfig
    coarse_factor: object = None
    coarse_inv_diag: np.ndarray | None = None

    def __post_init__(self):
        coarse = self.levels[0]
        n = coarse.operator.n_dofs
        if n <= self.config.coarse_direct_max:
            a = coarse.operator.assemble_csr().toarray()
            self.coarse_factor = scipy.linalg.cho_factor(a)
        else:
            self.coarse_inv_diag = coarse.inv_diag

    def _coarse_solve(self, b):
        if self.coarse_factor is not None:
            return scipy.linalg.cho_solve(self.coarse_factor, b)
        x, _ = cg_solve(self.levels[0].operator.vmult,
                        lambda r: self.coarse_inv_diag * r, b,
                        rel_tol=1e-12, max_iter=10 * len(b))
        return x

    def _cycle(self, lvl, b):
        if lvl == 0:
            return self._coarse_solve(b)
        data = self.levels[lvl]
        cfg = self.config
        lam_hi = cfg.lambda_safety * data.lam_max
        lam_lo = data.lam_max / cfg.smoother_range_divisor
        x = chebyshev_smooth(data.operator.vmult, data.inv_diag,
                             np.zeros_like(b), b, cfg.cheb_degree,
                             lam_lo, lam_hi)
        r = b - data.operator.vmult(x)
        rc = self.transfers[lvl - 1].restrict(r)
        rc[self.levels[lvl - 1].dirichlet] = 0.0
        zc = self._cycle(lvl - 1, rc)
        corr = self.transfers[lvl - 1].prolongate(zc)
        corr[data.dirichlet] = 0.0
        x += corr
        return chebyshev_smooth(data.operator.vmult, data.inv_diag, x, b,
                                cfg.cheb_degree, lam_lo, lam_hi)

    def apply(self, b):
        """One V-cycle on the finest level."""
        return self._cycle(len(self.levels) - 1, b)


def build_multigrid(contexts, transfers, u_bar, strategy, config):
    """Prepare level operators at the transferred state and their smoother data.

    ``contexts`` is coarse-to-fine; ``u_bar`` lives on the finest level.
    """
    states = [None] * len(contexts)
    states[-1] = u_bar
    for lvl in range(len(contexts) - 2, -1, -1):
        states[lvl] = transfers[lvl].inject_state(states[lvl + 1])
    levels = []
    for ctx, state in zip(contexts, states):
        operator = TangentOperator(ctx, strategy, workers=config.workers)
        operator.prepare(state)
        diag = operator.diagonal()
        inv_diag = 1.0 / diag
        lam = estimate_lambda_max(operator.vmult, diag,
                                  iters=config.lanczos_iters,
                                  safety=config.lambda_safety)
        levels.append(MgLevelData(operator, inv_diag, lam,
                                  ctx.dofmap.dirichlet_mask))
    return MultigridPreconditioner(levels, transfers, config)


# --- Newton -------------------------------------------------------------


@dataclass
class NewtonLog:
    """Convergence history: one row per Newton iteration."""

    rows: list = field(default_factory=list)  # (step, iter, res_norm, cg_iters)

    def add(self, step, iteration, res_norm, cg_iters):
        self.rows.append((step, iteration, float(res_norm), cg_iters))

    def residuals(self, step):
        return [r[2] for r in self.rows if r[0] == step]

    def newton_iterations(self, step):
        return max(r[1] for r in self.rows if r[0] == step)

    def total_cg_iterations(self):
        return sum(r[3] for r in self.rows)

    def to_csv_rows(self):
        yield ("load_step", "newton_iter", "residual_norm", "cg_iterations")
        for row in self.rows:
            yield (row[0], row[1], repr(row[2]), row[3])

    def write_csv(self, path):
        import csv

        with open(path, "w", newline="") as fh:
            csv.writer(fh).writerows(self.to_csv_rows())


def _line_search(ctx, u, dx, load_fraction, config):
    """Backtracking on the potential energy, guarding inadmissible states.

    Steps already in the asymptotic regime are accepted outright: their
    energy decrease sits below the cancellation noise of the strain-energy
    evaluation, where backtracking cannot discriminate.
    """
    if not config.line_search:
        return 1.0
    rms = np.linalg.norm(dx) / np.sqrt(len(dx))
    if rms <= 10.0 * config.newton_disp_tol:
        return 1.0
    try:
        e0 = total_energy(ctx, u, load_fraction)
    except NonPositiveJacobian:
        raise NewtonDiverged("inadmissible state before line search")
    alpha = 1.0
    for _ in range(config.max_line_search + 1):
        try:
            e_trial = total_energy(ctx, u + alpha * dx, load_fraction)
            if e_trial <= e0 + 1e-12 * abs(e0):
                return alpha
        except NonPositiveJacobian:
            pass
        alpha *= 0.5
    raise NewtonDiverged("line search failed after max halvings")


def newton_solve(contexts, transfers, config: SolverConfig,
                 strategy=TangentStrategy.STORE):
    """Incremental-loading Newton solve on the finest level of ``contexts``.

    Returns (u, NewtonLog).  Convergence per load step requires both the
    scaled displacement update and the relative force residual to pass
    their tolerances.
    """
    ctx = contexts[-1]
    n = ctx.n_dofs
    u = np.zeros(n)
    log = NewtonLog()
    scale = 1.0 / np.sqrt(n)
    for step in range(1, config.load_steps + 1):
        lf = step / config.load_steps
        r = residual(ctx, u, lf)
        r0 = np.linalg.norm(r)
        log.add(step, 0, r0, 0)
        if r0 == 0.0:
            continue
        converged = False
        for it in range(1, config.max_newton + 1):
            mg = build_multigrid(contexts, transfers, u, strategy, config)
            dx, cg_iters = cg_solve(mg.levels[-1].operator.vmult, mg.apply,
                                    -r, config.linear_rel_tol,
                                    config.cg_max_iter)
            alpha = _line_search(ctx, u, dx, lf, config)
            u = u + alpha * dx
            r = residual(ctx, u, lf)
            rn = np.linalg.norm(r)
            log.add(step, it, rn, cg_iters)
            disp = scale * np.linalg.norm(alpha * dx)
            if disp <= config.newton_disp_tol and rn <= config.newton_res_tol * r0:
                converged = True
                break
        if not converged:
            raise NewtonDiverged(
                f"load step {step} did not converge in "
                f"{config.max_newton} iterations")
    return u, log


def setup_solver(setup, n_levels=None, workers=1):
    """Level contexts and transfers for a ProblemSetup's hierarchy."""
    hierarchy = setup.hierarchy
    levels = hierarchy.levels if n_levels is None else \
        hierarchy.levels[:n_levels]
    params = setup.params_by_id()
    contexts = [op_mod.build_level_context(lvl, setup.p, params,
                                           setup.traction)
                for lvl in levels]
    transfers = [build_transfer(hierarchy.dim, setup.p, lvl.n_c)
                 for lvl in levels[:-1]]
    return contexts, transfers
