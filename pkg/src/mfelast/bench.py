"""Benchmark campaigns: vmult throughput, per-point FLOPs, memory, solves.

Every campaign produces a list of :class:`BenchRecord` rows.  Before any
timing is recorded for a configuration, the configured strategies are
cross-checked on a probe vector; mismatching outputs abort the campaign
with :class:`NumericalFailure` (exit code 3 in the CLI).
"""

from __future__ import annotations

import statistics
import time
from dataclasses import dataclass, field, fields

import numpy as np

from . import fespace as fe
from . import meshes as msh
from . import operators as op_mod
from . import solvers as sol
from .counting import CountingScalar, OpCounter
from .materials import MaterialParams, Model
from .operators import (MATRIX_FREE_STRATEGIES, TangentOperator,
                        TangentStrategy, qp_body_naive, qp_body_recompute,
                        qp_body_store)

__all__ = [
    "ConfigError",
    "NumericalFailure",
    "BenchConfig",
    "BenchRecord",
    "strategies_from_tokens",
    "run_vmult_bench",
    "run_flop_census",
    "run_memory_census",
    "run_time_to_solution",
]

DEFAULT_MU = 0.4225e6
DEFAULT_NU = 0.3
DEFAULT_TRACTION = 12.5e3


class ConfigError(ValueError):
    """Invalid benchmark configuration."""


class NumericalFailure(RuntimeError):
    """Equivalence guard violated or a solve diverged."""


STRATEGY_TOKENS = {
    "naive": TangentStrategy.NAIVE,
    "recompute": TangentStrategy.RECOMPUTE,
    "store": TangentStrategy.STORE,
    "sparse": TangentStrategy.SPARSE_BASELINE,
}


def strategies_from_tokens(tokens):
    out = []
    for tok in tokens:
        try:
            out.append(STRATEGY_TOKENS[tok.strip().lower()])
        except KeyError:
            raise ConfigError(f"unknown strategy '{tok}'; "
                              f"choose from {sorted(STRATEGY_TOKENS)}")
    return tuple(out)


@dataclass
class BenchConfig:
    model: Model = Model.COMPRESSIBLE
    strategies: tuple = (TangentStrategy.STORE, TangentStrategy.RECOMPUTE,
                         TangentStrategy.SPARSE_BASELINE)
    dim: int = 2
    degrees: tuple = (1, 2, 3)
    refines: tuple = (3,)          # broadcast over degrees when length 1
    n0: int = 4
    extent: float = 1000.0
    mu: float = DEFAULT_MU
    nu: float = DEFAULT_NU
    traction: float = DEFAULT_TRACTION
    contrast: float = 100.0
    load_steps: int = 5
    reps: int = 10
    warmups: int = 3
    workers: int = 1
    seed: int = 2024

    def validate(self):
        if self.dim not in (2, 3):
            raise ConfigError("dim must be 2 or 3")
        if not self.strategies:
            raise ConfigError("strategy list must not be empty")
        if not self.degrees:
            raise ConfigError("degree list must not be empty")
        for p in self.degrees:
            try:
                fe.check_degree(p, self.dim)
            except fe.UnsupportedOrder as exc:
                raise ConfigError(str(exc)) from exc
        if len(self.refines) not in (1, len(self.degrees)):
            raise ConfigError("refines must have length 1 or match degrees")
        if self.reps < 1 or self.warmups < 0 or self.workers < 1:
            raise ConfigError("reps >= 1, warmups >= 0, workers >= 1 required")
        if self.n0 < 1 or self.load_steps < 1:
            raise ConfigError("n0 >= 1 and load_steps >= 1 required")
        return self

    def refine_for(self, degree_index):
        if len(self.refines) == 1:
            return self.refines[0]
        return self.refines[degree_index]

    def base_params(self):
        return MaterialParams.from_shear_poisson(self.mu, self.nu, self.model)

    def traction_vector(self):
        t = np.zeros(self.dim)
        if self.dim == 2:
            t[0] = self.traction
        else:
            t[0] = self.traction
            t[1] = self.traction
        return t


@dataclass
class BenchRecord:
    """One measured configuration; unused fields stay None."""

    model: str
    strategy: str
    dim: int
    p: int
    levels: int
    n_dofs: int
    qp_dof_ratio: float | None = None
    vmult_median_s: float | None = None
    throughput_dofs_per_s: float | None = None
    cache_bytes_per_dof: float | None = None
    total_bytes_per_dof: float | None = None
    flops_per_qp: float | None = None
    newton_iterations: int | None = None
    cg_iterations: int | None = None
    solve_seconds: float | None = None

    @classmethod
    def field_names(cls):
        return [f.name for f in fields(cls)]


def _build_finest_context(cfg: BenchConfig, p, refines):
    hier = msh.build_hierarchy(cfg.dim, cfg.n0, refines, extent=cfg.extent)
    base = cfg.base_params()
    ctx = op_mod.build_level_context(
        hier.finest, p, {0: base, 1: base.scaled(cfg.contrast)},
        cfg.traction_vector())
    return hier, ctx


def _prescribed_state(ctx, seed, bound=0.1):
    """Deterministic admissible linearization state with bounded gradients."""
    rng = np.random.default_rng(seed)
    u = rng.standard_normal(ctx.n_dofs)
    u[ctx.dofmap.dirichlet_mask] = 0.0
    h = op_mod._ref_gradients(ctx, u)
    u *= bound / np.max(np.abs(h))
    return u


def _equivalence_guard(operators, ctx, seed, tol=1e-10):
    rng = np.random.default_rng(seed + 1)
    x = rng.standard_normal(ctx.n_dofs)
    x[ctx.dofmap.dirichlet_mask] = 0.0
    outs = [o.vmult(x) for o in operators.values()]
    names = list(operators)
    for a in range(len(outs)):
        for b in range(a + 1, len(outs)):
            num = np.linalg.norm(outs[a] - outs[b])
            den = max(np.linalg.norm(outs[a]), 1e-300)
            if num > tol * den:
                raise NumericalFailure(
                    f"strategy outputs disagree: {names[a]} vs {names[b]} "
                    f"rel {num / den:.3e} > {tol}")
    return x


def run_vmult_bench(cfg: BenchConfig):
    """Median matrix-vector timing per (strategy, degree) at a prescribed state."""
    cfg.validate()
    records = []
    for di, p in enumerate(cfg.degrees):
        refines = cfg.refine_for(di)
        hier, ctx = _build_finest_context(cfg, p, refines)
        u = _prescribed_state(ctx, cfg.seed)
        operators = {}
        for strat in cfg.strategies:
            o = TangentOperator(ctx, strat, workers=cfg.workers)
            o.prepare(u)
            operators[strat.value] = o
        x = _equivalence_guard(operators, ctx, cfg.seed)
        ratio = msh.quadrature_dof_ratio(hier.finest, p)
        for strat in cfg.strategies:
            o = operators[strat.value]
            for _ in range(cfg.warmups):
                o.vmult(x)
            times = []
            for _ in range(cfg.reps):
                t0 = time.perf_counter()
                o.vmult(x)
                times.append(time.perf_counter() - t0)
            med = statistics.median(times)
            records.append(BenchRecord(
                model=cfg.model.value, strategy=strat.value, dim=cfg.dim,
                p=p, levels=refines + 1, n_dofs=ctx.n_dofs,
                qp_dof_ratio=ratio, vmult_median_s=med,
                throughput_dofs_per_s=ctx.n_dofs / med))
    return records


def _census_params(params, counter):
    return MaterialParams(CountingScalar(params.mu, counter),
                          CountingScalar(params.lam, counter),
                          CountingScalar(params.kappa, counter),
                          params.model)


def _wrap_tensor(t, counter):
    d = t.shape[0]
    out = np.empty((d, d), dtype=object)
    for i in range(d):
        for j in range(d):
            out[i, j] = CountingScalar(float(t[i, j]), counter)
    return out


def run_flop_census(cfg: BenchConfig, samples=4):
    """Per-point operation counts of each strategy's quadrature-loop body.

    Counts cover the work between receiving reference-cell gradients and
    queueing the result tensor (constitutive evaluation plus the per-point
    geometry application); sum factorization is accounted separately by
    the basis complexity probe.
    """
    cfg.validate()
    _, ctx = _build_finest_context(cfg, cfg.degrees[0],
                                   min(cfg.refine_for(0), 1))
    u = _prescribed_state(ctx, cfg.seed)
    store_op = TangentOperator(ctx, TangentStrategy.STORE)
    store_op.prepare(u)
    cache = store_op.cache
    hbar = op_mod._ref_gradients(ctx, u)
    rng = np.random.default_rng(cfg.seed + 2)
    base = cfg.base_params()
    dim = ctx.dim

    qps = [(c, q) for c, q in zip(
        rng.integers(0, ctx.level.n_cells, samples),
        rng.integers(0, ctx.nqp, samples))]

    records = []
    for strat in cfg.strategies:
        if strat is TangentStrategy.SPARSE_BASELINE:
            continue  # no quadrature-loop body: the matrix is pre-assembled
        totals = []
        for c, q in qps:
            counter = OpCounter()
            dh = rng.standard_normal((dim, dim))
            if strat is TangentStrategy.STORE:
                c_pack = [CountingScalar(v, counter)
                          for v in cache.constitutive.c_spatial[c, q]]
                sigma = [CountingScalar(v, counter)
                         for v in cache.constitutive.sigma[c, q]]
                m_map = _wrap_tensor(cache.inv_jacobian_deformed[c, q],
                                     counter)
                wj = CountingScalar(cache.jxw_times_j[c, q], counter)
                qp_body_store(np.array(c_pack, dtype=object),
                              np.array(sigma, dtype=object), m_map, wj,
                              _wrap_tensor(dh, counter), dim)
            else:
                params = _census_params(base, counter)
                hb = _wrap_tensor(hbar[c, q], counter)
                dhw = _wrap_tensor(dh, counter)
                if strat is TangentStrategy.NAIVE:
                    qp_body_naive(params, hb, dhw)
                else:
                    qp_body_recompute(params, hb, dhw)
            totals.append(counter.total)
        records.append(BenchRecord(
            model=cfg.model.value, strategy=strat.value, dim=cfg.dim,
            p=cfg.degrees[0], levels=1, n_dofs=ctx.n_dofs,
            flops_per_qp=float(np.mean(totals))))
    return records


def run_memory_census(cfg: BenchConfig):
    """Exact byte accounting of prepared per-strategy state, per DoF."""
    cfg.validate()
    records = []
    for di, p in enumerate(cfg.degrees):
        refines = cfg.refine_for(di)
        hier, ctx = _build_finest_context(cfg, p, refines)
        u = _prescribed_state(ctx, cfg.seed)
        ratio = msh.quadrature_dof_ratio(hier.finest, p)
        for strat in cfg.strategies:
            o = TangentOperator(ctx, strat, workers=cfg.workers)
            o.prepare(u)
            constitutive, geometry = o.storage_bytes()
            records.append(BenchRecord(
                model=cfg.model.value, strategy=strat.value, dim=cfg.dim,
                p=p, levels=refines + 1, n_dofs=ctx.n_dofs,
                qp_dof_ratio=ratio,
                cache_bytes_per_dof=constitutive / ctx.n_dofs,
                total_bytes_per_dof=(constitutive + geometry) / ctx.n_dofs))
    return records


def run_time_to_solution(cfg: BenchConfig):
    """Full incremental Newton solves per strategy, with agreement check."""
    cfg.validate()
    records = []
    for di, p in enumerate(cfg.degrees):
        refines = cfg.refine_for(di)
        hier = msh.build_hierarchy(cfg.dim, cfg.n0, refines,
                                   extent=cfg.extent)
        setup = msh.ProblemSetup(hier, p, cfg.traction_vector(),
                                 cfg.load_steps, cfg.base_params(),
                                 stiffness_contrast=cfg.contrast)
        contexts, transfers = sol.setup_solver(setup, workers=cfg.workers)
        solutions = {}
        config = sol.SolverConfig(load_steps=cfg.load_steps,
                                  workers=cfg.workers)
        ratio = msh.quadrature_dof_ratio(hier.finest, p)
        for strat in cfg.strategies:
            t0 = time.perf_counter()
            try:
                u, log = sol.newton_solve(contexts, transfers, config, strat)
            except sol.NewtonDiverged as exc:
                raise NumericalFailure(str(exc)) from exc
            elapsed = time.perf_counter() - t0
            solutions[strat.value] = u
            newton_total = sum(log.newton_iterations(s)
                               for s in range(1, cfg.load_steps + 1))
            records.append(BenchRecord(
                model=cfg.model.value, strategy=strat.value, dim=cfg.dim,
                p=p, levels=refines + 1, n_dofs=contexts[-1].n_dofs,
                qp_dof_ratio=ratio, newton_iterations=newton_total,
                cg_iterations=log.total_cg_iterations(),
                solve_seconds=elapsed))
        names = list(solutions)
        for a in range(len(names)):
            for b in range(a + 1, len(names)):
                ua, ub = solutions[names[a]], solutions[names[b]]
                rel = np.linalg.norm(ua - ub) / max(np.linalg.norm(ua), 1e-300)
                if rel > 1e-6:
                    raise NumericalFailure(
                        f"solutions disagree: {names[a]} vs {names[b]} "
                        f"rel {rel:.3e}")
    return records
