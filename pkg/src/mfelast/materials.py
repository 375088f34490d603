"""Hyperelastic constitutive models: energy, stress, and tangent data.

Two strain-energy densities are provided:

* ``Model.COMPRESSIBLE``:  psi = mu/2 (tr C - tr I - 2 log J) + lambda log^2 J
* ``Model.SPLIT``:         psi = mu/2 (tr Cbar - tr I)
                                 + kappa/2 (1/2 (J^2 - 1) - log J),
  with Cbar = J^(-2/d) C the volume-preserving part of C = F^T F.

All derivative quantities (first Piola-Kirchhoff stress, tangent action,
full tangent, spatial tangent data) come from forward-mode differentiation
of the single energy implementation, so there is one source of truth for
each model.  Every function is generic over the scalar type of the tensor
entries; passing arrays as entries evaluates whole batches of states at
once.

Units follow the benchmark problem: moduli in N/mm^2, lengths in mm.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import autodiff as ad
from . import tensors as tn

__all__ = [
    "Model",
    "MaterialParams",
    "ConstitutiveCache",
    "NonPositiveJacobian",
    "energy",
    "energy_from_c",
    "pk1",
    "tangent_action",
    "full_tangent",
    "spatial_data",
]


class NonPositiveJacobian(ValueError):
    """det F <= 0: the deformation state is inadmissible."""


class Model(Enum):
    COMPRESSIBLE = "compressible"
    SPLIT = "split"


@dataclass(frozen=True)
class MaterialParams:
    """Moduli of one material [N/mm^2]. ``lam`` is used by the compressible
    model, ``kappa`` by the split model; the unused one may be zero."""

    mu: float
    lam: float
    kappa: float
    model: Model

    @classmethod
    def from_shear_poisson(cls, mu, nu, model=Model.COMPRESSIBLE):
        """Derive moduli from shear modulus and Poisson ratio.

        The compressible energy carries ``lambda log^2 J`` (no 1/2), so its
        small-strain first Lame constant is ``2 lam``; ``lam`` is chosen as
        half the classical value to keep the Poisson ratio at ``nu``.
        """
        if not 0.0 < nu < 0.5:
            raise ValueError("Poisson ratio must lie in (0, 0.5)")
        if np.any(np.asarray(mu) <= 0.0):
            raise ValueError("shear modulus must be positive")
        lam = mu * nu / (1.0 - 2.0 * nu)
        kappa = 2.0 * mu * (1.0 + nu) / (3.0 * (1.0 - 2.0 * nu))
        return cls(mu=mu, lam=lam, kappa=kappa, model=model)

    def scaled(self, factor):
        """Same ratios, all moduli multiplied by ``factor`` (stiff inclusions)."""
        return MaterialParams(self.mu * factor, self.lam * factor,
                              self.kappa * factor, self.model)


@dataclass
class ConstitutiveCache:
    """Per-point tangent data: packed spatial elasticity tensor (21 reals in
    3D, 6 in 2D) and Voigt Cauchy stress (6 / 3)."""

    c_spatial: np.ndarray
    sigma: np.ndarray


def _check_j(j):
    v = np.asarray(ad.value_of(j), dtype=float)
    if np.any(v <= 0.0):
        raise NonPositiveJacobian("det F <= 0")


def _trace_ftf(f):
    d = f.shape[0]
    s = f[0, 0] * f[0, 0]
    for i in range(d):
        for k in range(d):
            if i == 0 and k == 0:
                continue
            s = s + f[k, i] * f[k, i]
    return s


def energy(params, f):
    """Strain energy density at deformation gradient ``f`` [(d, d) entries].

    Raises
    ------
    NonPositiveJacobian
        If det f <= 0 anywhere in the batch.
    """
    d = f.shape[0]
    j = tn.det(f)
    _check_j(j)
    trc = _trace_ftf(f)
    logj = ad.log(j)
    if params.model is Model.COMPRESSIBLE:
        return 0.5 * params.mu * (trc - float(d) - 2.0 * logj) \
            + params.lam * logj * logj
    iso = 0.5 * params.mu * (j ** (-2.0 / d) * trc - float(d))
    vol = 0.5 * params.kappa * (0.5 * (j * j - 1.0) - logj)
    return iso + vol


def energy_from_c(params, c):
    """Strain energy as a function of the right Cauchy-Green tensor.

    Used for the material tangent, whose second derivatives with respect
    to the symmetric components of C carry the minor symmetries.
    """
    d = c.shape[0]
    detc = tn.det(c)
    _check_j(detc)
    trc = tn.trace(c)
    logdetc = ad.log(detc)
    if params.model is Model.COMPRESSIBLE:
        return 0.5 * params.mu * (trc - float(d) - logdetc) \
            + 0.25 * params.lam * logdetc * logdetc
    iso = 0.5 * params.mu * (detc ** (-1.0 / d) * trc - float(d))
    vol = 0.5 * params.kappa * (0.5 * (detc - 1.0) - 0.5 * logdetc)
    return iso + vol


def _deformation_gradient(h_bar):
    d = h_bar.shape[0]
    f = np.empty((d, d), dtype=object)
    for i in range(d):
        for j in range(d):
            f[i, j] = h_bar[i, j] + 1.0 if i == j else h_bar[i, j]
    return f


def _flat(t):
    d = t.shape[0]
    return [t[i, j] for i in range(d) for j in range(d)]


def _unflat(vals, d):
    t = np.empty((d, d), dtype=object)
    for i in range(d):
        for j in range(d):
            t[i, j] = vals[i * d + j]
    return t


def pk1(params, f):
    """First Piola-Kirchhoff stress P = d psi / d F, by one gradient sweep."""
    d = f.shape[0]
    _check_j(tn.det(f))

    def fn(xs):
        return energy(params, _unflat(xs, d))

    _, grad = ad.gradient(fn, _flat(f))
    return _unflat(grad, d)


def tangent_action(params, h_bar, dh):
    """Action of the tangent stiffness on a direction, without forming it.

    Returns G = (d P / d F) : dh at F = I + h_bar, via a seeded
    Hessian-vector product of the energy.
    """
    d = h_bar.shape[0]
    f = _deformation_gradient(h_bar)
    _check_j(tn.det(f))

    def fn(xs):
        return energy(params, _unflat(xs, d))

    _, _, hvp = ad.seeded_hvp(fn, _flat(f), _flat(dh))
    return _unflat(hvp, d)


def full_tangent(params, h_bar):
    """Full fourth-order tangent d^2 psi / dF dF, indexed (i, A, j, B).

    Only the naive strategy and cross-checking oracles need this.
    """
    d = h_bar.shape[0]
    f = _deformation_gradient(h_bar)
    _check_j(tn.det(f))

    def fn(xs):
        return energy(params, _unflat(xs, d))

    _, _, hess = ad.full_hessian(fn, _flat(f))
    out = np.empty((d, d, d, d), dtype=object)
    for i in range(d):
        for a in range(d):
            for j in range(d):
                for b in range(d):
                    out[i, a, j, b] = hess[i * d + a][j * d + b]
    return out


def _is_batched(f):
    return isinstance(ad.value_of(f[0, 0]), np.ndarray)


def spatial_data(params, h_bar):
    """Current-configuration tangent data at F = I + h_bar.

    Returns ``(ConstitutiveCache, j)`` where the cache holds the packed
    spatial elasticity tensor (push-forward of 4 d^2 psi/dC dC divided by
    J) and the Voigt Cauchy stress sigma = sym(P F^T)/J.
    """
    d = h_bar.shape[0]
    nv = len(tn.VOIGT_PAIRS[d])
    f = _deformation_gradient(h_bar)
    j = tn.det(f)
    _check_j(j)

    p = pk1(params, f)
    tau = tn.matmul(p, tn.transpose(f))
    sigma = np.empty((d, d), dtype=object)
    for i in range(d):
        for k in range(d):
            sigma[i, k] = 0.5 * (tau[i, k] + tau[k, i]) / j
    sigma_v = tn.sym2_to_voigt(sigma)

    c = tn.matmul(tn.transpose(f), f)
    cvec = [c[i, k] for (i, k) in tn.VOIGT_PAIRS[d]]

    def fn(xs):
        cc = np.empty((d, d), dtype=object)
        for a, (i, k) in enumerate(tn.VOIGT_PAIRS[d]):
            cc[i, k] = xs[a]
            cc[k, i] = xs[a]
        return energy_from_c(params, cc)

    _, _, hess = ad.full_hessian(fn, cvec)

    # Chain-rule weights: an off-diagonal Voigt slot stands for two tensor
    # components, so each off-diagonal derivative carries a factor 1/2.
    w = [1.0 if i == k else 0.5 for (i, k) in tn.VOIGT_PAIRS[d]]
    slot = {}
    for a, (i, k) in enumerate(tn.VOIGT_PAIRS[d]):
        slot[(i, k)] = a
        slot[(k, i)] = a

    if _is_batched(f):
        nb = np.asarray(ad.value_of(f[0, 0])).shape
        cc_mat = np.empty(nb + (d, d, d, d))
        for ia in range(d):
            for ib in range(d):
                sa = slot[(ia, ib)]
                for ic in range(d):
                    for idd in range(d):
                        sb = slot[(ic, idd)]
                        cc_mat[..., ia, ib, ic, idd] = \
                            4.0 * w[sa] * w[sb] * hess[sa][sb]
        fb = np.empty(nb + (d, d))
        for i in range(d):
            for k in range(d):
                fb[..., i, k] = ad.value_of(f[i, k])
        c_spat = tn.push_forward_batch(
            cc_mat.reshape((-1,) + (d,) * 4), fb.reshape((-1, d, d))
        ).reshape(nb + (d,) * 4)
        c_spat /= np.asarray(j).reshape(nb + (1,) * 4)
        vm = np.empty(nb + (nv, nv))
        for a, (i, k) in enumerate(tn.VOIGT_PAIRS[d]):
            for b, (l, m) in enumerate(tn.VOIGT_PAIRS[d]):
                vm[..., a, b] = c_spat[..., i, k, l, m]
        packed = np.empty(nb + (nv * (nv + 1) // 2,))
        idx = 0
        for a in range(nv):
            for b in range(a, nv):
                packed[..., idx] = vm[..., a, b]
                idx += 1
        sig = np.empty(nb + (nv,))
        for a in range(nv):
            sig[..., a] = sigma_v[a]
        return ConstitutiveCache(packed, sig), np.asarray(j)

    cc_mat = np.empty((d, d, d, d), dtype=object)
    for ia in range(d):
        for ib in range(d):
            sa = slot[(ia, ib)]
            for ic in range(d):
                for idd in range(d):
                    sb = slot[(ic, idd)]
                    cc_mat[ia, ib, ic, idd] = 4.0 * w[sa] * w[sb] * hess[sa][sb]
    c_spat = tn.push_forward(cc_mat, f)
    for idx4 in np.ndindex((d,) * 4):
        c_spat[idx4] = c_spat[idx4] / j
    packed = tn.pack_upper(tn.sym4_to_voigt_matrix(c_spat))
    return ConstitutiveCache(packed, sigma_v), j
