"""Fixed-size second- and fourth-order tensor algebra in 2 and 3 dimensions.

Tensors are represented as plain numpy arrays indexed by components:

* second order: shape ``(d, d)``,
* fourth order: shape ``(d, d, d, d)``,
* symmetric second order: Voigt vector of length ``d*(d+1)/2``,
* symmetric (minor + major) fourth order: packed upper triangle of the
  Voigt matrix, length 21 in 3D and 6 in 2D.

Every entry may be a plain float, a (broadcastable) numpy array, or any
scalar-like object implementing arithmetic (dual numbers, counting
scalars).  All operations below are written component-wise so that they
stay generic over the entry type; nothing here calls ``numpy.linalg``.

Voigt component order is (11, 22, 33, 23, 13, 12) in 3D and
(11, 22, 12) in 2D.  Stored Voigt components are the raw tensor
components; the factor 2 on shear slots is applied inside
:func:`sym_apply` only.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "SingularTensor",
    "VOIGT_PAIRS",
    "identity",
    "trace",
    "transpose",
    "matmul",
    "det",
    "inverse",
    "contract42",
    "push_forward",
    "push_forward_batch",
    "sym2_to_voigt",
    "voigt_to_sym2",
    "sym4_to_voigt_matrix",
    "voigt_matrix_to_sym4",
    "pack_upper",
    "unpack_upper",
    "sym_apply",
    "tensor_from_components",
    "component_form",
]


class SingularTensor(ValueError):
    """Raised when inverting a tensor whose determinant is below threshold."""


#: Voigt slot -> (i, j) index pair, per dimension.
VOIGT_PAIRS = {
    2: ((0, 0), (1, 1), (0, 1)),
    3: ((0, 0), (1, 1), (2, 2), (1, 2), (0, 2), (0, 1)),
}

_SINGULAR_TOL = 1e-14


def identity(d, dtype=float):
    """Identity second-order tensor of dimension ``d``."""
    return np.eye(d, dtype=dtype)


def tensor_from_components(entries, d):
    """Build a (d, d) object array from a nested sequence of scalar-likes."""
    t = np.empty((d, d), dtype=object)
    for i in range(d):
        for j in range(d):
            t[i, j] = entries[i][j]
    return t


def component_form(batch):
    """Convert a float array of shape (..., d, d) into a (d, d) object array.

    Each entry of the result is a contiguous array over the leading batch
    axes, so the generic component-wise operations vectorize over the batch.
    """
    d = batch.shape[-1]
    t = np.empty((d, d), dtype=object)
    for i in range(d):
        for j in range(d):
            t[i, j] = np.ascontiguousarray(batch[..., i, j])
    return t


def trace(t):
    d = t.shape[0]
    s = t[0, 0]
    for i in range(1, d):
        s = s + t[i, i]
    return s


def transpose(t):
    d = t.shape[0]
    out = np.empty_like(t)
    for i in range(d):
        for j in range(d):
            out[i, j] = t[j, i]
    return out


def matmul(a, b):
    """Component-wise matrix product; generic over entry type."""
    d = a.shape[0]
    out = np.empty_like(a)
    for i in range(d):
        for j in range(d):
            s = a[i, 0] * b[0, j]
            for k in range(1, d):
                s = s + a[i, k] * b[k, j]
            out[i, j] = s
    return out


def det(t):
    """Determinant by explicit cofactor expansion (d = 2 or 3)."""
    d = t.shape[0]
    if d == 2:
        return t[0, 0] * t[1, 1] - t[0, 1] * t[1, 0]
    if d == 3:
        return (
            t[0, 0] * (t[1, 1] * t[2, 2] - t[1, 2] * t[2, 1])
            - t[0, 1] * (t[1, 0] * t[2, 2] - t[1, 2] * t[2, 0])
            + t[0, 2] * (t[1, 0] * t[2, 1] - t[1, 1] * t[2, 0])
        )
    raise ValueError(f"unsupported dimension {d}")


def _min_abs(x):
    x = np.asarray(x, dtype=float)
    return float(np.min(np.abs(x)))


def inverse(t):
    """Inverse via the adjugate formula.

    Raises
    ------
    SingularTensor
        If ``|det(t)|`` falls below 1e-14 anywhere in the batch.
    """
    d = t.shape[0]
    dt = det(t)
    if _min_abs(_plain_value(dt)) < _SINGULAR_TOL:
        raise SingularTensor("determinant below 1e-14")
    out = np.empty_like(t)
    if d == 2:
        out[0, 0] = t[1, 1] / dt
        out[0, 1] = -t[0, 1] / dt
        out[1, 0] = -t[1, 0] / dt
        out[1, 1] = t[0, 0] / dt
        return out
    for i in range(3):
        for j in range(3):
            i1, i2 = [k for k in range(3) if k != j]
            j1, j2 = [k for k in range(3) if k != i]
            cof = t[i1, j1] * t[i2, j2] - t[i1, j2] * t[i2, j1]
            sign = -1.0 if (i + j) % 2 else 1.0
            out[i, j] = sign * cof / dt
    return out


def _plain_value(x):
    # Strip scalar wrappers (duals, counting scalars) down to float/ndarray.
    while True:
        inner = getattr(x, "val", None)
        if inner is None:
            inner = getattr(x, "value", None)
        if inner is None or callable(inner):
            return x
        x = inner


def contract42(l, h):
    """Double contraction of a fourth-order with a second-order tensor.

    ``(l : h)_{iA} = sum_{jB} l_{iAjB} h_{jB}``
    """
    d = h.shape[0]
    out = np.empty_like(h)
    for i in range(d):
        for a in range(d):
            s = l[i, a, 0, 0] * h[0, 0]
            first = True
            for j in range(d):
                for b in range(d):
                    if first:
                        first = False
                        continue
                    s = s + l[i, a, j, b] * h[j, b]
            out[i, a] = s
    return out


def push_forward(c_mat, f):
    """Push a fourth-order tensor forward with ``f`` on all four legs.

    ``result_{ijkl} = f_{iA} f_{jB} f_{kC} f_{lD} c_mat_{ABCD}``, computed
    as four successive one-leg contractions.
    """
    d = f.shape[0]
    cur = c_mat
    for leg in range(4):
        nxt = np.empty_like(cur)
        for idx in np.ndindex((d,) * 4):
            pre, post = idx[:leg], idx[leg + 1 :]
            s = None
            for m in range(d):
                term = f[idx[leg], m] * cur[pre + (m,) + post]
                s = term if s is None else s + term
            nxt[idx] = s
        cur = nxt
    return cur


def push_forward_batch(c_mat, f):
    """Float fast path of :func:`push_forward` over a leading batch axis.

    ``c_mat``: (B, d, d, d, d), ``f``: (B, d, d).
    """
    out = np.einsum("qiA,qABCD->qiBCD", f, c_mat)
    out = np.einsum("qjB,qiBCD->qijCD", f, out)
    out = np.einsum("qkC,qijCD->qijkD", f, out)
    out = np.einsum("qlD,qijkD->qijkl", f, out)
    return out


def sym2_to_voigt(t):
    """Pack the symmetric part of a second-order tensor into a Voigt vector."""
    d = t.shape[0]
    pairs = VOIGT_PAIRS[d]
    out = np.empty(len(pairs), dtype=t.dtype)
    for a, (i, j) in enumerate(pairs):
        if i == j:
            out[a] = t[i, j]
        else:
            out[a] = (t[i, j] + t[j, i]) * 0.5
    return out


def voigt_to_sym2(v, d):
    """Expand a Voigt vector back into a full symmetric (d, d) tensor."""
    t = np.empty((d, d), dtype=v.dtype)
    for a, (i, j) in enumerate(VOIGT_PAIRS[d]):
        t[i, j] = v[a]
        t[j, i] = v[a]
    return t


def sym4_to_voigt_matrix(c):
    """Voigt matrix of a minor-symmetric fourth-order tensor.

    Entries are raw tensor components (no shear weighting).
    """
    d = c.shape[0]
    pairs = VOIGT_PAIRS[d]
    nv = len(pairs)
    m = np.empty((nv, nv), dtype=c.dtype)
    for a, (i, j) in enumerate(pairs):
        for b, (k, l) in enumerate(pairs):
            m[a, b] = c[i, j, k, l]
    return m


def voigt_matrix_to_sym4(m, d):
    """Expand a Voigt matrix into the full fourth-order tensor."""
    c = np.empty((d, d, d, d), dtype=m.dtype)
    slot = np.empty((d, d), dtype=int)
    for a, (i, j) in enumerate(VOIGT_PAIRS[d]):
        slot[i, j] = a
        slot[j, i] = a
    for i in range(d):
        for j in range(d):
            for k in range(d):
                for l in range(d):
                    c[i, j, k, l] = m[slot[i, j], slot[k, l]]
    return c


def pack_upper(m):
    """Pack the upper triangle (including diagonal) of a square matrix."""
    nv = m.shape[0]
    out = np.empty(nv * (nv + 1) // 2, dtype=m.dtype)
    idx = 0
    for a in range(nv):
        for b in range(a, nv):
            out[idx] = m[a, b]
            idx += 1
    return out


def unpack_upper(v, nv):
    """Inverse of :func:`pack_upper`, restoring the full symmetric matrix."""
    m = np.empty((nv, nv), dtype=v.dtype)
    idx = 0
    for a in range(nv):
        for b in range(a, nv):
            m[a, b] = v[idx]
            m[b, a] = v[idx]
            idx += 1
    return m


def sym_apply(c_packed, e_voigt, d):
    """Apply a packed symmetric fourth-order tensor to a Voigt strain.

    Shear slots of ``e_voigt`` are weighted by 2 so the result equals the
    full-tensor double contraction ``c : e``.
    """
    pairs = VOIGT_PAIRS[d]
    nv = len(pairs)
    m = unpack_upper(c_packed, nv)
    n_diag = d  # first d slots are the diagonal components
    out = np.empty(nv, dtype=e_voigt.dtype if hasattr(e_voigt, "dtype") else object)
    for a in range(nv):
        s = m[a, 0] * e_voigt[0]
        for b in range(1, nv):
            w = 1.0 if b < n_diag else 2.0
            s = s + m[a, b] * (w * e_voigt[b])
        out[a] = s
    return out
