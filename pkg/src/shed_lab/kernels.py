"""Hot numeric kernels, each in a numba and a pure-numpy version.

The two implementations are numerically interchangeable (identical math,
different summation order) and are selected once at import time via
``SHED_LAB_NUMBA`` (see :mod:`shed_lab.backend`). ``benchmarks/
bench_kernels.py`` times one against the other.

Kernels never raise: they report failure through a status code so the
njit path stays object-mode free. Wrappers in the calling modules turn
status codes into the package's exceptions.
"""

from __future__ import annotations

import numpy as np

from .backend import NUMBA_ENABLED

STATUS_OK = 0
STATUS_DEGENERATE_ADAPTER = 1
STATUS_DEGENERATE_CENTERING = 2


# ---------------------------------------------------------------------------
# numpy implementations
# ---------------------------------------------------------------------------

def softmax_rows_np(scores: np.ndarray, tau: float) -> np.ndarray:
    """Row-wise softmax of scores/tau with max-subtraction."""
    z = scores / tau
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def adapter_embed_np(
    a_mat: np.ndarray,
    bias: np.ndarray,
    x_base: np.ndarray,
    cent: np.ndarray,
    eps: float,
):
    """Adapted and centered-adapted rows: f = normalize(A x + b),
    fh = normalize(f - cent). Returns (f, fh, status)."""
    z = x_base @ a_mat.T + bias
    r = np.linalg.norm(z, axis=1)
    if (r < eps).any():
        return z, z, STATUS_DEGENERATE_ADAPTER
    f = z / r[:, None]
    u = f - cent
    rho = np.linalg.norm(u, axis=1)
    if (rho < eps).any():
        return f, u, STATUS_DEGENERATE_CENTERING
    return f, u / rho[:, None], STATUS_OK


def aggregate_sh_probs_np(
    x: np.ndarray,
    cents: np.ndarray,
    t_hat: np.ndarray,
    pi: np.ndarray,
    tau: float,
    eps: float,
) -> tuple[np.ndarray, np.ndarray]:
    """Membership-weighted mixture of per-centroid centered predictions.

    For every sample row ``x[i]`` and every centroid row ``cents[v]``,
    computes softmax(<normalize(x[i] - cents[v]), t_hat>/tau) and sums the
    per-centroid distributions with weights ``pi[i, v]``. A sample that
    coincides with a centroid (residual norm < eps) contributes a uniform
    distribution for that centroid; the second return value counts such
    substitutions per sample.
    """
    n, _ = x.shape
    m = cents.shape[0]
    c = t_hat.shape[0]
    out = np.zeros((n, c))
    degen = np.zeros(n, dtype=np.int64)
    uniform = np.full(c, 1.0 / c)
    for v in range(m):
        u = x - cents[v]
        norms = np.linalg.norm(u, axis=1)
        bad = norms < eps
        norms_safe = np.where(bad, 1.0, norms)
        probs = softmax_rows_np((u / norms_safe[:, None]) @ t_hat.T, tau)
        if bad.any():
            probs[bad] = uniform
            degen += bad.astype(np.int64)
        out += pi[:, v : v + 1] * probs
    return out, degen


def batch_loss_grad_np(
    a_mat: np.ndarray,
    bias: np.ndarray,
    x_base: np.ndarray,
    anchor_f: np.ndarray,
    anchor_fh: np.ndarray,
    cent: np.ndarray,
    t_mat: np.ndarray,
    labels: np.ndarray,
    tau: float,
    reg_weight: float,
    align_sh: bool,
    eps: float,
):
    """Mean alignment + anchor losses and their adapter gradients.

    Adapter forward per sample: f = normalize(A x + b); centered form
    fh = normalize(f - cent). Alignment loss is cross-entropy over
    <fh, t_mat>/tau (or <f, t_mat>/tau when ``align_sh`` is false); the
    anchor loss is the elementwise absolute deviation of f from anchor_f
    and of fh from anchor_fh. Anchors are the same quantities computed
    once at the identity adapter (see adapter_embed), so the anchor loss
    is exactly zero at initialization. Gradients flow through both
    normalization Jacobians; the absolute-value subgradient at zero is
    taken as zero.

    Returns (loss_align, loss_reg, grad_a, grad_b, f_rows, status) where
    the losses are batch means, grad_* is the gradient of
    loss_align + reg_weight * loss_reg, and status is a kernel status
    code (nonzero means a zero-norm vector was hit).
    """
    n, d = x_base.shape
    z = x_base @ a_mat.T + bias
    r = np.linalg.norm(z, axis=1)
    if (r < eps).any():
        return 0.0, 0.0, np.zeros_like(a_mat), np.zeros_like(bias), z, STATUS_DEGENERATE_ADAPTER
    f = z / r[:, None]
    u = f - cent
    rho = np.linalg.norm(u, axis=1)
    if (rho < eps).any():
        return 0.0, 0.0, np.zeros_like(a_mat), np.zeros_like(bias), f, STATUS_DEGENERATE_CENTERING
    fh = u / rho[:, None]

    src = fh if align_sh else f
    logits = (src @ t_mat.T) / tau
    mx = logits.max(axis=1)
    shifted = logits - mx[:, None]
    e = np.exp(shifted)
    denom = e.sum(axis=1)
    p = e / denom[:, None]
    lse = mx + np.log(denom)
    idx = np.arange(n)
    loss_align = float(np.mean(lse - logits[idx, labels]))

    r1 = f - anchor_f
    r2 = fh - anchor_fh
    loss_reg = float(np.mean(np.abs(r1).sum(axis=1) + np.abs(r2).sum(axis=1)))

    coeff = p.copy()
    coeff[idx, labels] -= 1.0
    d_src = (coeff @ t_mat) / tau

    d_fh = reg_weight * np.sign(r2)
    d_f = reg_weight * np.sign(r1)
    if align_sh:
        d_fh = d_fh + d_src
    else:
        d_f = d_f + d_src

    d_u = (d_fh - fh * (fh * d_fh).sum(axis=1, keepdims=True)) / rho[:, None]
    d_f = d_f + d_u
    d_z = (d_f - f * (f * d_f).sum(axis=1, keepdims=True)) / r[:, None]

    grad_a = d_z.T @ x_base / n
    grad_b = d_z.sum(axis=0) / n
    return loss_align, loss_reg, grad_a, grad_b, f, STATUS_OK


# ---------------------------------------------------------------------------
# numba implementations
# ---------------------------------------------------------------------------

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    HAVE_NUMBA = False

    def njit(*args, **kwargs):  # type: ignore[misc]
        def deco(fn):
            return fn

        if args and callable(args[0]):
            return args[0]
        return deco


@njit(cache=True)
def softmax_rows_nb(scores, tau):
    n, c = scores.shape
    out = np.empty((n, c))
    for i in range(n):
        mx = scores[i, 0]
        for j in range(1, c):
            if scores[i, j] > mx:
                mx = scores[i, j]
        total = 0.0
        for j in range(c):
            e = np.exp((scores[i, j] - mx) / tau)
            out[i, j] = e
            total += e
        for j in range(c):
            out[i, j] /= total
    return out


@njit(cache=True)
def adapter_embed_nb(a_mat, bias, x_base, cent, eps):
    n, d = x_base.shape
    f_rows = np.zeros((n, d))
    fh_rows = np.zeros((n, d))
    for i in range(n):
        sq = 0.0
        for k in range(d):
            acc = bias[k]
            for l in range(d):
                acc += a_mat[k, l] * x_base[i, l]
            f_rows[i, k] = acc
            sq += acc * acc
        r = np.sqrt(sq)
        if r < eps:
            return f_rows, fh_rows, STATUS_DEGENERATE_ADAPTER
        sq = 0.0
        for k in range(d):
            f_rows[i, k] /= r
            uk = f_rows[i, k] - cent[i, k]
            fh_rows[i, k] = uk
            sq += uk * uk
        rho = np.sqrt(sq)
        if rho < eps:
            return f_rows, fh_rows, STATUS_DEGENERATE_CENTERING
        for k in range(d):
            fh_rows[i, k] /= rho
    return f_rows, fh_rows, STATUS_OK


@njit(cache=True)
def aggregate_sh_probs_nb(x, cents, t_hat, pi, tau, eps):
    n, d = x.shape
    m = cents.shape[0]
    c = t_hat.shape[0]
    out = np.zeros((n, c))
    degen = np.zeros(n, dtype=np.int64)
    logits = np.empty(c)
    u = np.empty(d)
    for i in range(n):
        for v in range(m):
            sq = 0.0
            for k in range(d):
                u[k] = x[i, k] - cents[v, k]
                sq += u[k] * u[k]
            nrm = np.sqrt(sq)
            w = pi[i, v]
            if nrm < eps:
                degen[i] += 1
                for j in range(c):
                    out[i, j] += w / c
                continue
            mx = -1e300
            for j in range(c):
                acc = 0.0
                for k in range(d):
                    acc += u[k] * t_hat[j, k]
                acc /= nrm * tau
                logits[j] = acc
                if acc > mx:
                    mx = acc
            total = 0.0
            for j in range(c):
                logits[j] = np.exp(logits[j] - mx)
                total += logits[j]
            for j in range(c):
                out[i, j] += w * logits[j] / total
    return out, degen


@njit(cache=True)
def batch_loss_grad_nb(
    a_mat, bias, x_base, x_sh, cent, t_mat, labels, tau, reg_weight, align_sh, eps
):
    n, d = x_base.shape
    c = t_mat.shape[0]
    grad_a = np.zeros((d, d))
    grad_b = np.zeros(d)
    f_rows = np.zeros((n, d))
    loss_align = 0.0
    loss_reg = 0.0

    z = np.empty(d)
    f = np.empty(d)
    fh = np.empty(d)
    logits = np.empty(c)
    p = np.empty(c)
    d_f = np.empty(d)
    d_fh = np.empty(d)

    for i in range(n):
        sq = 0.0
        for k in range(d):
            acc = bias[k]
            for l in range(d):
                acc += a_mat[k, l] * x_base[i, l]
            z[k] = acc
            sq += acc * acc
        r = np.sqrt(sq)
        if r < eps:
            return 0.0, 0.0, grad_a, grad_b, f_rows, STATUS_DEGENERATE_ADAPTER
        sq = 0.0
        for k in range(d):
            f[k] = z[k] / r
            f_rows[i, k] = f[k]
            uk = f[k] - cent[i, k]
            fh[k] = uk
            sq += uk * uk
        rho = np.sqrt(sq)
        if rho < eps:
            return 0.0, 0.0, grad_a, grad_b, f_rows, STATUS_DEGENERATE_CENTERING
        for k in range(d):
            fh[k] /= rho

        mx = -1e300
        for j in range(c):
            acc = 0.0
            if align_sh:
                for k in range(d):
                    acc += fh[k] * t_mat[j, k]
            else:
                for k in range(d):
                    acc += f[k] * t_mat[j, k]
            acc /= tau
            logits[j] = acc
            if acc > mx:
                mx = acc
        total = 0.0
        for j in range(c):
            p[j] = np.exp(logits[j] - mx)
            total += p[j]
        for j in range(c):
            p[j] /= total
        loss_align += mx + np.log(total) - logits[labels[i]]

        for k in range(d):
            r1 = f[k] - x_base[i, k]
            r2 = fh[k] - x_sh[i, k]
            loss_reg += abs(r1) + abs(r2)
            d_f[k] = reg_weight * np.sign(r1)
            d_fh[k] = reg_weight * np.sign(r2)

        for j in range(c):
            coeff = (p[j] - (1.0 if j == labels[i] else 0.0)) / tau
            if align_sh:
                for k in range(d):
                    d_fh[k] += coeff * t_mat[j, k]
            else:
                for k in range(d):
                    d_f[k] += coeff * t_mat[j, k]

        dot = 0.0
        for k in range(d):
            dot += fh[k] * d_fh[k]
        for k in range(d):
            d_f[k] += (d_fh[k] - fh[k] * dot) / rho

        dot = 0.0
        for k in range(d):
            dot += f[k] * d_f[k]
        for k in range(d):
            dz = (d_f[k] - f[k] * dot) / r
            grad_b[k] += dz
            for l in range(d):
                grad_a[k, l] += dz * x_base[i, l]

    inv = 1.0 / n
    loss_align *= inv
    loss_reg *= inv
    for k in range(d):
        grad_b[k] *= inv
        for l in range(d):
            grad_a[k, l] *= inv
    return loss_align, loss_reg, grad_a, grad_b, f_rows, STATUS_OK


# ---------------------------------------------------------------------------
# dispatch
# ---------------------------------------------------------------------------

if NUMBA_ENABLED and HAVE_NUMBA:
    softmax_rows = softmax_rows_nb
    aggregate_sh_probs = aggregate_sh_probs_nb
    batch_loss_grad = batch_loss_grad_nb
else:
    softmax_rows = softmax_rows_np
    aggregate_sh_probs = aggregate_sh_probs_np
    batch_loss_grad = batch_loss_grad_np
