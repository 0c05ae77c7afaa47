"""Small numerical building blocks shared by the analysis modules."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import StepUnstable


def fd_jacobian(func, x: np.ndarray, columns=None, rel_step: float = 1e-6) -> np.ndarray:
    """Central-difference Jacobian of ``func`` at ``x``.

    Column ``j`` perturbs ``x[j]`` by ``rel_step * |x[j]|`` (or ``rel_step``
    when ``x[j]`` is zero) with every other coordinate held fixed, so ``x``
    leaves the simplex during the probe.
    """
    x = np.asarray(x, dtype=float)
    cols = range(x.size) if columns is None else list(columns)
    out = []
    for j in cols:
        h = rel_step * abs(x[j]) if x[j] != 0 else rel_step
        xp = x.copy()
        xm = x.copy()
        xp[j] += h
        xm[j] -= h
        out.append((np.asarray(func(xp)) - np.asarray(func(xm))) / (2 * h))
    return np.column_stack(out) if out else np.zeros((0, 0))


def helmert_basis(k: int) -> np.ndarray:
    """Orthonormal basis (as columns) of the vectors in R^k summing to zero."""
    P = np.zeros((k, k - 1))
    for j in range(1, k):
        P[:j, j - 1] = 1.0
        P[j, j - 1] = -float(j)
        P[:, j - 1] /= np.sqrt(j * (j + 1))
    return P


def jacobi_eigh(S: np.ndarray, tol: float = 1e-14, max_sweeps: int = 100):
    """Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.

    Returns ascending eigenvalues and the matching eigenvectors as columns.
    """
    A = np.array(S, dtype=float)
    n = A.shape[0]
    V = np.eye(n)
    if n == 0:
        return np.zeros(0), V
    scale = max(np.abs(A).max(), np.finfo(float).tiny)
    for _ in range(max_sweeps):
        off = np.sqrt(np.sum(np.triu(A, 1) ** 2))
        if off <= tol * scale:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = A[p, q]
                if abs(apq) <= 1e-300:
                    continue
                theta = (A[q, q] - A[p, p]) / (2.0 * apq)
                t = np.sign(theta) / (abs(theta) + np.sqrt(theta * theta + 1.0)) if theta else 1.0
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                # A <- R^T A R with R the (p, q) rotation
                Ap = A[:, p].copy()
                Aq = A[:, q].copy()
                A[:, p] = c * Ap - s * Aq
                A[:, q] = s * Ap + c * Aq
                Ap = A[p, :].copy()
                Aq = A[q, :].copy()
                A[p, :] = c * Ap - s * Aq
                A[q, :] = s * Ap + c * Aq
                Vp = V[:, p].copy()
                V[:, p] = c * Vp - s * V[:, q]
                V[:, q] = s * Vp + c * V[:, q]
    w = np.diag(A).copy()
    order = np.argsort(w)
    return w[order], V[:, order]


@dataclass(frozen=True)
class SimplexRun:
    times: np.ndarray
    states: np.ndarray
    converged: bool
    field_norm: float


def _clip_renormalize(y: np.ndarray, floor: float, t: float) -> np.ndarray:
    low = y.min(axis=-1)
    if np.any(low < floor):
        raise StepUnstable(
            f"weight {float(np.min(low)):.3e} below {floor:g} at t={t:.6g}; reduce the time step"
        )
    if np.any(low < 0):
        y = np.where(y < 0, 0.0, y)
    return y / y.sum(axis=-1, keepdims=True)


def rk4_simplex(field, y0, dt: float, t_max: float, eps: float,
                record_every: int = 1, floor: float = -1e-12) -> SimplexRun:
    """Fixed-step RK4 for a tangent vector field on a simplex.

    After each step, components in ``[floor, 0)`` are zeroed and the vector is
    rescaled to unit sum; anything below ``floor`` raises ``StepUnstable``.
    The run stops once the sup norm of the field drops below ``eps``.
    """
    y = np.array(y0, dtype=float)
    n_steps = int(np.ceil(t_max / dt - 1e-9))
    half, sixth = 0.5 * dt, dt / 6.0
    k1 = field(y)
    norm = float(np.abs(k1).max())
    times = [0.0]
    states = [y.copy()]
    t = 0.0
    step = 0
    while norm >= eps and step < n_steps:
        k2 = field(y + half * k1)
        k3 = field(y + half * k2)
        k4 = field(y + dt * k3)
        step += 1
        t = step * dt
        y = y + sixth * (k1 + 2.0 * (k2 + k3) + k4)
        if y.min() < 0.0:
            y = _clip_renormalize(y, floor, t)
        else:
            y /= y.sum()
        k1 = field(y)
        norm = float(np.abs(k1).max())
        if step % record_every == 0:
            times.append(t)
            states.append(y.copy())
    if times[-1] != t:
        times.append(t)
        states.append(y.copy())
    return SimplexRun(np.array(times), np.array(states), norm < eps, norm)


def rk4_simplex_batch(field, Y0: np.ndarray, dt: float, t_max: float, eps: float,
                      floor: float = -1e-12):
    """Batched :func:`rk4_simplex` returning only terminal states.

    Rows that meet the convergence test are frozen; the rest keep stepping.
    Each row follows the same arithmetic as a single run, so results do not
    depend on how samples are grouped into batches.
    """
    Y = np.array(Y0, dtype=float)
    n_steps = int(np.ceil(t_max / dt - 1e-9))
    K1 = field(Y)
    norms = np.abs(K1).max(axis=1)
    idx = np.flatnonzero(norms >= eps)
    y, k1 = Y[idx], K1[idx]
    step = 0
    while idx.size and step < n_steps:
        k2 = field(y + 0.5 * dt * k1)
        k3 = field(y + 0.5 * dt * k2)
        k4 = field(y + dt * k3)
        step += 1
        y = _clip_renormalize(y + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4), floor, step * dt)
        k1 = field(y)
        nrm = np.abs(k1).max(axis=1)
        done = nrm < eps
        # write back and compact only when the active set changes
        if done.any() or step == n_steps:
            Y[idx] = y
            norms[idx] = nrm
            keep = ~done
            idx, y, k1 = idx[keep], y[keep], k1[keep]
    return Y, norms < eps, norms
