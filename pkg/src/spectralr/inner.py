"""Inner concave maximizations defining g(U), and everything built on them.

For a fixed manifold point U, each application solves an inner problem over
dual variables {Z, s}; the composite M = Z + A*(s) then yields the objective
value, the Euclidean gradient -M M^T U, directional derivatives for
Hessian-vector products, the optimality gap, and the primal reconstruction
W = U U^T M.  M is kept in sparse per-column or factored form and never
materialized as a dense d x T product with its transpose.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .data import antidiag_spread, antidiag_sums

# Entries of sparse constraint duals below this are dropped.
SPARSE_PRUNE = 1e-14


def map_columns(fn, count: int, threads: int = 1) -> list:
    """Apply fn to 0..count-1, optionally on a thread pool, order preserved."""
    if threads <= 1 or count <= 1:
        return [fn(t) for t in range(count)]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(fn, range(count)))


# --------------------------------------------------------------------------
# composite dual operators
# --------------------------------------------------------------------------

class ColumnSparseOperator:
    """M with per-column sparse support: column t holds val[t] at rows idx[t]."""

    def __init__(self, d: int, t: int, idx: list, val: list):
        self.d, self.t = d, t
        self.idx, self.val = idx, val

    def matvec(self, v: np.ndarray) -> np.ndarray:
        out = np.zeros(self.d)
        for t_idx in range(self.t):
            if self.idx[t_idx].size:
                out[self.idx[t_idx]] += self.val[t_idx] * v[t_idx]
        return out

    def rmatvec(self, u: np.ndarray) -> np.ndarray:
        return np.array([self.val[t] @ u[self.idx[t]] if self.idx[t].size else 0.0
                         for t in range(self.t)])

    def ut_m(self, u_mat: np.ndarray) -> np.ndarray:
        """U^T M as an r x T array."""
        out = np.zeros((u_mat.shape[1], self.t))
        for t_idx in range(self.t):
            if self.idx[t_idx].size:
                out[:, t_idx] = u_mat[self.idx[t_idx]].T @ self.val[t_idx]
        return out

    def m_mat(self, a: np.ndarray) -> np.ndarray:
        """M @ a for a T x r array, exploiting column sparsity."""
        out = np.zeros((self.d, a.shape[1]))
        for t_idx in range(self.t):
            if self.idx[t_idx].size:
                out[self.idx[t_idx]] += np.outer(self.val[t_idx], a[t_idx])
        return out

    def frob_norm(self) -> float:
        return float(np.sqrt(sum(v @ v for v in self.val)))


class DenseOperator:
    """M held as a dense d x T array (Hankel S, multi-task composites)."""

    def __init__(self, m: np.ndarray):
        self.m = m
        self.d, self.t = m.shape

    def matvec(self, v):
        return self.m @ v

    def rmatvec(self, u):
        return self.m.T @ u

    def ut_m(self, u_mat):
        return u_mat.T @ self.m

    def m_mat(self, a):
        return self.m @ a

    def frob_norm(self) -> float:
        return float(np.linalg.norm(self.m))


@dataclass
class DualCertificate:
    """Optimal inner duals at a point, plus caches reused by derivatives.

    z is the loss dual (per-column arrays; a single vector for Hankel),
    s the constraint dual (per-column (indices, values) pairs for the
    nonnegative case, the dense d x T matrix for Hankel, else None).
    """

    kind: str
    g_value: float
    m_op: object
    z: object
    s: object = None
    factors: list | None = None      # per-column Cholesky of the r x r system
    xu: list | None = None           # multi-task: cached X_t @ U blocks
    converged: bool = True
    _k_cache: dict = field(default_factory=dict, repr=False)

    def ut_m(self, u_mat: np.ndarray) -> np.ndarray:
        import zlib
        key = zlib.crc32(np.ascontiguousarray(u_mat).tobytes())
        if key not in self._k_cache:
            self._k_cache[key] = self.m_op.ut_m(u_mat)
        return self._k_cache[key]


@dataclass(frozen=True)
class RegularizationParams:
    """Cost parameter C, robust-loss width epsilon, and inner solve budgets."""

    c: float
    epsilon: float = 0.0
    inner_tol: float = 1e-10
    inner_max_iters: int = 2000

    def __post_init__(self):
        if self.c <= 0:
            raise ValueError("C must be positive")
        if self.epsilon < 0:
            raise ValueError("epsilon must be nonnegative")


# --------------------------------------------------------------------------
# per-column inner solvers
# --------------------------------------------------------------------------

def solve_column_square(u_rows: np.ndarray, y: np.ndarray, c: float):
    """Closed-form square-loss dual: (I/(2C) + B B^T) z = y via the r x r system.

    Returns (z, factor) where factor is the Cholesky factorization of
    I_r/(2C) + B^T B, reused for directional derivatives.
    """
    r = u_rows.shape[1]
    b = np.eye(r) / (2.0 * c) + u_rows.T @ u_rows
    factor = cho_factor(b)
    if y.size == 0:
        return np.empty(0), factor
    z = 2.0 * c * (y - u_rows @ cho_solve(factor, u_rows.T @ y))
    return z, factor


def apply_shifted_inverse(u_rows: np.ndarray, factor, c: float, w: np.ndarray) -> np.ndarray:
    """(I/(2C) + B B^T)^{-1} w through the cached r x r factorization."""
    if w.size == 0:
        return w
    return 2.0 * c * (w - u_rows @ cho_solve(factor, u_rows.T @ w))


def soft_threshold(x: float, eps: float) -> float:
    return np.sign(x) * max(abs(x) - eps, 0.0)


def solve_column_box_cd(u_rows: np.ndarray, y: np.ndarray, c: float, eps: float,
                        tol: float, max_sweeps: int, z0: np.ndarray | None = None):
    """Coordinate descent for max_{|z_i|<=C} <y,z> - eps*||z||_1 - 0.5||B^T z||^2.

    Coordinates sweep in ascending index order.  eps = 0 is the plain
    absolute-loss dual and runs the identical arithmetic.  Coordinates with a
    zero row take the boundary value C*sign of their (thresholded) slope.
    Returns (z, converged).
    """
    n = y.size
    if n == 0:
        return np.empty(0), True
    z = np.zeros(n) if z0 is None or z0.shape != y.shape else z0.copy()
    np.clip(z, -c, c, out=z)
    w = u_rows.T @ z
    row_sq = np.einsum("ij,ij->i", u_rows, u_rows)
    converged = False
    for _ in range(max_sweeps):
        max_delta = 0.0
        for i in range(n):
            b_i = y[i] - u_rows[i] @ w + row_sq[i] * z[i]
            if eps > 0.0:
                b_i = soft_threshold(b_i, eps)
            if row_sq[i] <= 0.0:
                z_new = c * np.sign(b_i)
            else:
                z_new = min(max(b_i / row_sq[i], -c), c)
            delta = z_new - z[i]
            if delta != 0.0:
                w += u_rows[i] * delta
                z[i] = z_new
                max_delta = max(max_delta, abs(delta))
        if max_delta <= tol:
            converged = True
            break
    return z, converged


def box_cd_objective(u_rows, y, c, eps, z) -> float:
    return float(y @ z - eps * np.sum(np.abs(z)) - 0.5 * np.sum((u_rows.T @ z) ** 2))


def solve_column_nonneg(u_full: np.ndarray, omega: np.ndarray, y: np.ndarray,
                        c: float, tol: float, max_iters: int,
                        s0: np.ndarray | None = None):
    """Nonnegative constraint dual for one column.

    Alternates a closed-form z for fixed s with projected-gradient ascent in
    s >= 0 using a Barzilai-Borwein step, safeguarded by halving so the inner
    objective never decreases.  Stationarity target is the elementwise
    ||min(s, -grad)||_inf residual, scaled by max(1, ||y||).
    Returns (z, s, factor, converged).
    """
    d = u_full.shape[0]
    u_rows = u_full[omega] if omega.size else u_full[:0]
    r = u_full.shape[1]
    b = np.eye(r) / (2.0 * c) + u_rows.T @ u_rows
    factor = cho_factor(b)

    def z_of(s):
        if omega.size == 0:
            return np.empty(0)
        rhs = y - u_rows @ (u_full.T @ s)
        return 2.0 * c * (rhs - u_rows @ cho_solve(factor, u_rows.T @ rhs))

    def objective(s, z):
        m_r = (u_rows.T @ z if z.size else np.zeros(r)) + u_full.T @ s
        return float(y @ z - z @ z / (4.0 * c) - 0.5 * m_r @ m_r)

    def grad(s, z):
        m_r = (u_rows.T @ z if z.size else np.zeros(r)) + u_full.T @ s
        return -(u_full @ m_r)

    scale = max(1.0, float(np.linalg.norm(y)))
    s = np.zeros(d) if s0 is None else np.maximum(s0, 0.0)
    z = z_of(s)
    obj = objective(s, z)
    g = grad(s, z)
    step = 1.0  # ascent gradient is 1-Lipschitz since ||U||_F = 1
    converged = False
    for _ in range(max_iters):
        if np.max(np.abs(np.minimum(s, -g))) <= tol * scale:
            converged = True
            break
        s_old, g_old, obj_old = s, g, obj
        trial = step
        for _ in range(60):
            s = np.maximum(s_old + trial * g_old, 0.0)
            z = z_of(s)
            obj = objective(s, z)
            if obj >= obj_old - 1e-15 * max(1.0, abs(obj_old)):
                break
            trial *= 0.5
        g = grad(s, z)
        ds = s - s_old
        dg = g - g_old
        denom = -float(ds @ dg)
        num = float(ds @ ds)
        step = num / denom if denom > 1e-300 and num > 0 else 1.0
        step = min(max(step, 1e-12), 1e12)
    else:
        converged = np.max(np.abs(np.minimum(s, -g))) <= tol * scale
    return z, s, factor, converged


def hankel_spread_dual(z: np.ndarray, counts: np.ndarray, d: int, t: int) -> np.ndarray:
    """Constraint dual S for a given z: the equal-share (minimum-Frobenius-
    norm) matrix on each anti-diagonal, so that antidiag_sums(S) = z."""
    return antidiag_spread(z / counts, d, t)


def hankel_gram_apply(u_full: np.ndarray, c: float, counts: np.ndarray,
                      d: int, t: int, z: np.ndarray) -> np.ndarray:
    """(I/(2C) + H* U U^T H) z where H maps z to its equal-share matrix."""
    s = antidiag_spread(z / counts, d, t)
    return antidiag_sums(u_full @ (u_full.T @ s)) / counts + z / (2.0 * c)


def solve_hankel(u_full: np.ndarray, y: np.ndarray, c: float, tol: float,
                 max_iters: int, t: int, z0: np.ndarray | None = None):
    """Single coupled Hankel dual solve by linear conjugate gradient.

    Maximizes <adsum(S), y> - ||adsum(S)||^2/(4C) - 0.5 ||U^T S||_F^2 with S
    pinned to the equal-share representative of its anti-diagonal sums z
    (the free-S maximization is degenerate: beyond small shapes it can zero
    the coupling term for almost every U, which freezes the outer solver).
    The stationarity condition is the SPD system
    (I/(2C) + H* U U^T H) z = y; stops when the residual falls below
    tol * ||y||, restarting once from the current iterate on stagnation.
    Returns (z, converged).
    """
    d = u_full.shape[0]
    counts = np.bincount((np.arange(d)[:, None] + np.arange(t)[None, :]).ravel(),
                         minlength=d + t - 1).astype(float)
    target = tol * max(np.linalg.norm(y), 1e-300)
    z = np.zeros_like(y) if z0 is None or z0.shape != y.shape else z0.copy()

    def run(z_vec, budget):
        res = y - hankel_gram_apply(u_full, c, counts, d, t, z_vec)
        p = res.copy()
        rs = float(res @ res)
        for _ in range(budget):
            if np.sqrt(rs) <= target:
                return z_vec, True
            ap = hankel_gram_apply(u_full, c, counts, d, t, p)
            pap = float(p @ ap)
            if pap <= 0:
                break
            alpha = rs / pap
            z_vec = z_vec + alpha * p
            res = res - alpha * ap
            rs_new = float(res @ res)
            p = res + (rs_new / rs) * p
            rs = rs_new
        return z_vec, np.sqrt(rs) <= target

    z, ok = run(z, max_iters)
    if not ok:
        z, ok = run(z, max_iters)
    return z, ok


def hankel_directional(u_full: np.ndarray, c: float, rhs: np.ndarray,
                       tol: float, max_iters: int, t: int,
                       scale: float) -> np.ndarray:
    """Solve the same SPD system with a perturbation right-hand side."""
    d = u_full.shape[0]
    counts = np.bincount((np.arange(d)[:, None] + np.arange(t)[None, :]).ravel(),
                         minlength=d + t - 1).astype(float)
    target = tol * max(scale, float(np.linalg.norm(rhs)), 1e-300)
    z = np.zeros_like(rhs)
    res = rhs.copy()
    p = res.copy()
    rs = float(res @ res)
    for _ in range(max_iters):
        if np.sqrt(rs) <= target:
            break
        ap = hankel_gram_apply(u_full, c, counts, d, t, p)
        pap = float(p @ ap)
        if pap <= 0:
            break
        alpha = rs / pap
        z = z + alpha * p
        res = res - alpha * ap
        rs_new = float(res @ res)
        p = res + (rs_new / rs) * p
        rs = rs_new
    return z


# --------------------------------------------------------------------------
# derivatives of g
# --------------------------------------------------------------------------

def euc_gradient(u_mat: np.ndarray, cert: DualCertificate) -> np.ndarray:
    """Euclidean gradient of g at U: -M (M^T U), never forming M M^T."""
    k = cert.ut_m(u_mat)
    return -cert.m_op.m_mat(k.T)


def assemble_hess_vec(u_mat: np.ndarray, v_mat: np.ndarray,
                      cert: DualCertificate, mdot_op) -> np.ndarray:
    """Directional derivative of the gradient from M and its derivative Mdot.

    D grad[V] = -(Mdot M^T U + M Mdot^T U + M M^T V).
    """
    k = cert.ut_m(u_mat)
    k_dot = mdot_op.ut_m(u_mat)
    k_v = cert.m_op.ut_m(v_mat)
    return -(mdot_op.m_mat(k.T) + cert.m_op.m_mat((k_dot + k_v).T))


def _interior_box_coords(z: np.ndarray, c: float, eps: float) -> np.ndarray:
    # CD writes clipped coordinates as exactly +-C and thresholded ones as
    # exactly 0, so boundary ties are exact float comparisons here.
    inactive = np.abs(z) < c
    if eps > 0.0:
        inactive &= z != 0.0
    return np.flatnonzero(inactive)


def zdot_column_box(u_rows: np.ndarray, v_rows: np.ndarray, z: np.ndarray,
                    c: float, eps: float) -> np.ndarray:
    """Directional derivative of a box-constrained dual column; clipped
    coordinates stay frozen, interior ones follow the reduced linear system."""
    zdot = np.zeros_like(z)
    if z.size == 0:
        return zdot
    idx = _interior_box_coords(z, c, eps)
    if idx.size == 0:
        return zdot
    w = v_rows @ (u_rows.T @ z) + u_rows @ (v_rows.T @ z)
    gram = u_rows[idx] @ u_rows[idx].T
    sol, *_ = np.linalg.lstsq(gram, -w[idx], rcond=None)
    zdot[idx] = sol
    return zdot


def dot_column_nonneg(u_full: np.ndarray, v_full: np.ndarray, omega: np.ndarray,
                      z: np.ndarray, s: np.ndarray, c: float):
    """Joint (zdot, sdot) for one nonnegative column.

    Differentiates the stationarity system over z and over the strictly
    positive coordinates of s; s-coordinates at zero are kept frozen.
    """
    u_rows = u_full[omega] if omega.size else u_full[:0]
    v_rows = v_full[omega] if omega.size else v_full[:0]
    act = np.flatnonzero(s > 0.0)
    m_r = (u_rows.T @ z if z.size else np.zeros(u_full.shape[1])) + u_full.T @ s
    vz_vs = (v_rows.T @ z if z.size else np.zeros(u_full.shape[1])) + v_full.T @ s
    n, k = z.size, act.size
    if n + k == 0:
        return np.empty(0), np.zeros_like(s)
    u_act = u_full[act]
    kkt = np.zeros((n + k, n + k))
    if n:
        kkt[:n, :n] = np.eye(n) / (2.0 * c) + u_rows @ u_rows.T
        if k:
            kkt[:n, n:] = u_rows @ u_act.T
            kkt[n:, :n] = u_act @ u_rows.T
    if k:
        kkt[n:, n:] = u_act @ u_act.T
    rhs = np.concatenate([
        -(v_rows @ m_r + u_rows @ vz_vs) if n else np.empty(0),
        -(v_full[act] @ m_r + u_act @ vz_vs) if k else np.empty(0),
    ])
    sol, *_ = np.linalg.lstsq(kkt, rhs, rcond=None)
    sdot = np.zeros_like(s)
    sdot[act] = sol[n:]
    return sol[:n], sdot


# --------------------------------------------------------------------------
# certificate-level operations
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class GapReport:
    gap: float
    sigma1: float
    relative_gap: float
    g_value: float
    power_converged: bool


def top_singular_value_sq(m_op, block: int = 4, tol: float = 1e-13,
                          max_iters: int = 500) -> tuple[float, bool]:
    """Largest eigenvalue of M^T M (or M M^T) by block power iteration.

    A single power vector converges too slowly when the top of the spectrum
    is clustered, which is exactly the near-optimal regime here, so a small
    deterministic block is iterated instead (column 0 is the all-ones
    direction).  Convergence is certified by the top Ritz residual, which
    brackets the true eigenvalue within +-residual.
    """
    small = min(m_op.d, m_op.t)
    if m_op.d <= m_op.t:
        op = lambda x: m_op.matvec(m_op.rmatvec(x))
    else:
        op = lambda x: m_op.rmatvec(m_op.matvec(x))
    b = min(block, small)
    basis = np.ones((small, b))
    for j in range(1, b):
        # deterministic, mutually independent start directions
        basis[:, j] = np.cos(np.arange(small) * (j * np.pi / small)) + j / (j + 1.0)
    basis, _ = np.linalg.qr(basis)
    lam = 0.0
    converged = False
    for _ in range(max_iters):
        image = np.column_stack([op(basis[:, j]) for j in range(basis.shape[1])])
        small_h = basis.T @ image
        small_h = 0.5 * (small_h + small_h.T)
        evals, evecs = np.linalg.eigh(small_h)
        lam = float(evals[-1])
        top = basis @ evecs[:, -1]
        resid = float(np.linalg.norm(image @ evecs[:, -1] - lam * top))
        if resid <= tol * max(abs(lam), 1e-300):
            converged = True
            break
        norms = np.linalg.norm(image, axis=0)
        if np.max(norms) == 0.0:
            return 0.0, True
        basis, _ = np.linalg.qr(image)
    return max(lam, 0.0), converged


def duality_gap(u_mat: np.ndarray, cert: DualCertificate,
                power_tol: float = 1e-13, max_power_iters: int = 500) -> GapReport:
    """Optimality gap 0.5*(sigma_1(M)^2 - ||U^T M||_F^2) of the current point.

    sigma_1 comes from block power iteration on M^T M (or M M^T, whichever
    side is smaller); the block covers the rank so clustered top singular
    values still resolve.  The relative gap divides by max(1, |g|).
    """
    m = cert.m_op
    k = cert.ut_m(u_mat)
    ut_m_sq = float(np.sum(k * k))
    block = min(k.shape[0] + 3, m.d, m.t)
    lam, converged = top_singular_value_sq(m, block, power_tol, max_power_iters)
    sigma1 = float(np.sqrt(lam))
    gap = 0.5 * (lam - ut_m_sq)
    rel = gap / max(1.0, abs(cert.g_value))
    return GapReport(gap, sigma1, rel, cert.g_value, converged)


@dataclass(frozen=True)
class PrimalFactor:
    """Primal reconstruction W = U K held as the pair (U, K = U^T M)."""

    u: np.ndarray  # d x r
    k: np.ndarray  # r x T

    def entries(self, rows, cols) -> np.ndarray:
        return np.sum(self.u[np.asarray(rows)] * self.k[:, np.asarray(cols)].T, axis=1)

    def dense(self) -> np.ndarray:
        return self.u @ self.k

    def column(self, t_idx: int) -> np.ndarray:
        return self.u @ self.k[:, t_idx]


def reconstruct_primal(u_mat: np.ndarray, cert: DualCertificate) -> PrimalFactor:
    return PrimalFactor(u_mat, cert.ut_m(u_mat))


# --------------------------------------------------------------------------
# test oracles: primal objective and the squared-trace-norm identity
# --------------------------------------------------------------------------

def nuclear_norm_sq(w: np.ndarray) -> float:
    """Squared sum of singular values, by dense SVD."""
    return float(np.sum(np.linalg.svd(w, compute_uv=False)) ** 2)


def primal_objective(w: np.ndarray, kind: str, data, params: RegularizationParams) -> float:
    """Objective the dual certifies: C * loss + half the squared nuclear norm.

    The one-half factor on the regularizer is what pairs with the inner
    maximization used throughout; doubling C recovers the unhalved form.
    Hankel inputs are reduced to their generating vector by anti-diagonal
    averaging, so the value is meaningful only near structural feasibility.
    """
    c, eps = params.c, params.epsilon
    if kind in ("completion", "robust_l1", "robust_eps_svr", "nonneg_completion"):
        loss = 0.0
        for t_idx in range(data.t):
            idx, y = data.col_indices[t_idx], data.col_values[t_idx]
            if idx.size == 0:
                continue
            resid = y - w[idx, t_idx]
            if kind == "robust_l1":
                loss += np.sum(np.abs(resid))
            elif kind == "robust_eps_svr":
                loss += np.sum(np.maximum(np.abs(resid) - eps, 0.0))
            else:
                loss += np.sum(resid ** 2)
    elif kind == "hankel":
        from .data import antidiag_means
        loss = float(np.sum((np.asarray(data) - antidiag_means(w)) ** 2))
    elif kind == "mtfl":
        loss = 0.0
        for t_idx, (x_t, y_t) in enumerate(data):
            loss += float(np.sum((y_t - x_t @ w[:, t_idx]) ** 2))
    else:
        raise ValueError(f"unknown problem kind {kind!r}")
    return float(c * loss + 0.5 * nuclear_norm_sq(w))


def variational_theta_residual(w: np.ndarray) -> float:
    """|<pinv(Theta) W, W> - ||W||_*^2| for Theta = sqrt(W W^T)/trace(...).

    The square root sqrt(W W^T) and its pseudo-inverse are built explicitly
    from the singular value decomposition of W (forming the Gram matrix first
    would square the condition number), then the inner product is evaluated
    as a dense matrix product.
    """
    p, sv, _ = np.linalg.svd(w, full_matrices=False)
    tr = np.sum(sv)
    cutoff = sv.max(initial=0.0) * max(w.shape) * np.finfo(float).eps
    keep = sv > cutoff
    theta_pinv = (p[:, keep] * (tr / sv[keep])) @ p[:, keep].T
    val = float(np.tensordot(theta_pinv @ w, w, axes=2))
    return abs(val - nuclear_norm_sq(w))
