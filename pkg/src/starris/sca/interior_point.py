"""Primal-dual interior-point solver for the slack-augmented SCA surrogate.

Variables are stacked as ``v = [z, eta, alpha]``.  The problem solved is

    minimize   -sum log(1 + eta) / ln 2 - c @ z
    subject to interference, surrogate-signal, alpha >= 0,
               ball and nonnegativity constraints

with all constraints written as ``f_i(v) <= 0``.  The iteration follows the
standard primal-dual scheme: a Newton step on the modified KKT residual,
a dual-positivity-preserving step bound, strict primal feasibility
backtracking and a residual-decrease line search.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .subproblem import LN2, ScaSubproblem


@dataclass
class InnerResult:
    z: np.ndarray
    eta: np.ndarray
    alpha: np.ndarray
    status: str
    iterations: int
    gap: float


class _Structure:
    """Constraint evaluation for one surrogate; everything the Newton step needs."""

    def __init__(self, sub: ScaSubproblem):
        self.sub = sub
        k, n = sub.n_users, sub.n_vars
        self.k, self.n = k, n
        self.nv = n + 2 * k
        A = sub.A
        self.Ar, self.Ai = A.real, A.imag
        off = ~np.eye(k, dtype=bool)
        # rows of the interference quadratic forms, weight mask per user
        self.R = np.concatenate([self.Ar, self.Ai], axis=1)  # (K, 2K, n)
        self.offmask = np.concatenate([off, off], axis=1).astype(float)  # (K, 2K)
        akk = A[np.arange(k), np.arange(k)]  # (K, n)
        y0 = akk @ sub.z
        self.y0 = y0
        self.lin_grad = -2 * (y0.real[:, None] * akk.real + y0.imag[:, None] * akk.imag)  # (K, n)
        self.lin_const = np.abs(y0) ** 2  # -2Re(conj y0 (y - y0)) - |y0|^2 = lin_grad@z + |y0|^2
        self.d = sub.alpha - sub.eta
        self.groups = sub.ball_groups
        self.nonneg_idx = np.flatnonzero(sub.nonneg)
        self.c = sub.linear_objective()
        self.m = 3 * k + len(self.groups) + len(self.nonneg_idx)
        self.iz = slice(0, n)
        self.ie = slice(n, n + k)
        self.ia = slice(n + k, n + 2 * k)
        g, p = self.groups.shape
        self.ball_rows = np.repeat(3 * k + np.arange(g), p)
        self.ball_cols = self.groups.ravel()
        self.J0 = self._static_jacobian()

    def split(self, v):
        return v[self.iz], v[self.ie], v[self.ia]

    def constraints(self, v) -> np.ndarray:
        z, eta, alpha = self.split(v)
        y = np.einsum("kjn,n->kj", self.R, z)
        interf = np.sum(self.offmask * y**2, axis=1) + self.sub.noise - alpha
        d = self.d
        surr = self.lin_grad @ z + self.lin_const + 0.25 * ((alpha + eta) ** 2 - 2 * d * (alpha - eta) + d**2)
        ball = np.sum(z[self.groups] ** 2, axis=1) - 1.0
        return np.concatenate([interf, surr, -alpha, ball, -z[self.nonneg_idx]])

    def in_domain(self, v) -> bool:
        return bool(np.all(v[self.ie] > -1.0))

    def objective(self, v) -> float:
        z, eta, _ = self.split(v)
        return float(-np.sum(np.log1p(eta)) / LN2 - self.c @ z)

    def grad_objective(self, v) -> np.ndarray:
        g = np.zeros(self.nv)
        g[self.iz] = -self.c
        g[self.ie] = -1.0 / ((1.0 + v[self.ie]) * LN2)
        return g

    def _static_jacobian(self) -> np.ndarray:
        k, n = self.k, self.n
        J = np.zeros((self.m, self.nv))
        J[np.arange(k), n + k + np.arange(k)] = -1.0
        J[k : 2 * k, :n] = self.lin_grad
        J[2 * k + np.arange(k), n + k + np.arange(k)] = -1.0
        J[3 * k + len(self.groups) + np.arange(len(self.nonneg_idx)), self.nonneg_idx] = -1.0
        return J

    def jacobian(self, v) -> np.ndarray:
        z, eta, alpha = self.split(v)
        k, n = self.k, self.n
        J = self.J0.copy()
        y = np.einsum("kjn,n->kj", self.R, z)
        J[:k, :n] = 2 * np.einsum("kj,kjn->kn", self.offmask * y, self.R)
        ak = np.arange(k)
        J[k + ak, n + ak] = 0.5 * (alpha + eta) + 0.5 * self.d
        J[k + ak, n + k + ak] = 0.5 * (alpha + eta) - 0.5 * self.d
        J[self.ball_rows, self.ball_cols] = 2 * z[self.ball_cols]
        return J

    def hessian_lagrangian(self, v, lam) -> np.ndarray:
        k, n = self.k, self.n
        H = np.zeros((self.nv, self.nv))
        eta = v[self.ie]
        H[self.ie, self.ie] = np.diag(1.0 / ((1.0 + eta) ** 2 * LN2))
        w = self.offmask * lam[:k, None]  # (K, 2K)
        Rw = (self.R * np.sqrt(w)[:, :, None]).reshape(-1, n)
        H[:n, :n] += 2 * Rw.T @ Rw
        lt = lam[k : 2 * k]
        ie = n + np.arange(k)
        ia = n + k + np.arange(k)
        for idx_a in (ie, ia):
            for idx_b in (ie, ia):
                H[idx_a, idx_b] += 0.5 * lt
        diag = np.zeros(n)
        np.add.at(diag, self.ball_cols, 2 * lam[self.ball_rows])
        H[np.arange(n), np.arange(n)] += diag
        return H


def strictly_feasible_start(sub: ScaSubproblem, shrink: float = 1e-3):
    """A strictly feasible point of the surrogate near its linearization point.

    ``z`` is pulled slightly toward the origin (inside every ball, still
    nonnegative), ``alpha`` is set just above the interference it must
    cover and ``eta`` just below the largest value the surrogate allows.
    Returns ``None`` when no such point exists near the linearization point.
    """
    st = _Structure(sub)
    z = sub.z * (1.0 - shrink)
    ball = np.sum(z[st.groups] ** 2, axis=1)
    if np.any(ball >= 1.0):
        z = z / np.sqrt(ball.max()) * (1.0 - shrink)
    if st.nonneg_idx.size:
        z[st.nonneg_idx] = np.maximum(z[st.nonneg_idx], shrink)
        ball = np.sum(z[st.groups] ** 2, axis=1)
        over = ball >= 1.0 - shrink
        if np.any(over):
            fix = np.zeros(z.size)
            fix[st.groups[over].ravel()] = 1.0
            z = np.where(fix > 0, z * np.sqrt((1.0 - shrink) / ball.max()), z)
            z[st.nonneg_idx] = np.maximum(z[st.nonneg_idx], shrink * 1e-3)
            if np.any(np.sum(z[st.groups] ** 2, axis=1) >= 1.0):
                return None
    y = np.einsum("kjn,n->kj", st.R, z)
    interf = np.sum(st.offmask * y**2, axis=1) + sub.noise
    alpha = interf * (1.0 + shrink) + 1e-12
    lin = st.lin_grad @ z + st.lin_const  # = -(2Re(conj y0 y) - |y0|^2)
    L = -lin
    d = st.d
    # 0.25((a+e)^2 - 2d(a-e) + d^2) <= L  <=>  (a + e - d)^2 + 4 d e... solve for e
    # with u = a + e: 0.25(u^2 - 2d(2a - u) + d^2) = L  ->  u^2 + 2du + d^2 - 4ad = 4L
    disc = 4 * L + 4 * alpha * d
    if np.any(disc <= 0):
        return None
    u = -d + np.sqrt(disc)
    eta_max = u - alpha
    eta = eta_max - shrink * (1.0 + np.abs(eta_max))
    if np.any(eta <= -1.0 + 1e-12):
        return None
    v = np.concatenate([z, eta, alpha])
    if np.any(st.constraints(v) >= 0):
        return None
    return v


def solve_convex_subproblem(
    sub: ScaSubproblem,
    start: np.ndarray | None = None,
    tol: float = 1e-10,
    max_iter: int = 80,
    mu: float = 10.0,
) -> InnerResult:
    """Solve one surrogate; falls back to the start point if no progress is possible.

    ``start`` must be strictly feasible when given; otherwise one is built
    from the linearization point.  Stops when the surrogate duality gap is
    below ``tol * (1 + |objective|)``, where the objective excludes the
    constant ``c @ z_lin`` carried by the linearized penalty.
    """
    st = _Structure(sub)
    v = strictly_feasible_start(sub) if start is None else np.asarray(start, float).copy()
    if v is None or np.any(st.constraints(v) >= 0):
        return InnerResult(sub.z.copy(), sub.eta.copy(), sub.alpha.copy(), "infeasible-start", 0, np.inf)

    f = st.constraints(v)
    J = st.jacobian(v)
    lam = np.minimum(1.0 / -f, 1e8)
    m = st.m
    status = "max-iter"
    it = 0
    gap = np.inf
    mu_eff = mu
    gap_floor = 16 * np.finfo(float).eps * float(np.abs(st.c).sum())
    history = []
    for it in range(1, max_iter + 1):
        gap = float(-f @ lam)
        history.append(gap)
        # jamming: a constraint reached the boundary with a vanishing multiplier
        if it > 20 and gap > 0.9 * history[-11]:
            status = "slow"
            break
        t = mu_eff * m / gap
        g0 = st.grad_objective(v)
        r_dual = g0 + J.T @ lam
        r_cent = -lam * f - 1.0 / t
        scale = max(1.0, np.linalg.norm(g0))
        # c @ z_lin is a constant offset of the penalized objective; the gap is judged against the
        # remainder, with a floor at the rounding level of the large linear term
        obj = st.objective(v) + st.c @ sub.z
        if gap < tol * (1.0 + abs(obj)) + gap_floor and np.linalg.norm(r_dual) < 1e-7 * scale:
            status = "optimal"
            break
        H = st.hessian_lagrangian(v, lam) + J.T @ ((lam / -f)[:, None] * J)
        rhs = -(g0 + J.T @ (1.0 / (t * -f)))
        try:
            dv = np.linalg.solve(H, rhs)
        except np.linalg.LinAlgError:
            dv = np.linalg.lstsq(H, rhs, rcond=None)[0]
        if not np.all(np.isfinite(dv)):
            status = "numerical"
            break
        jdv = J @ dv
        dlam = -lam - 1.0 / (t * f) - (lam / f) * jdv

        neg = dlam < 0
        s = min(1.0, float(np.min(-lam[neg] / dlam[neg]))) if np.any(neg) else 1.0
        s = 0.99 * min(s, _max_feasible_step(st, v, dv, f, jdv))
        res0 = np.hypot(np.linalg.norm(r_dual), np.linalg.norm(r_cent))
        while s > 1e-14:
            vn = v + s * dv
            ln = lam + s * dlam
            fn = st.constraints(vn)
            if st.in_domain(vn) and np.all(fn < 0):
                Jn = st.jacobian(vn)
                rn = np.hypot(np.linalg.norm(st.grad_objective(vn) + Jn.T @ ln), np.linalg.norm(-ln * fn - 1.0 / t))
                if rn <= (1 - 0.01 * s) * res0:
                    break
            s *= 0.5
        else:
            status = "stalled"
            break
        v, lam, f, J = vn, ln, fn, Jn
        # short steps mean the iterate is far from the central path: slow the target down
        mu_eff = max(1.5, mu_eff / 2) if s < 0.2 else min(mu, mu_eff * 2)
    z, eta, alpha = st.split(v)
    return InnerResult(z.copy(), eta.copy(), alpha.copy(), status, it, gap)


def _max_feasible_step(st: _Structure, v, dv, f, jdv) -> float:
    """Largest step keeping every constraint negative.

    Each constraint is exactly quadratic along a line, so
    ``f(v + s dv) = f + s * jdv + s^2 * q`` with ``q`` read off one evaluation.
    The log domain ``eta > -1`` is linear and handled the same way.
    """
    q = st.constraints(v + dv) - f - jdv
    steps = [1.0]
    lin = np.abs(q) < 1e-14 * (np.abs(f) + np.abs(jdv) + 1.0)
    m = lin & (jdv > 0)
    if np.any(m):
        steps.append(float(np.min(-f[m] / jdv[m])))
    quad = ~lin
    if np.any(quad):
        a, b, c = q[quad], jdv[quad], f[quad]
        disc = b * b - 4 * a * c
        ok = disc >= 0
        root = np.full(a.shape, np.inf)
        sq = np.sqrt(np.where(ok, disc, 0.0))
        # numerically stable positive root of a s^2 + b s + c with c < 0
        den = -b - np.sign(b + (b == 0)) * sq
        r1 = np.where(den != 0, 2 * c / np.where(den != 0, den, 1.0), np.inf)
        r2 = np.where(a != 0, den / (2 * np.where(a != 0, a, 1.0)), np.inf)
        cand = np.stack([r1, r2])
        cand = np.where((cand > 0) & ok, cand, np.inf)
        root = np.min(cand, axis=0)
        steps.append(float(np.min(root)))
    de = dv[st.ie]
    if np.any(de < 0):
        steps.append(float(np.min((1.0 + v[st.ie][de < 0]) / -de[de < 0])))
    return min(steps)
