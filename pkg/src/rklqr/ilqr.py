"""Iterative LQR for RK-discretized nonlinear quadratic problems.

Each iteration linearizes the discrete stage/transition equations at the
current iterate, solves the resulting affine-quadratic subproblem by a
backward value recursion plus forward sweep, and backtracks along the
feasible curve U + alpha (Utilde - U).  The search direction equals
-W(U)^{-1} J_d'(U), so the loop is a quasi-Newton method.

After convergence, node controls are recovered from the costates of the
discrete adjoint system (back-substituted with the tableau's symplectic
partner) through the stationarity equation Ju'p + Ru = 0.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from . import tableau as tableau_mod
from .dlqr import stage_cost_blocks
from .errors import (
    BackwardFailure,
    CostateFailure,
    LineSearchFailed,
    NodeControlFailure,
    NotConverged,
    RolloutDiverged,
    StepTooLarge,
)
from .problem import cross_term

STAGE_FP_TOL = 1e-12
STAGE_FP_MAXIT = 100


@dataclass(frozen=True)
class IterateState:
    """A point on the feasible manifold: controls, stage states, node states."""

    U: np.ndarray  # (N, s*m) internal-stage controls
    X: np.ndarray  # (N, s*n) internal-stage states
    x: np.ndarray  # (N+1, n) node states
    Jd: float
    h: float

    @property
    def N(self) -> int:
        return self.U.shape[0]


@dataclass(frozen=True)
class LinearizedStep:
    """Jacobian data of one discrete step at the linearization point.

    X_k = E x_k + F U_k + D1 and x_{k+1} = G x_k + H U_k + D2 describe the
    tangent plane; D1/D2 vanish when the underlying maps are linear.
    """

    A1: np.ndarray
    A2: np.ndarray
    B: np.ndarray
    C: np.ndarray
    E: np.ndarray
    F: np.ndarray
    G: np.ndarray
    H: np.ndarray
    D1: np.ndarray
    D2: np.ndarray


@dataclass(frozen=True)
class AffineBackwardPass:
    """Affine value data V_k(x) = 1/2 x'M_k x + Y_k'x + const and gains."""

    M: list  # N+1 symmetric matrices
    Y: list  # N+1 vectors
    U1: list  # N feedback gain matrices (s*m, n)
    U2: list  # N feedforward vectors (s*m,)


@dataclass(frozen=True)
class CostateTrajectory:
    """Node costates p_k and stacked internal-stage costates p_ki."""

    p: np.ndarray  # (N+1, n)
    p_stage: np.ndarray  # (N, s*n)


@dataclass(frozen=True)
class IterateRecord:
    """One accepted iteration of solve(): cost after the step plus diagnostics."""

    iteration: int
    Jd: float
    grad_inf_norm: float
    step_norm: float
    alpha: float
    slope: float  # directional derivative J_d'(U)' dU, negative for descent


def _running_cost(prob, xs, us, b, h):
    """h * sum_i b_i C(x_i, u_i) over the stage values of one step."""
    S = cross_term(prob)
    total = 0.0
    for i in range(b.size):
        xi, ui = xs[i], us[i]
        ci = 0.5 * (xi @ prob.Q @ xi) + 0.5 * (ui @ prob.R @ ui)
        if S is not None:
            ci += xi @ S @ ui
        total += b[i] * ci
    return h * total


def evaluate_cost(prob, tab, U, X, x) -> float:
    """Discrete cost of arbitrary (U, X, x) stacks (not necessarily feasible)."""
    N = U.shape[0]
    h = prob.tf / N
    n, m = prob.n, prob.m
    total = 0.0
    for k in range(N):
        total += _running_cost(prob, X[k].reshape(-1, n), U[k].reshape(-1, m), tab.b, h)
    xN = x[-1]
    return float(total + 0.5 * xN @ prob.M @ xN)


def make_state(prob, tab, U, X, x) -> IterateState:
    """Package existing stacks (e.g. from a direct solve) as an IterateState."""
    U = np.asarray(U, dtype=float).reshape(-1, tab.s * prob.m)
    X = np.asarray(X, dtype=float).reshape(U.shape[0], tab.s * prob.n)
    x = np.asarray(x, dtype=float).reshape(U.shape[0] + 1, prob.n)
    return IterateState(U=U, X=X, x=x, Jd=evaluate_cost(prob, tab, U, X, x), h=prob.tf / U.shape[0])


def _solve_stages(prob, tab, xk, us, h):
    """Stage states x_ki = x_k + h sum_j a_ij f(x_kj, u_kj) for one step.

    Explicit tableaus resolve by forward substitution; implicit ones by
    fixed-point iteration (tolerance STAGE_FP_TOL, cap STAGE_FP_MAXIT).
    """
    s, n = tab.s, prob.n
    a = tab.a
    xs = np.empty((s, n))
    if tab.is_explicit:
        fs = np.empty((s, n))
        for i in range(s):
            xi = xk.copy()
            for j in range(i):
                if a[i, j] != 0.0:
                    xi = xi + (h * a[i, j]) * fs[j]
            xs[i] = xi
            fs[i] = prob.f(xi, us[i])
        return xs, fs
    xs[:] = xk
    scale = 1.0 + np.abs(xk).max(initial=0.0)
    for _ in range(STAGE_FP_MAXIT):
        fs = np.array([prob.f(xs[i], us[i]) for i in range(s)])
        new = xk[None, :] + h * (a @ fs)
        delta = np.abs(new - xs).max()
        xs = new
        if delta <= 0.1 * STAGE_FP_TOL * scale:
            fs = np.array([prob.f(xs[i], us[i]) for i in range(s)])
            return xs, fs
    raise RolloutDiverged(f"stage fixed point did not contract at h = {h!r}")


def rollout(prob, tab, N: int, U) -> IterateState:
    """Integrate the discrete dynamics under stage controls U and price them."""
    n, m, s = prob.n, prob.m, tab.s
    h = prob.tf / N
    U = np.asarray(U, dtype=float).reshape(N, s * m)
    x = np.zeros((N + 1, n))
    X = np.zeros((N, s * n))
    x[0] = prob.x0
    cost = 0.0
    for k in range(N):
        us = U[k].reshape(s, m)
        xs, fs = _solve_stages(prob, tab, x[k], us, h)
        X[k] = xs.ravel()
        x[k + 1] = x[k] + h * (tab.b @ fs)
        cost += _running_cost(prob, xs, us, tab.b, h)
    xN = x[N]
    Jd = float(cost + 0.5 * xN @ prob.M @ xN)
    return IterateState(U=U, X=X, x=x, Jd=Jd, h=h)


def linearize(prob, tab, state: IterateState):
    """Tangent-plane step data at every step of the iterate."""
    n, m, s = prob.n, prob.m, tab.s
    h, N = state.h, state.N
    a, b = tab.a, tab.b
    Z = np.tile(np.eye(n), (s, 1))
    steps = []
    for k in range(N):
        xs = state.X[k].reshape(s, n)
        us = state.U[k].reshape(s, m)
        Jx = np.array([prob.jac_x(xs[i], us[i]) for i in range(s)])  # (s, n, n)
        Ju = np.array([prob.jac_u(xs[i], us[i]) for i in range(s)])  # (s, n, m)
        # block (i, j) of A1 is h a_ij Jx_j; same pattern for A2 with Ju
        A1 = (h * a[:, :, None, None] * Jx[None, :]).transpose(0, 2, 1, 3).reshape(s * n, s * n)
        A2 = (h * a[:, :, None, None] * Ju[None, :]).transpose(0, 2, 1, 3).reshape(s * n, s * m)
        B = (h * b[:, None, None] * Jx).transpose(1, 0, 2).reshape(n, s * n)
        C = (h * b[:, None, None] * Ju).transpose(1, 0, 2).reshape(n, s * m)
        try:
            EF = np.linalg.solve(np.eye(s * n) - A1, np.hstack([Z, A2]))
        except np.linalg.LinAlgError:
            raise StepTooLarge(f"singular stage coupling at step {k}, h = {h!r}", h=h) from None
        E, F = EF[:, :n], EF[:, n:]
        G = np.eye(n) + B @ E
        H = B @ F + C
        D1 = state.X[k] - E @ state.x[k] - F @ state.U[k]
        D2 = state.x[k + 1] - G @ state.x[k] - H @ state.U[k]
        steps.append(LinearizedStep(A1=A1, A2=A2, B=B, C=C, E=E, F=F, G=G, H=H, D1=D1, D2=D2))
    return steps


def backward(prob, tab, steps) -> AffineBackwardPass:
    """Backward recursion of the affine-quadratic value function.

    Produces feedback U_k = U1_k x_k + U2_k minimizing the cost over the
    tangent plane.  The scalar value offset is never needed and not tracked.
    """
    N = len(steps)
    h = prob.tf / N
    Qh, Rh, Sh = stage_cost_blocks(prob, tab.b, h)
    M = [None] * (N + 1)
    Y = [None] * (N + 1)
    U1 = [None] * N
    U2 = [None] * N
    M[N] = prob.M.copy()
    Y[N] = np.zeros(prob.n)
    for k in range(N - 1, -1, -1):
        st = steps[k]
        E, F, G, H, D1, D2 = st.E, st.F, st.G, st.H, st.D1, st.D2
        K = F.T @ Qh @ F + Rh + H.T @ M[k + 1] @ H
        lin_x = F.T @ Qh @ E + H.T @ M[k + 1] @ G
        lin_0 = F.T @ Qh @ D1 + H.T @ (M[k + 1] @ D2 + Y[k + 1])
        if Sh is not None:
            K = K + F.T @ Sh + Sh.T @ F
            lin_x = lin_x + Sh.T @ E
            lin_0 = lin_0 + Sh.T @ D1
        K = 0.5 * (K + K.T)
        try:
            cho = scipy.linalg.cho_factor(K)
        except scipy.linalg.LinAlgError:
            raise BackwardFailure(f"stage Hessian not positive definite at step {k}") from None
        U1[k] = -scipy.linalg.cho_solve(cho, lin_x)
        U2[k] = -scipy.linalg.cho_solve(cho, lin_0)
        EFL = E + F @ U1[k]
        GHL = G + H @ U1[k]
        Xoff = F @ U2[k] + D1
        xoff = H @ U2[k] + D2
        Mk = EFL.T @ Qh @ EFL + U1[k].T @ Rh @ U1[k] + GHL.T @ M[k + 1] @ GHL
        Yk = EFL.T @ (Qh @ Xoff) + U1[k].T @ (Rh @ U2[k]) + GHL.T @ (M[k + 1] @ xoff + Y[k + 1])
        if Sh is not None:
            cross = EFL.T @ Sh @ U1[k]
            Mk = Mk + cross + cross.T
            Yk = Yk + EFL.T @ (Sh @ U2[k]) + U1[k].T @ (Sh.T @ Xoff)
        M[k] = 0.5 * (Mk + Mk.T)
        Y[k] = Yk
    return AffineBackwardPass(M=M, Y=Y, U1=U1, U2=U2)


def direction(state: IterateState, bp: AffineBackwardPass, steps) -> np.ndarray:
    """Forward sweep of the affine feedback; returns Utilde - U."""
    N = state.N
    U_new = np.empty_like(state.U)
    xt = state.x[0].copy()
    for k in range(N):
        st = steps[k]
        U_new[k] = bp.U1[k] @ xt + bp.U2[k]
        xt = st.G @ xt + st.H @ U_new[k] + st.D2
    return U_new - state.U


def gradient(prob, tab, state: IterateState, steps=None) -> np.ndarray:
    """Exact gradient of the discrete cost in the stage controls, shape (N, s*m).

    Backward adjoint accumulation through the linearized step chain; the
    states are treated as functions of U via the stage equations.
    """
    if steps is None:
        steps = linearize(prob, tab, state)
    N = state.N
    Qh, Rh, Sh = stage_cost_blocks(prob, tab.b, state.h)
    g = np.empty_like(state.U)
    lam = prob.M @ state.x[-1]
    for k in range(N - 1, -1, -1):
        st = steps[k]
        w = Qh @ state.X[k]
        gk = Rh @ state.U[k]
        if Sh is not None:
            w = w + Sh @ state.U[k]
            gk = gk + Sh.T @ state.X[k]
        g[k] = st.F.T @ w + gk + st.H.T @ lam
        lam = st.E.T @ w + st.G.T @ lam
    return g


def line_search(prob, tab, state: IterateState, dU, slope=None, c1=1e-4, min_alpha=2.0**-30):
    """Backtracking Armijo along the feasible curve through U + alpha dU.

    Accepts the first alpha in 1, 1/2, 1/4, ... with
    Jd(alpha) <= Jd + c1 alpha slope; each trial is a fresh rollout.
    """
    dU = np.asarray(dU, dtype=float).reshape(state.U.shape)
    if not np.any(dU):
        return 1.0, state
    if slope is None:
        slope = float(np.sum(gradient(prob, tab, state) * dU))
    alpha = 1.0
    while alpha >= min_alpha:
        trial = rollout(prob, tab, state.N, state.U + alpha * dU)
        if trial.Jd <= state.Jd + c1 * alpha * slope:
            return alpha, trial
        alpha *= 0.5
    raise LineSearchFailed(f"no sufficient decrease above alpha = {min_alpha!r}")


def solve(prob, tab, N: int, U0=None, tol=1e-8, max_iter=200):
    """Run the full iteration from U0 (default all zeros).

    Stops when the gradient sup-norm falls below tol; returns the final
    iterate and a per-iteration log.  Raises NotConverged (carrying the last
    state and log) when max_iter is exhausted.
    """
    if U0 is None:
        U0 = np.zeros((N, tab.s * prob.m))
    state = rollout(prob, tab, N, U0)
    log = []
    for it in range(1, max_iter + 1):
        steps = linearize(prob, tab, state)
        g = gradient(prob, tab, state, steps)
        gnorm = float(np.abs(g).max(initial=0.0))
        if gnorm < tol:
            return state, log
        bp = backward(prob, tab, steps)
        dU = direction(state, bp, steps)
        slope = float(np.sum(g * dU))
        alpha, state = line_search(prob, tab, state, dU, slope=slope)
        log.append(
            IterateRecord(
                iteration=it,
                Jd=state.Jd,
                grad_inf_norm=gnorm,
                step_norm=float(np.linalg.norm(dU)),
                alpha=alpha,
                slope=slope,
            )
        )
    raise NotConverged(f"gradient norm above {tol!r} after {max_iter} iterations", state=state, log=log)


def costates(prob, tab, state: IterateState, adj=None) -> CostateTrajectory:
    """Back-substitute the discrete adjoint system along a solved iterate.

    At each step the node costate p_k and stage costates p_ki solve one
    dense (s+1)n linear system built from the adjoint coefficients,
    terminal condition p_N = M x_N.
    """
    if adj is None:
        adj = tableau_mod.adjoint(tab)
    n, m, s = prob.n, prob.m, tab.s
    N, h = state.N, state.h
    b, abar = tab.b, adj.abar
    S = cross_term(prob)
    p = np.zeros((N + 1, n))
    p_stage = np.zeros((N, s * n))
    p[N] = prob.M @ state.x[N]
    dim = (s + 1) * n
    for k in range(N - 1, -1, -1):
        xs = state.X[k].reshape(s, n)
        us = state.U[k].reshape(s, m)
        JxT = np.array([prob.jac_x(xs[i], us[i]).T for i in range(s)])
        w = np.array([prob.Q @ xs[i] for i in range(s)])  # running-cost state gradient
        if S is not None:
            w += us @ S.T
        mat = np.zeros((dim, dim))
        rhs = np.zeros(dim)
        mat[:n, :n] = np.eye(n)
        rhs[:n] = p[k + 1] + h * (b @ w)
        for j in range(s):
            mat[:n, (j + 1) * n : (j + 2) * n] = -h * b[j] * JxT[j]
        for i in range(s):
            r = (i + 1) * n
            mat[r : r + n, :n] = -np.eye(n)
            rhs[r : r + n] = -h * (abar[i] @ w)
            for j in range(s):
                blk = h * abar[i, j] * JxT[j]
                if i == j:
                    blk = blk + np.eye(n)
                mat[r : r + n, (j + 1) * n : (j + 2) * n] = blk
        try:
            z = np.linalg.solve(mat, rhs)
        except np.linalg.LinAlgError:
            raise CostateFailure(f"singular costate system at step {k}, h = {h!r}") from None
        p[k] = z[:n]
        p_stage[k] = z[n:]
    return CostateTrajectory(p=p, p_stage=p_stage)


def node_controls(prob, state: IterateState, cost: CostateTrajectory,
                  newton_tol=1e-12, newton_maxit=50) -> np.ndarray:
    """Node controls from the stationarity equation Ju(x,u)'p + Ru (+ S'x) = 0.

    Control-affine dynamics admit the closed form u = -R^{-1}(B(x)'p + S'x);
    otherwise a Newton iteration with finite-difference Jacobian runs from
    the first-stage control of the step.
    """
    N = state.N
    m = prob.m
    s = state.U.shape[1] // m
    S = cross_term(prob)
    u = np.zeros((N + 1, m))
    affine = getattr(prob, "control_affine", True)  # linear problems are affine
    for k in range(N + 1):
        xk, pk = state.x[k], cost.p[k]
        if affine:
            rhs = prob.input_matrix(xk).T @ pk
            if S is not None:
                rhs = rhs + S.T @ xk
            u[k] = -np.linalg.solve(prob.R, rhs)
            continue
        guess = state.U[k, :m] if k < N else state.U[N - 1, (s - 1) * m :]
        u[k] = _newton_node_control(prob, xk, pk, guess, newton_tol, newton_maxit, k)
    return u


def _newton_node_control(prob, x, p, u0, tol, maxit, index):
    def resid(u):
        return prob.jac_u(x, u).T @ p + prob.R @ u

    u = np.array(u0, dtype=float)
    for _ in range(maxit):
        g = resid(u)
        if np.abs(g).max(initial=0.0) < tol:
            return u
        m = u.size
        J = np.empty((m, m))
        for l in range(m):
            d = 1e-7 * (1.0 + abs(u[l]))
            e = np.zeros(m)
            e[l] = d
            J[:, l] = (resid(u + e) - resid(u - e)) / (2 * d)
        try:
            u = u - np.linalg.solve(J, g)
        except np.linalg.LinAlgError:
            raise NodeControlFailure(f"singular Newton system at node {index}", index=index) from None
    raise NodeControlFailure(f"node control Newton stalled at node {index}", index=index)
