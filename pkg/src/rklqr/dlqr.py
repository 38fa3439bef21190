"""Discrete LQR: feedback solve of an RK-discretized linear-quadratic problem.

Pipeline: assemble the per-step stage/transition operators, recurse the
quadratic value function backward for the feedback gains, then roll the
closed loop forward and recover node controls from the costates
p_k = M_k x_k via u = -R^{-1}(B'p + S'x).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import RiccatiFailure, StepTooLarge
from .problem import LQProblem
from .tableau import ButcherTableau


def stage_cost_blocks(prob, b: np.ndarray, h: float):
    """Block-diagonal stage cost weights (Qh, Rh, Sh), scaled by h b_i.

    Sh is None when the problem has no cross term, so the plain formulas
    apply without extra zero products.
    """
    d = np.diag(b)
    Qh = h * np.kron(d, prob.Q)
    Rh = h * np.kron(d, prob.R)
    S = getattr(prob, "S", None)
    Sh = h * np.kron(d, S) if S is not None and np.any(S) else None
    return Qh, Rh, Sh


@dataclass(frozen=True)
class DiscreteLQSystem:
    """Step-invariant operators of the discretized linear problem.

    X_k = E x_k + F U_k and x_{k+1} = G x_k + H U_k, with stage cost blocks
    Qh, Rh and optional cross block Sh.
    """

    prob: LQProblem
    tab: ButcherTableau
    N: int
    h: float
    E: np.ndarray
    F: np.ndarray
    G: np.ndarray
    H: np.ndarray
    Qh: np.ndarray
    Rh: np.ndarray
    Sh: np.ndarray


@dataclass(frozen=True)
class RiccatiPass:
    """Value-function matrices M_k (N+1 of them) and feedback gains L_k (N)."""

    M: list
    L: list


@dataclass(frozen=True)
class DiscreteTrajectory:
    """Closed-loop solution: node states/costates/controls and stage stacks."""

    x: np.ndarray  # (N+1, n) node states
    X: np.ndarray  # (N, s*n) internal-stage state stacks
    U: np.ndarray  # (N, s*m) internal-stage control stacks
    p: np.ndarray  # (N+1, n) node costates
    u: np.ndarray  # (N+1, m) node controls
    h: float

    @property
    def times(self):
        return self.h * np.arange(self.x.shape[0])


def assemble(prob: LQProblem, tab: ButcherTableau, N: int) -> DiscreteLQSystem:
    """Build the step operators for N steps of the given tableau.

    E = (I - hA(x)a)^{-1} Z blocks etc.; raises StepTooLarge when the
    stage-coupling matrix is singular (never happens for explicit tableaus).
    """
    if N < 1:
        raise ValueError("N must be >= 1")
    n, m, s = prob.n, prob.m, tab.s
    h = prob.tf / N
    Z = np.tile(np.eye(n), (s, 1))
    coupling = np.eye(s * n) - h * np.kron(tab.a, prob.A)
    rhs = np.hstack([Z, h * np.kron(tab.a, prob.B)])
    try:
        EF = np.linalg.solve(coupling, rhs)
    except np.linalg.LinAlgError:
        raise StepTooLarge(f"singular stage coupling at h = {h!r}", h=h) from None
    E, F = EF[:, :n], EF[:, n:]
    bA = h * np.kron(tab.b[None, :], prob.A)  # (n, s*n) row of weighted A blocks
    bB = h * np.kron(tab.b[None, :], prob.B)
    G = np.eye(n) + bA @ E
    H = bA @ F + bB
    Qh, Rh, Sh = stage_cost_blocks(prob, tab.b, h)
    return DiscreteLQSystem(prob=prob, tab=tab, N=N, h=h, E=E, F=F, G=G, H=H, Qh=Qh, Rh=Rh, Sh=Sh)


def _sym(mat):
    return 0.5 * (mat + mat.T)


def _feedback_gain(E, F, G, H, Qh, Rh, Sh, M_next):
    """Gain L = -K^{-1}(F'QhE + Sh'E + H'M+G) with K the stage Hessian.

    Returns (L, K); raises on indefinite K.  The Sh terms vanish for S = 0,
    recovering the plain inner matrix F'QhF + Rh + H'M+H.
    """
    K = F.T @ Qh @ F + Rh + H.T @ M_next @ H
    rhs = F.T @ Qh @ E + H.T @ M_next @ G
    if Sh is not None:
        K = K + F.T @ Sh + Sh.T @ F
        rhs = rhs + Sh.T @ E
    K = _sym(K)
    try:
        cho = scipy.linalg.cho_factor(K)
    except scipy.linalg.LinAlgError:
        raise RiccatiFailure("stage Hessian is not positive definite") from None
    return -scipy.linalg.cho_solve(cho, rhs), K


def _value_update(E, F, G, H, Qh, Rh, Sh, M_next, L):
    """One backward step of the value-function matrix recursion."""
    EFL = E + F @ L
    GHL = G + H @ L
    M = EFL.T @ Qh @ EFL + L.T @ Rh @ L + GHL.T @ M_next @ GHL
    if Sh is not None:
        cross = EFL.T @ Sh @ L
        M = M + cross + cross.T
    return _sym(M)


def riccati_backward(sys: DiscreteLQSystem, prob: LQProblem = None) -> RiccatiPass:
    """Backward value-function recursion from M_N = M down to M_0, collecting gains."""
    prob = sys.prob if prob is None else prob
    E, F, G, H, Qh, Rh, Sh = sys.E, sys.F, sys.G, sys.H, sys.Qh, sys.Rh, sys.Sh
    M = [None] * (sys.N + 1)
    L = [None] * sys.N
    M[sys.N] = prob.M.copy()
    for k in range(sys.N - 1, -1, -1):
        L[k], _ = _feedback_gain(E, F, G, H, Qh, Rh, Sh, M[k + 1])
        M[k] = _value_update(E, F, G, H, Qh, Rh, Sh, M[k + 1], L[k])
    return RiccatiPass(M=M, L=L)


def rollout(sys: DiscreteLQSystem, riccati: RiccatiPass, x0=None) -> DiscreteTrajectory:
    """Roll the feedback law forward and recover stage and node quantities."""
    prob = sys.prob
    n, m, N = prob.n, prob.m, sys.N
    x0 = prob.x0 if x0 is None else np.asarray(x0, dtype=float).reshape(n)
    x = np.zeros((N + 1, n))
    X = np.zeros((N, sys.E.shape[0]))
    U = np.zeros((N, sys.F.shape[1]))
    x[0] = x0
    for k in range(N):
        U[k] = riccati.L[k] @ x[k]
        X[k] = sys.E @ x[k] + sys.F @ U[k]
        x[k + 1] = sys.G @ x[k] + sys.H @ U[k]
    p = np.einsum("kij,kj->ki", np.asarray(riccati.M), x)
    u = node_controls(prob, x, p)
    return DiscreteTrajectory(x=x, X=X, U=U, p=p, u=u, h=sys.h)


def node_controls(prob: LQProblem, x: np.ndarray, p: np.ndarray) -> np.ndarray:
    """Node controls u_k = -R^{-1}(B'p_k + S'x_k) for every node 0..N."""
    rhs = p @ prob.B
    S = getattr(prob, "S", None)
    if S is not None and np.any(S):
        rhs = rhs + x @ S
    return -np.linalg.solve(prob.R, rhs.T).T


def solve(prob: LQProblem, tab: ButcherTableau, N: int):
    """Full pipeline; returns (system, riccati pass, trajectory)."""
    sys = assemble(prob, tab, N)
    rp = riccati_backward(sys)
    return sys, rp, rollout(sys, rp)


def discrete_cost(sys: DiscreteLQSystem, traj: DiscreteTrajectory) -> float:
    """Direct evaluation of the discrete cost along a trajectory."""
    total = 0.0
    for k in range(sys.N):
        Xk, Uk = traj.X[k], traj.U[k]
        total += 0.5 * (Xk @ sys.Qh @ Xk) + 0.5 * (Uk @ sys.Rh @ Uk)
        if sys.Sh is not None:
            total += Xk @ sys.Sh @ Uk
    xN = traj.x[-1]
    return float(total + 0.5 * xN @ sys.prob.M @ xN)
