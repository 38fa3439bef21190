"""Feedback solvers for quadratic optimal control under Runge-Kutta discretization.

Modules:
  tableau  - Butcher tableaus, symplectic adjoint pairs, stage order checks
  problem  - continuous-time problem definitions and builtin benchmarks
  dlqr     - discrete LQR pipeline for linear-quadratic problems
  ilqr     - iterative LQR for nonlinear quadratic problems
  oracle   - brute-force KKT solve, gradient checks, quasi-Newton matrices
  cli      - command-line harness (solve / order-study / tableau / gradcheck)
"""

from . import cli, dlqr, errors, ilqr, oracle, problem, tableau

__all__ = ["cli", "dlqr", "errors", "ilqr", "oracle", "problem", "tableau"]
__version__ = "0.1.0"
