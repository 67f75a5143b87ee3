"""Independent numerical oracles used across the test suite.

These deliberately avoid the code paths they check: the matrix exponential
here is a plain Taylor series with scaling-and-squaring (the library uses
scipy's Pade expm), the integrator is classic RK4, and the equality-
constrained QP solve goes through a dense KKT system.
"""

from __future__ import annotations

import numpy as np


def taylor_expm(M: np.ndarray, order: int = 24) -> np.ndarray:
    """Matrix exponential via Taylor series with scaling and squaring."""
    M = np.asarray(M, dtype=float)
    norm = np.linalg.norm(M, ord=np.inf)
    k = max(0, int(np.ceil(np.log2(max(norm, 1e-16)))) + 4)
    S = M / (2.0**k)
    out = np.eye(M.shape[0])
    term = np.eye(M.shape[0])
    for j in range(1, order + 1):
        term = term @ S / j
        out = out + term
    for _ in range(k):
        out = out @ out
    return out


def zoh_oracle(A: np.ndarray, B: np.ndarray, dt: float) -> tuple[np.ndarray, np.ndarray]:
    """Zero-order-hold pair via the Taylor exponential of the augmented matrix."""
    n, m = A.shape[0], B.shape[1]
    aug = np.zeros((n + m, n + m))
    aug[:n, :n] = A
    aug[:n, n:] = B
    phi = taylor_expm(aug * dt)
    return phi[:n, :n], phi[:n, n:]


def rk4_integrate(
    A: np.ndarray, B: np.ndarray, x0: np.ndarray, u: np.ndarray, t_end: float, steps: int
) -> np.ndarray:
    """RK4 integration of x' = Ax + Bu with constant input."""
    x = np.asarray(x0, dtype=float).copy()
    h = t_end / steps

    def f(x):
        return A @ x + B @ u

    for _ in range(steps):
        k1 = f(x)
        k2 = f(x + 0.5 * h * k1)
        k3 = f(x + 0.5 * h * k2)
        k4 = f(x + h * k3)
        x = x + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
    return x


def solve_eq_qp_kkt(
    P: np.ndarray, q: np.ndarray, A_eq: np.ndarray, b_eq: np.ndarray
) -> tuple[np.ndarray, float]:
    """Equality-constrained QP via the dense KKT linear system.

    Only valid when no inequality is active; returns (x, objective without
    constant term).
    """
    n = P.shape[0]
    p = A_eq.shape[0]
    kkt = np.block([[P, A_eq.T], [A_eq, np.zeros((p, p))]])
    rhs = np.concatenate([-q, b_eq])
    sol = np.linalg.solve(kkt, rhs)
    x = sol[:n]
    return x, float(0.5 * x @ P @ x + q @ x)


def scan_max_feasible(feasible, H: int):
    """Linear-scan oracle for the maximal feasible horizon in {0,...,H-1}."""
    best = None
    for h in range(H):
        if feasible(h):
            best = h
    return best
