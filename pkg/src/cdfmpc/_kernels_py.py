"""Pure-Python shooting kernels (reference and fallback for ``_kernels``).

All kernels act on models of the form ``x+ = A x + B u + E sin(C x)`` and on
per-step Jacobians of arbitrary models.
"""

import numpy as np

BACKEND = "python"


def rollout(A, B, E, C, x0, U):
    L = U.shape[0]
    X = np.empty((L + 1, x0.shape[0]))
    X[0] = x0
    for i in range(L):
        x = X[i]
        X[i + 1] = A @ x + B @ U[i] + E @ np.sin(C @ x)
    return X


def linearize(A, B, E, C, X, U):
    L = U.shape[0]
    n, m = B.shape
    Fx = np.empty((L, n, n))
    Fu = np.empty((L, n, m))
    for i in range(L):
        Fx[i] = A + (E * np.cos(C @ X[i])) @ C
        Fu[i] = B
    return Fx, Fu


def sensitivities(Fx, Fu):
    """Forward sensitivities ``dx_i/dU`` stacked as ``(L+1, n, L*m)``."""
    L, n, m = Fu.shape
    S = np.zeros((L + 1, n, L * m))
    for i in range(L):
        S[i + 1] = Fx[i] @ S[i]
        S[i + 1, :, i * m:(i + 1) * m] += Fu[i]
    return S


def adjoint_gradient(Fx, Fu, gX):
    """Reverse accumulation of ``sum_i gX[i] . dx_i/dU`` through the rollout."""
    L, n, m = Fu.shape
    g = np.empty(L * m)
    lam = gX[L].copy()
    for i in range(L - 1, -1, -1):
        g[i * m:(i + 1) * m] = Fu[i].T @ lam
        lam = gX[i] + Fx[i].T @ lam
    return g


def weighted_quadratic_sum(X, Q, w):
    """``sum_i w[i] * X[i]' Q X[i]``."""
    total = 0.0
    for i in range(X.shape[0]):
        if w[i] != 0.0:
            x = X[i]
            total += w[i] * float(x @ Q @ x)
    return total
