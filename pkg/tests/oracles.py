"""Reference implementations used only to check the package.

Everything here is written directly from the textbook definitions with
dense numpy and no code from ``lnpheno``.
"""

import numpy as np
from scipy.optimize import minimize


def auc_pairs(scores, labels) -> float:
    """Fraction of (positive, negative) pairs ordered correctly, ties counting half."""
    pos = [s for s, y in zip(scores, labels) if y]
    neg = [s for s, y in zip(scores, labels) if not y]
    twice = 0
    for p in pos:
        for n in neg:
            twice += 2 if p > n else 1 if p == n else 0
    return twice / (2 * len(pos) * len(neg))


def logistic_objective(params, X, y, C, s):
    """0.5*||w||^2 + C * sum s_i log(1 + exp(-t_i z_i)), last entry of params is the intercept."""
    w, b = params[:-1], params[-1]
    t = np.where(y, 1.0, -1.0)
    z = X @ w + b
    return 0.5 * w @ w + C * np.sum(s * np.logaddexp(0.0, -t * z))


def central_difference_gradient(f, params, h=1e-5):
    g = np.zeros_like(params)
    for j in range(len(params)):
        e = np.zeros_like(params)
        e[j] = h
        g[j] = (f(params + e) - f(params - e)) / (2 * h)
    return g


def _objective_gradient(params, X, y, C, s):
    w, b = params[:-1], params[-1]
    t = np.where(y, 1.0, -1.0)
    z = X @ w + b
    r = -t / (1.0 + np.exp(t * z))  # derivative of log(1+exp(-t z)) in z
    coef = C * s * r
    return np.concatenate([w + X.T @ coef, [coef.sum()]])


def gradient_descent_minimum(X, y, C, s, tol=1e-8, max_iter=200_000):
    """Full-batch gradient descent with Armijo backtracking; returns (params, objective).

    Stops on a small gradient, or when 50 iterations gain less than one part
    in 1e15, at which point the objective is flat to machine precision.
    """
    params = np.zeros(X.shape[1] + 1)
    f = logistic_objective(params, X, y, C, s)
    history = [f]
    step = 1.0
    for _ in range(max_iter):
        g = _objective_gradient(params, X, y, C, s)
        gg = g @ g
        if np.sqrt(gg) < tol:
            break
        step *= 2.0
        while step > 1e-30:
            cand = params - step * g
            fc = logistic_objective(cand, X, y, C, s)
            if fc <= f - 0.5 * step * gg:
                break
            step *= 0.5
        else:
            break
        params, f = cand, fc
        history.append(f)
        if len(history) > 50 and history[-51] - f <= 1e-15 * abs(f):
            break
    return params, f


def lbfgs_minimum(X, y, C, s):
    res = minimize(logistic_objective, np.zeros(X.shape[1] + 1), args=(X, y, C, s),
                   jac=_objective_gradient, method="L-BFGS-B", options={"gtol": 1e-10, "maxiter": 20000})
    return res.x, res.fun
