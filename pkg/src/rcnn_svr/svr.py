"""Linear epsilon-insensitive support vector regression.

Primal problem::

    min_{w,b}  1/2 ||w||^2 + C * sum_n (xi_n + xi*_n)
    s.t.       y_n - (w.x_n + b) <= eps + xi_n
               (w.x_n + b) - y_n <= eps + xi*_n
               xi_n, xi*_n >= 0

The dual is solved by SMO over the stacked variables ``a = [alpha; alpha*]``
with second-order working-set selection (Fan, Chen & Lin, 2005). Each step
updates a pair so that the equality constraint ``sum(alpha - alpha*) = 0``
coming from the bias stays satisfied. The fitted model keeps the signed
coefficients ``beta = alpha - alpha*`` so that ``w = X.T @ beta``.

After every sweep the iterate is refined by an exact active-set solve on the
face of the box it currently lies on. SMO picks the support pattern, and the
refinement settles the free coefficients without the slow linear tail that
pair updates show on rank-deficient kernels.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateInputError, DimensionMismatchError, NonFiniteError

_TAU = 1e-12


@dataclass(frozen=True)
class SvrHyperparams:
    C: float = 1.0
    epsilon: float = 0.1
    tolerance: float = 1e-6
    max_sweeps: int = 10000

    def __post_init__(self):
        if not self.C > 0:
            raise ValueError(f"C must be positive, got {self.C}")
        if not self.epsilon >= 0:
            raise ValueError(f"epsilon must be non-negative, got {self.epsilon}")
        if not self.tolerance > 0:
            raise ValueError("tolerance must be positive")
        if self.max_sweeps < 1:
            raise ValueError("max_sweeps must be positive")


@dataclass(frozen=True)
class SvrModel:
    weights: np.ndarray
    bias: float
    dual_coefficients: np.ndarray
    converged: bool = True
    sweeps: int = 0
    # negated SMO objective after each sweep; non-decreasing
    dual_history: tuple = field(default=(), repr=False, compare=False)


def _check_xy(features, targets):
    X = np.asarray(features, dtype=np.float64)
    y = np.asarray(targets, dtype=np.float64).reshape(-1)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    if X.ndim != 2:
        raise DimensionMismatchError("features must be a 2-D matrix")
    if X.shape[0] == 0 or y.size == 0:
        raise DegenerateInputError("SVR needs at least one sample")
    if X.shape[0] != y.size:
        raise DimensionMismatchError(
            f"{X.shape[0]} feature rows but {y.size} targets"
        )
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise NonFiniteError("features and targets must be finite")
    return X, y


def fit_svr(features, targets, hp: SvrHyperparams = SvrHyperparams()) -> SvrModel:
    """Fit a linear epsilon-SVR by SMO on the dual problem.

    Stops when the maximal KKT violation ``max_{I_up} -zG - min_{I_low} -zG``
    drops to ``hp.tolerance`` or after ``hp.max_sweeps`` sweeps of ``n``
    pair updates each; ``SvrModel.converged`` records which.
    """
    X, y = _check_xy(features, targets)
    n = y.size
    C, eps = hp.C, hp.epsilon
    K = X @ X.T
    kdiag = np.diag(K).copy()
    z = np.concatenate([np.ones(n), -np.ones(n)])
    a = np.zeros(2 * n)
    grad = np.concatenate([eps - y, eps + y])
    idx_mod = np.concatenate([np.arange(n), np.arange(n)])

    def q_column(t):
        return z * z[t] * K[idx_mod, idx_mod[t]]

    def objective():
        beta = a[:n] - a[n:]
        return -(0.5 * beta @ K @ beta + eps * a.sum() - y @ beta)

    history = [objective()]
    converged = False
    max_iter = hp.max_sweeps * n
    it = 0
    while True:
        neg_zg = -z * grad
        up = ((z > 0) & (a < C)) | ((z < 0) & (a > 0))
        low = ((z < 0) & (a < C)) | ((z > 0) & (a > 0))
        if not up.any() or not low.any():
            converged = True
            break
        g_up = np.where(up, neg_zg, -np.inf)
        i = int(np.argmax(g_up))
        g_max = g_up[i]
        g_min = np.min(np.where(low, neg_zg, np.inf))
        if g_max - g_min < hp.tolerance:
            converged = True
            break
        if it >= max_iter:
            break
        # second-order choice of j among violating partners of i
        cand = low & (neg_zg < g_max)
        b_ij = g_max - neg_zg
        quad = kdiag[idx_mod[i]] + kdiag[idx_mod] - 2.0 * K[idx_mod[i], idx_mod]
        quad = np.where(quad > 0, quad, _TAU)
        score = np.where(cand, -(b_ij * b_ij) / quad, np.inf)
        j = int(np.argmin(score))

        qi, qj = q_column(i), q_column(j)
        old_ai, old_aj = a[i], a[j]
        if z[i] != z[j]:
            quad_ij = qi[i] + qj[j] + 2.0 * qi[j]
            delta = (-grad[i] - grad[j]) / max(quad_ij, _TAU)
            diff = a[i] - a[j]
            a[i] += delta
            a[j] += delta
            if diff > 0:
                if a[j] < 0:
                    a[j] = 0.0
                    a[i] = diff
            elif a[i] < 0:
                a[i] = 0.0
                a[j] = -diff
            if diff > 0:
                if a[i] > C:
                    a[i] = C
                    a[j] = C - diff
            elif a[j] > C:
                a[j] = C
                a[i] = C + diff
        else:
            quad_ij = qi[i] + qj[j] - 2.0 * qi[j]
            delta = (grad[i] - grad[j]) / max(quad_ij, _TAU)
            total = a[i] + a[j]
            a[i] -= delta
            a[j] += delta
            if total > C:
                if a[i] > C:
                    a[i] = C
                    a[j] = total - C
            elif a[j] < 0:
                a[j] = 0.0
                a[i] = total
            if total > C:
                if a[j] > C:
                    a[j] = C
                    a[i] = total - C
            elif a[i] < 0:
                a[i] = 0.0
                a[j] = total
        grad += qi * (a[i] - old_ai) + qj * (a[j] - old_aj)
        it += 1
        if it % n == 0:
            # pair updates crawl along flat directions of rank-deficient
            # kernels; an exact solve on the current face skips that
            refined = _refine_face(K, y, a[:n] - a[n:], C, eps)
            if refined is not None:
                a, grad = _stacked(K, y, refined, eps)
            history.append(objective())

    if it % n:
        history.append(objective())
    beta = a[:n] - a[n:]
    bias = _bias_from_gradient(a, grad, z, C)
    if converged:
        refined = _refine_face(K, y, beta, C, eps)
        if refined is not None:
            a2, grad2 = _stacked(K, y, refined, eps)
            bias2 = _bias_from_gradient(a2, grad2, z, C)
            if (_kkt_residuals(K, y, refined, bias2, C, eps).max()
                    <= _kkt_residuals(K, y, beta, bias, C, eps).max()):
                beta, bias = refined, bias2
                history.append(_dual_value(K, y, beta, eps))
    return SvrModel(
        weights=X.T @ beta,
        bias=float(bias),
        dual_coefficients=beta,
        converged=converged,
        sweeps=-(-it // n),
        dual_history=tuple(history),
    )


def _bias_from_gradient(a, grad, z, C):
    zg = z * grad
    at_upper = a >= C
    at_lower = a <= 0
    free = ~(at_upper | at_lower)
    if free.any():
        return -float(np.mean(zg[free]))
    ub_mask = (at_upper & (z < 0)) | (at_lower & (z > 0))
    lb_mask = (at_upper & (z > 0)) | (at_lower & (z < 0))
    ub = zg[ub_mask].min() if ub_mask.any() else np.inf
    lb = zg[lb_mask].max() if lb_mask.any() else -np.inf
    if not np.isfinite(ub):
        ub = lb
    if not np.isfinite(lb):
        lb = ub
    return -0.5 * (ub + lb)


def _dual_value(K, y, beta, eps):
    return float(-0.5 * beta @ K @ beta + y @ beta - eps * np.abs(beta).sum())


def _kkt_residuals(K, y, beta, bias, C, eps):
    r = y - (K @ beta + bias)
    bound = 1e-12 * max(C, 1.0)
    viol = np.maximum(0.0, np.abs(r) - eps)
    upper = beta >= C - bound
    lower = beta <= -C + bound
    pos = (beta > bound) & ~upper
    neg = (beta < -bound) & ~lower
    viol[upper] = np.maximum(0.0, eps - r[upper])
    viol[lower] = np.maximum(0.0, eps + r[lower])
    viol[pos] = np.abs(r[pos] - eps)
    viol[neg] = np.abs(r[neg] + eps)
    return viol


def _stacked(K, y, beta, eps):
    """Complementary ``a = [alpha; alpha*]`` for ``beta`` and its SMO gradient."""
    kb = K @ beta
    a = np.concatenate([np.maximum(beta, 0.0), np.maximum(-beta, 0.0)])
    return a, np.concatenate([kb + eps - y, eps + y - kb])


def _refine_face(K, y, beta, C, eps):
    """Maximise the dual over the face of the box that ``beta`` lies on.

    Coefficients strictly inside ``(-C, 0)`` or ``(0, C)`` are free and keep
    their sign; the rest stay fixed. Each step either reaches the optimum of
    the equality-constrained problem on the face or moves until one free
    coefficient hits a bound and leaves the face, so the loop is finite.
    Where the free block of ``K`` is singular the dual may be linear along
    its null space; such directions are followed straight to a bound.
    Returns the new coefficients, or ``None`` if nothing improved.
    """
    beta = beta.copy()
    bound = 1e-12 * max(C, 1.0)
    start = _dual_value(K, y, beta, eps)
    moved = False
    for _ in range(2 * beta.size + 1):
        free = (np.abs(beta) > bound) & (np.abs(beta) < C - bound)
        if not free.any():
            break
        sign = np.sign(beta[free])
        m = int(free.sum())
        k_ff = K[np.ix_(free, free)]
        # gradient of the negated dual with respect to the free coefficients
        g = K[free] @ beta - (y[free] - eps * sign)
        _, sv, vt = np.linalg.svd(np.vstack([k_ff, np.ones((1, m))]))
        rank = int((sv > 1e-10 * max(sv[0], 1.0)).sum())
        null = vt[rank:]
        d = -(null.T @ (null @ g))
        linear = np.linalg.norm(d) > 1e-12 * max(1.0, np.linalg.norm(g))
        if not linear:
            A = np.zeros((m + 1, m + 1))
            A[:m, :m] = k_ff
            A[:m, m] = 1.0
            A[m, :m] = 1.0
            d = np.linalg.lstsq(A, np.r_[-g, 0.0], rcond=None)[0][:m]
            if not np.any(np.abs(d) > 1e-15 * max(1.0, C)):
                break
        lo = np.where(sign > 0, 0.0, -C)
        hi = np.where(sign > 0, C, 0.0)
        cur = beta[free]
        with np.errstate(divide="ignore", invalid="ignore"):
            t_each = np.where(d > 0, (hi - cur) / d, np.where(d < 0, (lo - cur) / d, np.inf))
        hit = int(np.argmin(t_each))
        t = t_each[hit]
        moved = True
        if not linear and t >= 1.0:
            beta[free] = cur + d
            break
        new = cur + t * d
        new[hit] = hi[hit] if d[hit] > 0 else lo[hit]
        beta[free] = new
    if not moved or not np.all(np.isfinite(beta)):
        return None
    if _dual_value(K, y, beta, eps) < start:
        return None
    return beta


def predict_svr(model: SvrModel, features) -> np.ndarray:
    """Row-wise ``w.x + b``."""
    X = np.asarray(features, dtype=np.float64)
    if X.ndim == 1:
        X = X.reshape(-1, 1) if model.weights.size == 1 else X.reshape(1, -1)
    if X.ndim != 2 or X.shape[1] != model.weights.size:
        raise DimensionMismatchError(
            f"model expects {model.weights.size} features, got shape {X.shape}"
        )
    return X @ model.weights + model.bias


def svr_objective(model: SvrModel, features, targets, hp: SvrHyperparams):
    """Primal value and slacks ``(primal, xi, xi_star)`` of ``model`` on the data."""
    X, y = _check_xy(features, targets)
    f = predict_svr(model, X)
    xi = np.maximum(0.0, y - f - hp.epsilon)
    xi_star = np.maximum(0.0, f - y - hp.epsilon)
    w = model.weights
    primal = 0.5 * float(w @ w) + hp.C * float(xi.sum() + xi_star.sum())
    return primal, xi, xi_star


def dual_objective(dual_coefficients, features, targets, epsilon: float) -> float:
    """Dual value ``-1/2 b'Kb + y'b - eps*|b|_1`` of signed coefficients ``b``."""
    X, y = _check_xy(features, targets)
    beta = np.asarray(dual_coefficients, dtype=np.float64)
    v = X.T @ beta
    return float(-0.5 * v @ v + y @ beta - epsilon * np.abs(beta).sum())


def kkt_violation(model: SvrModel, features, targets, hp: SvrHyperparams,
                  coef_tol: float = 1e-12) -> float:
    """Largest violation of the dual optimality conditions, in residual units.

    With residual ``r = y - f(x)``: a zero coefficient needs ``|r| <= eps``,
    a coefficient at ``+C`` (``-C``) needs ``r >= eps`` (``r <= -eps``), and a
    free coefficient of sign ``s`` needs ``r = s * eps``.
    """
    X, y = _check_xy(features, targets)
    r = y - predict_svr(model, X)
    beta = model.dual_coefficients
    eps, C = hp.epsilon, hp.C
    bound = coef_tol * max(C, 1.0)
    viol = np.zeros_like(r)
    zero = np.abs(beta) <= bound
    upper = beta >= C - bound
    lower = beta <= -C + bound
    free_pos = (beta > bound) & ~upper
    free_neg = (beta < -bound) & ~lower
    viol[zero] = np.maximum(0.0, np.abs(r[zero]) - eps)
    viol[upper] = np.maximum(0.0, eps - r[upper])
    viol[lower] = np.maximum(0.0, eps + r[lower])
    viol[free_pos] = np.abs(r[free_pos] - eps)
    viol[free_neg] = np.abs(r[free_neg] + eps)
    return float(viol.max())
