"""Training objectives, each returning (value, gradient w.r.t. the scores).

Diversity and correlation terms serve the masked-view pre-training stage; the
pairwise/contextual information-maximization terms and the entropic-transport
representativeness term drive unsupervised fine-tuning. Every division the
math leaves unguarded gets an explicit floor, and when a floor is active the
corresponding gradient path is zero (the value is locally constant there).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

EPS_STD = 1e-8  # floor for standard deviations / correlation denominators
EPS_DEN = 1e-8  # floor for weighted-sum denominators


@dataclass(frozen=True)
class LossWeights:
    """Coefficients of the unified fine-tuning objective.

    w_ptrim scales the pairwise term, w_rep the transport term, w_pctrim the
    contextual term; the diversity term always enters with weight 1. nu is the
    diversity weight inside the pre-training loss.
    """

    w_ptrim: float = 1.0
    w_rep: float = 0.0
    w_pctrim: float = 0.0
    nu: float = 0.005


@dataclass(frozen=True)
class SinkhornConfig:
    """Entropic-transport solver settings.

    epsilon is relative: the absolute regularization is epsilon times the
    median squared cost of the current instance. tolerance bounds the maximum
    marginal violation used as the convergence test.
    """

    epsilon: float = 0.05
    max_iters: int = 200
    tolerance: float = 1e-6
    debiased: bool = True


# ---------------------------------------------------------------------------
# Diversity / correlation terms
# ---------------------------------------------------------------------------


def loss_sd(p: np.ndarray) -> tuple[float, np.ndarray]:
    """Reciprocal of the population standard deviation of the scores."""
    p = np.asarray(p, dtype=np.float64)
    n = p.shape[0]
    if n < 2:
        raise ValueError(f"need at least 2 scores, got {n}")
    centered = p - p.mean()
    std = np.sqrt((centered * centered).mean())
    if std <= EPS_STD:
        return 1.0 / EPS_STD, np.zeros(n)
    value = 1.0 / std
    grad = -centered / (n * std**3)
    return value, grad


def loss_corr(pa: np.ndarray, pb: np.ndarray) -> tuple[float, np.ndarray, np.ndarray]:
    """1 - Pearson correlation between two score views, with gradients for both."""
    pa = np.asarray(pa, dtype=np.float64)
    pb = np.asarray(pb, dtype=np.float64)
    if pa.shape != pb.shape:
        raise ValueError(f"score length mismatch: {pa.shape} vs {pb.shape}")
    if pa.shape[0] < 2:
        raise ValueError("need at least 2 scores")
    a = pa - pa.mean()
    b = pb - pb.mean()
    norm_a = float(np.sqrt(a @ a))
    norm_b = float(np.sqrt(b @ b))
    da = max(norm_a, EPS_STD)
    db = max(norm_b, EPS_STD)
    cov = float(a @ b)
    r = cov / (da * db)
    grad_a = -b / (da * db)
    grad_b = -a / (da * db)
    if norm_a > EPS_STD:
        grad_a += r * a / da**2
    if norm_b > EPS_STD:
        grad_b += r * b / db**2
    return 1.0 - r, grad_a, grad_b


def loss_pre(
    pa: np.ndarray, pb: np.ndarray, nu: float
) -> tuple[float, np.ndarray, np.ndarray]:
    """Pre-training objective: correlation term plus nu times the diversity
    term of each view; gradients compose linearly."""
    vc, ga, gb = loss_corr(pa, pb)
    vs_a, gs_a = loss_sd(pa)
    vs_b, gs_b = loss_sd(pb)
    return vc + nu * (vs_a + vs_b), ga + nu * gs_a, gb + nu * gs_b


# ---------------------------------------------------------------------------
# Information-maximization terms
# ---------------------------------------------------------------------------


def _weighted_recip(p: np.ndarray, series: np.ndarray, name: str) -> tuple[float, np.ndarray]:
    p = np.asarray(p, dtype=np.float64)
    series = np.asarray(series, dtype=np.float64)
    n = p.shape[0]
    if n < 2:
        raise ValueError(f"need at least 2 scores, got {n}")
    if series.shape != (n - 1,):
        raise ValueError(f"{name} length {series.shape} != (N-1,) = ({n - 1},)")
    total = float(p[1:] @ series)
    grad = np.zeros(n)
    if total <= EPS_DEN:
        return (n - 1) / EPS_DEN, grad
    grad[1:] = -(n - 1) * series / total**2
    return (n - 1) / total, grad


def loss_ptrim(p: np.ndarray, delta: np.ndarray) -> tuple[float, np.ndarray]:
    """(N-1) / sum_{t>=2} p_t * D_t — small when high scores sit on frames
    with large pairwise information change."""
    return _weighted_recip(p, delta, "delta")


def loss_pctrim(p: np.ndarray, gamma: np.ndarray) -> tuple[float, np.ndarray]:
    """(N-1) / sum_{t>=2} p_t * G_t, the contextual counterpart."""
    return _weighted_recip(p, gamma, "gamma")


# ---------------------------------------------------------------------------
# Entropic-transport representativeness term
# ---------------------------------------------------------------------------


class SinkhornResult(NamedTuple):
    value: float
    grad: np.ndarray
    converged: bool
    iterations: int


def _logsumexp(m: np.ndarray, axis: int) -> np.ndarray:
    mx = m.max(axis=axis, keepdims=True)
    out = np.log(np.exp(m - mx).sum(axis=axis)) + np.squeeze(mx, axis=axis)
    return out


def _entropic_cost(
    cost: np.ndarray,
    log_a: np.ndarray,
    log_b: np.ndarray,
    eps: float,
    max_iters: int,
    tol: float,
):
    """Log-domain scaling iterations for one transport problem.

    Returns (value, converged, iterations, tape) where value is the transport
    cost <plan, cost> of the final iterate and tape holds everything the
    reverse pass needs.
    """
    b = np.exp(log_b)
    f = np.zeros(cost.shape[0])
    g = np.zeros(cost.shape[1])
    fs = [f]
    gs = []
    converged = False
    it = 0
    for it in range(1, max_iters + 1):
        m1 = log_a[:, None] + (f[:, None] - cost) / eps
        g = -eps * _logsumexp(m1, axis=0)
        m2 = log_b[None, :] + (g[None, :] - cost) / eps
        f = -eps * _logsumexp(m2, axis=1)
        fs.append(f)
        gs.append(g)
        log_plan = log_a[:, None] + log_b[None, :] + (f[:, None] + g[None, :] - cost) / eps
        plan = np.exp(log_plan)
        if np.abs(plan.sum(axis=0) - b).max() < tol:
            converged = True
            break
    value = float((plan * cost).sum())
    tape = (cost, log_a, log_b, eps, fs, gs, plan)
    return value, converged, it, tape


def _entropic_cost_vjp(tape) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Reverse-mode derivative of the transport cost through the unrolled
    iterations; returns (d_cost, d_log_a, d_log_b) for upstream gradient 1."""
    cost, log_a, log_b, eps, fs, gs, plan = tape
    pc = plan * cost
    d_cost = plan - pc / eps
    d_log_a = pc.sum(axis=1)
    d_log_b = pc.sum(axis=0)
    df = pc.sum(axis=1) / eps
    dg = pc.sum(axis=0) / eps
    for l in range(len(gs), 0, -1):
        f_in, g_l, f_out = fs[l - 1], gs[l - 1], fs[l]
        # f_out = -eps * LSE_j(m2); softmax rows of m2:
        s2 = np.exp(log_b[None, :] + (g_l[None, :] - cost) / eps + f_out[:, None] / eps)
        dm2 = -eps * df[:, None] * s2
        col = dm2.sum(axis=0)
        d_log_b += col
        dg = dg + col / eps
        d_cost -= dm2 / eps
        # g_l = -eps * LSE_i(m1); softmax columns of m1:
        s1 = np.exp(log_a[:, None] + (f_in[:, None] - cost) / eps + g_l[None, :] / eps)
        dm1 = -eps * s1 * dg[None, :]
        row = dm1.sum(axis=1)
        d_log_a += row
        d_cost -= dm1 / eps
        df = row / eps
        dg = np.zeros_like(dg)
    return d_cost, d_log_a, d_log_b


def _scale_subgradient(flat_cost: np.ndarray) -> tuple[np.ndarray, np.ndarray, float]:
    """Indices and weights of the elements defining the cost scale (median of
    the squared costs, falling back to the max when the median is zero)."""
    order = np.argsort(flat_cost, kind="stable")
    m = flat_cost.size
    if m % 2 == 1:
        idx = np.array([order[m // 2]])
        wts = np.array([1.0])
    else:
        idx = np.array([order[m // 2 - 1], order[m // 2]])
        wts = np.array([0.5, 0.5])
    scale = float(flat_cost[idx] @ wts)
    if scale <= 0.0:
        idx = np.array([int(np.argmax(flat_cost))])
        wts = np.array([1.0])
        scale = float(flat_cost[idx[0]])
    return idx, wts, scale


def sinkhorn_rep(x: np.ndarray, p: np.ndarray, cfg: SinkhornConfig) -> SinkhornResult:
    """Entropic estimate of the squared-transport cost between the original
    frame cloud and the score-weighted cloud {p_t X_t}.

    Source weights are uniform; target weights are p normalized to sum 1. The
    gradient w.r.t. p is the exact derivative of the unrolled computation,
    covering the cost matrix, the target marginal, and the median-based
    scaling of the regularization strength.
    """
    x = np.asarray(x, dtype=np.float64)
    p = np.asarray(p, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] != p.shape[0]:
        raise ValueError(f"features {x.shape} inconsistent with scores {p.shape}")
    n = x.shape[0]
    if n < 1:
        raise ValueError("need at least one frame")
    if not (np.isfinite(p).all() and (p > 0).all()):
        raise ValueError("scores must be finite and strictly positive")
    sum_p = float(p.sum())
    if sum_p <= EPS_DEN:
        raise ValueError("scores sum to (nearly) zero")

    gram = x @ x.T
    sq = np.diag(gram).copy()
    psq = p * p * sq

    raw_xy = sq[:, None] - 2.0 * gram * p[None, :] + psq[None, :]
    mask_xy = raw_xy > 0
    c_xy = np.maximum(raw_xy, 0.0)

    if not c_xy.any():
        # Every X_i already coincides with p_j X_j; nothing to transport.
        return SinkhornResult(0.0, np.zeros(n), True, 0)

    idx_scale, wts_scale, scale = _scale_subgradient(c_xy.ravel())
    eps = cfg.epsilon
    log_a = np.full(n, -np.log(n))
    log_b = np.log(p) - np.log(sum_p)

    v_xy, conv_xy, it_xy, tape_xy = _entropic_cost(
        c_xy / scale, log_a, log_b, eps, cfg.max_iters, cfg.tolerance
    )
    solves = [(v_xy, conv_xy, tape_xy, 1.0)]
    if cfg.debiased:
        raw_xx = sq[:, None] - 2.0 * gram + sq[None, :]
        c_xx = np.maximum(raw_xx, 0.0)
        raw_yy = psq[:, None] - 2.0 * gram * (p[:, None] * p[None, :]) + psq[None, :]
        mask_yy = raw_yy > 0
        c_yy = np.maximum(raw_yy, 0.0)
        v_xx, conv_xx, _, tape_xx = _entropic_cost(
            c_xx / scale, log_a, log_a, eps, cfg.max_iters, cfg.tolerance
        )
        v_yy, conv_yy, _, tape_yy = _entropic_cost(
            c_yy / scale, log_b, log_b, eps, cfg.max_iters, cfg.tolerance
        )
        solves.append((v_xx, conv_xx, tape_xx, -0.5))
        solves.append((v_yy, conv_yy, tape_yy, -0.5))

    w_total = sum(v * s for v, _, _, s in solves)
    value = scale * w_total
    converged = all(c for _, c, _, _ in solves)

    # --- reverse pass ---------------------------------------------------
    dp = np.zeros(n)
    d_scale = w_total  # from value = scale * w_total
    d_log_b = np.zeros(n)

    def cost_grad(tape, upstream, cost_raw):
        """d(upstream * vhat)/d(unscaled cost), plus the scale contribution."""
        nonlocal d_scale
        d_chat, d_la, d_lb = _entropic_cost_vjp(tape)
        d_chat = d_chat * upstream
        d_scale += float((d_chat * (-cost_raw)).sum()) / scale**2
        return d_chat / scale, d_la * upstream, d_lb * upstream

    d_cxy, _, d_lb_xy = cost_grad(tape_xy, scale * 1.0, c_xy)
    d_log_b += d_lb_xy
    d_cxy = d_cxy * mask_xy
    # C_xy[i, j] = |X_i|^2 - 2 p_j <X_i, X_j> + p_j^2 |X_j|^2
    dp += 2.0 * p * sq * d_cxy.sum(axis=0) - 2.0 * (d_cxy * gram).sum(axis=0)

    if cfg.debiased:
        d_cxx, _, _ = cost_grad(tape_xx, scale * -0.5, c_xx)  # no p dependence
        d_cyy, d_la_yy, d_lb_yy = cost_grad(tape_yy, scale * -0.5, c_yy)
        d_log_b += d_la_yy + d_lb_yy
        d_cyy = d_cyy * mask_yy
        # C_yy[i, j] = p_i^2 |X_i|^2 - 2 p_i p_j <X_i, X_j> + p_j^2 |X_j|^2
        gp = d_cyy * gram
        dp += 2.0 * p * sq * d_cyy.sum(axis=1) - 2.0 * (gp @ p)
        dp += 2.0 * p * sq * d_cyy.sum(axis=0) - 2.0 * (gp.T @ p)

    # target marginal: log_b = log p - log sum(p)
    dp += d_log_b / p - d_log_b.sum() / sum_p

    # scale = weighted combination of selected entries of C_xy
    flat_rows, flat_cols = np.unravel_index(idx_scale, c_xy.shape)
    for i, j, w in zip(flat_rows, flat_cols, wts_scale):
        if raw_xy[i, j] > 0:
            dp[j] += d_scale * w * (2.0 * p[j] * sq[j] - 2.0 * gram[i, j])

    return SinkhornResult(value, dp, converged, it_xy)


# ---------------------------------------------------------------------------
# Unified objective
# ---------------------------------------------------------------------------


def loss_unsup(
    p: np.ndarray,
    delta: np.ndarray,
    gamma: np.ndarray,
    x: np.ndarray,
    weights: LossWeights,
    cfg: SinkhornConfig,
) -> tuple[float, np.ndarray, dict[str, float]]:
    """Weighted fine-tuning objective; components with zero weight are not
    computed at all (the transport solve in particular). Returns the value,
    the gradient w.r.t. p, and the unweighted component values for tracing."""
    p = np.asarray(p, dtype=np.float64)
    value, grad = loss_sd(p)
    components = {"sd": value}
    if weights.w_ptrim != 0.0:
        v, g = loss_ptrim(p, delta)
        value += weights.w_ptrim * v
        grad = grad + weights.w_ptrim * g
        components["ptrim"] = v
    if weights.w_pctrim != 0.0:
        v, g = loss_pctrim(p, gamma)
        value += weights.w_pctrim * v
        grad = grad + weights.w_pctrim * g
        components["pctrim"] = v
    if weights.w_rep != 0.0:
        res = sinkhorn_rep(x, p, cfg)
        value += weights.w_rep * res.value
        grad = grad + weights.w_rep * res.grad
        components["rep"] = res.value
    return value, grad, components
