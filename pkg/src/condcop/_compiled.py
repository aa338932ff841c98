"""Compiled inner loops shared by the estimators.

Everything here works on plain arrays so that the public modules can keep
validation and bookkeeping in Python while the O(n^2) work runs in numba.
Summations run in a fixed order, which keeps results bit-stable.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

GAUSSIAN, STUDENT4, CLAYTON, GUMBEL, FRANK = 0, 1, 2, 3, 4

STUDENT_DF = 4.0
_STUDENT_CONST = (
    math.lgamma((STUDENT_DF + 2.0) / 2.0)
    + math.lgamma(STUDENT_DF / 2.0)
    - 2.0 * math.lgamma((STUDENT_DF + 1.0) / 2.0)
)

# Frank parameters this close to zero are treated as the independence copula.
FRANK_SNAP = 1e-8

STATUS_CONVERGED = 0
STATUS_BOUNDARY = 1
STATUS_FAILED = 2


# ---------------------------------------------------------------------------
# log-density and its derivative in theta, on pre-transformed coordinates
# ---------------------------------------------------------------------------


@njit(cache=True, nogil=True)
def _gaussian_terms(s, p, r):
    q = 1.0 - r * r
    logc = -0.5 * math.log(q) - (r * r * s - 2.0 * r * p) / (2.0 * q)
    score = r / q - (r * s - p * (1.0 + r * r)) / (q * q)
    return logc, score


@njit(cache=True, nogil=True)
def _student_terms(s, p, marg, r):
    nu = STUDENT_DF
    q = 1.0 - r * r
    quad = (s - 2.0 * r * p) / q
    dquad = (2.0 * r * s - 2.0 * p * (1.0 + r * r)) / (q * q)
    logc = _STUDENT_CONST - 0.5 * math.log(q) - 0.5 * (nu + 2.0) * math.log1p(quad / nu) + marg
    score = r / q - 0.5 * (nu + 2.0) * (dquad / nu) / (1.0 + quad / nu)
    return logc, score


@njit(cache=True, nogil=True)
def _clayton_terms(lu, lv, th):
    a1 = -th * lu
    a2 = -th * lv
    big = max(a1, a2)
    if big < 30.0:
        e1 = math.expm1(a1)
        e2 = math.expm1(a2)
        log_a = math.log1p(e1 + e2)
        inv_a = 1.0 / (1.0 + e1 + e2)
        dlog_a = (-lu * (e1 + 1.0) - lv * (e2 + 1.0)) * inv_a
    else:
        w1 = math.exp(a1 - big)
        w2 = math.exp(a2 - big)
        br = w1 + w2 - math.exp(-big)
        log_a = big + math.log(br)
        dlog_a = (-lu * w1 - lv * w2) / br
    logc = math.log1p(th) - (th + 1.0) * (lu + lv) - (2.0 + 1.0 / th) * log_a
    score = 1.0 / (1.0 + th) - (lu + lv) + log_a / (th * th) - (2.0 + 1.0 / th) * dlog_a
    return logc, score


@njit(cache=True, nogil=True)
def _gumbel_terms(a, b, la, lb, th):
    hi = max(la, lb)
    lo = min(la, lb)
    log_s = th * hi + math.log1p(math.exp(th * (lo - hi)))
    wa = math.exp(th * la - log_s)
    wb = math.exp(th * lb - log_s)
    g = wa * la + wb * lb
    t = math.exp(log_s / th)
    logc = -t + a + b + (th - 1.0) * (la + lb) + (1.0 / th - 2.0) * log_s + math.log(t + th - 1.0)
    dt = t * (g / th - log_s / (th * th))
    score = -dt + la + lb - log_s / (th * th) + (1.0 / th - 2.0) * g + (dt + 1.0) / (t + th - 1.0)
    return logc, score


@njit(cache=True, nogil=True)
def _frank_positive(u, v, th):
    m = min(u, v)
    big = max(u, v)
    e1 = math.expm1(-th * (1.0 - m))
    e2 = math.exp(-th * (big - m))
    e3 = math.expm1(-th * m)
    br = -e1 - e2 * e3
    logc = math.log(th) + math.log(-math.expm1(-th)) - th * (big - m) - 2.0 * math.log(br)
    dbr = (1.0 - m) * math.exp(-th * (1.0 - m)) + (big - m) * e2 * e3 + m * math.exp(-th * big)
    em = math.expm1(th)
    inv_em = 0.0 if math.isinf(em) else 1.0 / em
    score = 1.0 / th + inv_em - (big - m) - 2.0 * dbr / br
    return logc, score


@njit(cache=True, nogil=True)
def _frank_terms(u, v, th):
    if abs(th) < FRANK_SNAP:
        return 0.0, 0.5 * (1.0 - 2.0 * u) * (1.0 - 2.0 * v)
    if th < 0.0:
        logc, score = _frank_positive(u, 1.0 - v, -th)
        return logc, -score
    return _frank_positive(u, v, th)


@njit(cache=True, nogil=True)
def logc_score(code, c0, c1, c2, c3, theta):
    """Log-density and d/dtheta at one pre-transformed point."""
    if code == GAUSSIAN:
        return _gaussian_terms(c0, c1, theta)
    if code == STUDENT4:
        return _student_terms(c0, c1, c2, theta)
    if code == CLAYTON:
        return _clayton_terms(c0, c1, theta)
    if code == GUMBEL:
        return _gumbel_terms(c0, c1, c2, c3, theta)
    return _frank_terms(c0, c1, theta)


@njit(cache=True, nogil=True)
def logc_score_many(code, prep, theta):
    n = prep.shape[0]
    out_l = np.empty(n)
    out_s = np.empty(n)
    for i in range(n):
        out_l[i], out_s[i] = logc_score(code, prep[i, 0], prep[i, 1], prep[i, 2], prep[i, 3], theta[i])
    return out_l, out_s


# ---------------------------------------------------------------------------
# weighted canonical maximum likelihood, one row of weights per fit
# ---------------------------------------------------------------------------


@njit(cache=True, nogil=True)
def to_theta(code, phi):
    if code == GAUSSIAN or code == STUDENT4:
        return math.tanh(phi)
    if code == CLAYTON:
        return math.exp(phi)
    if code == GUMBEL:
        return 1.0 + math.exp(phi)
    return phi


@njit(cache=True, nogil=True)
def dtheta_dphi(code, phi):
    if code == GAUSSIAN or code == STUDENT4:
        t = math.tanh(phi)
        return 1.0 - t * t
    if code == CLAYTON or code == GUMBEL:
        return math.exp(phi)
    return 1.0


@njit(cache=True, nogil=True)
def _objective(code, prep, w, phi):
    theta = to_theta(code, phi)
    total_l = 0.0
    total_s = 0.0
    for i in range(prep.shape[0]):
        wi = w[i]
        if wi == 0.0:
            continue
        l, s = logc_score(code, prep[i, 0], prep[i, 1], prep[i, 2], prep[i, 3], theta)
        total_l += wi * l
        total_s += wi * s
    return total_l, total_s


@njit(cache=True, nogil=True)
def fit_weighted(code, prep, weights, phi_start, phi_lo, phi_hi, max_iter, gtol):
    """Maximise sum_i w_ti log c(theta; z_i) separately for every row t.

    One-dimensional quasi-Newton (secant curvature, finite-difference restart)
    on the unconstrained scale phi with a backtracking line search.
    Returns phi, mean log-likelihood, normalised theta-gradient and status.
    """
    n_fit = weights.shape[0]
    phi_out = np.empty(n_fit)
    ll_out = np.empty(n_fit)
    grad_out = np.empty(n_fit)
    status_out = np.empty(n_fit, dtype=np.int64)
    for t in range(n_fit):
        w = weights[t]
        wsum = 0.0
        for i in range(w.shape[0]):
            wsum += w[i]
        phi = min(max(phi_start[t], phi_lo), phi_hi)
        if not (wsum > 0.0):
            phi_out[t] = phi
            ll_out[t] = np.nan
            grad_out[t] = np.nan
            status_out[t] = STATUS_FAILED
            continue
        ll, gth = _objective(code, prep, w, phi)
        g = gth * dtheta_dphi(code, phi)
        status = STATUS_FAILED
        prev_phi = np.nan
        prev_g = np.nan
        for it in range(max_iter):
            if not (math.isfinite(ll) and math.isfinite(g)):
                status = STATUS_FAILED
                break
            if abs(gth) / wsum <= gtol:
                status = STATUS_CONVERGED
                break
            curv = np.nan
            if math.isfinite(prev_g) and phi != prev_phi:
                curv = (g - prev_g) / (phi - prev_phi)
            if not (curv < 0.0):
                d = 1e-6 * max(1.0, abs(phi))
                _, gth2 = _objective(code, prep, w, phi + d)
                curv = (gth2 * dtheta_dphi(code, phi + d) - g) / d
            if curv < 0.0 and math.isfinite(curv):
                step = -g / curv
            else:
                step = 1.0 if g > 0.0 else -1.0
            if step > 2.0:
                step = 2.0
            elif step < -2.0:
                step = -2.0
            accepted = False
            new_phi = phi
            new_ll = ll
            new_gth = gth
            for _ in range(60):
                cand = min(max(phi + step, phi_lo), phi_hi)
                cl, cg = _objective(code, prep, w, cand)
                if math.isfinite(cl) and cl >= ll - 1e-13 * abs(ll):
                    accepted = True
                    new_phi = cand
                    new_ll = cl
                    new_gth = cg
                    break
                step *= 0.5
            if not accepted or new_phi == phi:
                at_edge = (phi <= phi_lo and g < 0.0) or (phi >= phi_hi and g > 0.0)
                status = STATUS_BOUNDARY if at_edge else STATUS_CONVERGED
                if not at_edge and abs(gth) / wsum > 1e3 * gtol:
                    status = STATUS_FAILED
                break
            prev_phi = phi
            prev_g = g
            phi = new_phi
            ll = new_ll
            gth = new_gth
            g = gth * dtheta_dphi(code, phi)
            if (phi <= phi_lo and g < 0.0) or (phi >= phi_hi and g > 0.0):
                status = STATUS_BOUNDARY
                break
        phi_out[t] = phi
        ll_out[t] = ll / wsum
        grad_out[t] = gth / wsum
        status_out[t] = status
    return phi_out, ll_out, grad_out, status_out


# ---------------------------------------------------------------------------
# weighted Sklar composition  C(u) = F_w(F_{w,1}^-(u_1), ..., F_{w,p}^-(u_p))
# ---------------------------------------------------------------------------


@njit(cache=True, nogil=True)
def _thresholds(w_sorted_cum, total, gend, u_sorted, out):
    """For sorted u values, number of leading sorted positions below F^-(u)."""
    n = w_sorted_cum.shape[0]
    g = u_sorted.shape[0]
    a = 0
    while a < g and u_sorted[a] <= 0.0:
        out[a] = 0
        a += 1
    tol = 1e-12 * total
    q = 0
    while a < g:
        target = u_sorted[a] * total - tol
        while q < n and w_sorted_cum[q] < target:
            q += 1
        if q >= n:
            out[a] = n
        else:
            out[a] = gend[q] + 1
        a += 1


@njit(cache=True, nogil=True)
def sklar_grid(weights, order, pos, gend, ugrid, normalize):
    """Weighted Sklar composition on a tensor grid, for every weight row.

    weights : (T, n); order/pos/gend : (p, n) sort structure per margin;
    ugrid : (p, G) sorted grid per margin.  Returns (T, G**p) in C order.
    """
    n_nodes, n = weights.shape
    p, g = ugrid.shape
    size = 1
    for _ in range(p):
        size *= g + 1
    strides = np.empty(p, dtype=np.int64)
    s = 1
    for k in range(p - 1, -1, -1):
        strides[k] = s
        s *= g + 1
    out_size = 1
    for _ in range(p):
        out_size *= g
    out = np.zeros((n_nodes, out_size))
    cum = np.empty(n)
    thr = np.empty(g, dtype=np.int64)
    first = np.empty((p, n), dtype=np.int64)
    hist = np.empty(size)
    for t in range(n_nodes):
        w = weights[t]
        total = 0.0
        for j in range(n):
            total += w[j]
        if not (total > 0.0):
            for c in range(out_size):
                out[t, c] = np.nan
            continue
        for k in range(p):
            acc = 0.0
            for q in range(n):
                acc += w[order[k, q]]
                cum[q] = acc
            _thresholds(cum, acc, gend[k], ugrid[k], thr)
            a = 0
            for q in range(n):
                while a < g and thr[a] <= q:
                    a += 1
                first[k, order[k, q]] = a
        hist[:] = 0.0
        for j in range(n):
            if w[j] == 0.0:
                continue
            idx = 0
            for k in range(p):
                idx += first[k, j] * strides[k]
            hist[idx] += w[j]
        # cumulative sums along every axis
        for k in range(p):
            st = strides[k]
            for idx in range(size):
                if (idx // st) % (g + 1) != 0:
                    hist[idx] += hist[idx - st]
        denom = total if normalize else float(n)
        c = 0
        for idx in range(size):
            ok = True
            rem = idx
            for k in range(p):
                if rem // strides[k] >= g:
                    ok = False
                    break
                rem = rem % strides[k]
            if ok:
                val = hist[idx] / denom
                out[t, c] = min(val, 1.0) if normalize else val
                c += 1
    return out


@njit(cache=True, nogil=True)
def _fenwick_add(tree, i, v):
    i += 1
    while i < tree.shape[0]:
        tree[i] += v
        i += i & (-i)


@njit(cache=True, nogil=True)
def _fenwick_prefix(tree, i):
    # sum of entries [0, i)
    s = 0.0
    while i > 0:
        s += tree[i]
        i -= i & (-i)
    return s


@njit(cache=True, nogil=True)
def sklar_points(weights, order, pos, gend, upts, uorder, normalize):
    """Weighted Sklar composition at scattered points, for every weight row.

    upts : (P, p) evaluation points; uorder : (p, P) argsort of each column.
    Bivariate input uses an O((n + P) log n) dominance count, other
    dimensions a direct count.  Returns (T, P).
    """
    n_nodes, n = weights.shape
    n_pts, p = upts.shape
    out = np.empty((n_nodes, n_pts))
    cum = np.empty(n)
    thr_sorted = np.empty(n_pts, dtype=np.int64)
    thr = np.empty((p, n_pts), dtype=np.int64)
    usorted = np.empty(n_pts)
    tree = np.empty(n + 1)
    bucket_start = np.empty(n + 2, dtype=np.int64)
    bucket_items = np.empty(n_pts, dtype=np.int64)
    for t in range(n_nodes):
        w = weights[t]
        total = 0.0
        for j in range(n):
            total += w[j]
        if not (total > 0.0):
            for q in range(n_pts):
                out[t, q] = np.nan
            continue
        for k in range(p):
            acc = 0.0
            for q in range(n):
                acc += w[order[k, q]]
                cum[q] = acc
            for q in range(n_pts):
                usorted[q] = upts[uorder[k, q], k]
            _thresholds(cum, acc, gend[k], usorted, thr_sorted)
            for q in range(n_pts):
                thr[k, uorder[k, q]] = thr_sorted[q]
        denom = total if normalize else float(n)
        if p == 2:
            # bucket queries by their first-margin threshold
            bucket_start[:] = 0
            for q in range(n_pts):
                bucket_start[thr[0, q] + 1] += 1
            for c in range(1, n + 2):
                bucket_start[c] += bucket_start[c - 1]
            fill = bucket_start.copy()
            for q in range(n_pts):
                b = thr[0, q]
                bucket_items[fill[b]] = q
                fill[b] += 1
            tree[:] = 0.0
            for r in range(n + 1):
                for c in range(bucket_start[r], bucket_start[r + 1]):
                    q = bucket_items[c]
                    val = _fenwick_prefix(tree, thr[1, q]) / denom
                    out[t, q] = min(val, 1.0) if normalize else val
                if r < n:
                    j = order[0, r]
                    if w[j] != 0.0:
                        _fenwick_add(tree, pos[1, j], w[j])
        else:
            for q in range(n_pts):
                acc = 0.0
                for j in range(n):
                    inside = True
                    for k in range(p):
                        if pos[k, j] >= thr[k, q]:
                            inside = False
                            break
                    if inside:
                        acc += w[j]
                out[t, q] = min(acc / denom, 1.0) if normalize else acc / denom
    return out


@njit(cache=True, nogil=True)
def weighted_cdf_at_own(weights, values, rows):
    """sum_j W[t, j] 1(X_j <= X_{rows[t]}) / sum_j W[t, j] per margin.

    weights : (T, n); values : (n, p).  Returns (T, p).
    """
    n_nodes, n = weights.shape
    p = values.shape[1]
    out = np.empty((n_nodes, p))
    for t in range(n_nodes):
        w = weights[t]
        r = rows[t]
        total = 0.0
        for j in range(n):
            total += w[j]
        for k in range(p):
            ref = values[r, k]
            acc = 0.0
            for j in range(n):
                if values[j, k] <= ref:
                    acc += w[j]
            out[t, k] = acc / total if total > 0.0 else np.nan
    return out


@njit(cache=True, nogil=True)
def weighted_cdf_at(weights, values, points):
    """sum_j W[t, j] 1(X_jk <= x_tk) / sum_j W[t, j] for a point per row."""
    n_nodes, n = weights.shape
    p = values.shape[1]
    out = np.empty((n_nodes, p))
    for t in range(n_nodes):
        w = weights[t]
        total = 0.0
        for j in range(n):
            total += w[j]
        for k in range(p):
            ref = points[t, k]
            acc = 0.0
            for j in range(n):
                if values[j, k] <= ref:
                    acc += w[j]
            out[t, k] = acc / total if total > 0.0 else np.nan
    return out


@njit(cache=True, nogil=True)
def rank_kernel_matrix(v_nodes, v_obs, h, kernel_code):
    """Product kernel K_h(v_obs - v_node) for every (node, observation) pair."""
    n_nodes, q = v_nodes.shape
    n = v_obs.shape[0]
    out = np.empty((n_nodes, n))
    norm = 1.0 / (h ** q)
    inv_sqrt_2pi = 1.0 / math.sqrt(2.0 * math.pi)
    for t in range(n_nodes):
        for j in range(n):
            val = norm
            for c in range(q):
                x = (v_obs[j, c] - v_nodes[t, c]) / h
                if kernel_code == 0:
                    val *= inv_sqrt_2pi * math.exp(-0.5 * x * x)
                else:
                    val *= 0.75 * (1.0 - x * x) if abs(x) < 1.0 else 0.0
            out[t, j] = val
    return out
