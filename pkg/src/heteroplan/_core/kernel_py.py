"""Pure Python layer-split kernel.

Given a fixed pipeline configuration (per-type stage counts pp, per-layer
compute times comp, per-layer update times upd, per-type memory caps kmax on
layers per stage), find the integer layers-per-stage vector k minimizing the
analytic iteration time

    T(k) = max_t [ b * (k_t * comp_t) + k_t * upd_t + alpha * (G - k_t * comp_t) ]
    G    = sum over stages, in order, of that stage's k_t * comp_t

subject to sum_t pp_t * k_t == total_layers and 1 <= k_t <= kmax_t.

The search is an exact branch and bound: an equalization heuristic seeds the
incumbent, candidate values are visited in a near-ideal-first spiral, and
subtrees are cut with a real-valued lower bound.  Ties keep the first
candidate found, so results are deterministic.

Floating-point discipline: candidate costs are evaluated with exactly the
operation order of cost_model.estimate_iteration_time (G accumulated one
stage at a time, stage total b*Tc + Tu + alpha*(G - Tc)), so the returned T
compares bitwise equal to the canonical model. The compiled twin in
_kernels.pyx mirrors this file line for line; behavioral changes must land in
both.
"""
from __future__ import annotations

import math

BACKEND = "python"

_INF = float("inf")


def split_cost(
    pp: list[int],
    comp: list[float],
    upd: list[float],
    k: list[int],
    microbatches: int,
    alpha: float,
) -> float:
    """Canonical iteration time of one split (no feasibility checks)."""
    n = len(pp)
    grand = 0.0
    for t in range(n):
        tc = k[t] * comp[t]
        for _ in range(pp[t]):
            grand += tc
    best = -_INF
    for t in range(n):
        tc = k[t] * comp[t]
        tot = microbatches * tc + k[t] * upd[t] + alpha * (grand - tc)
        if tot > best:
            best = tot
    return best


def _half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def _fast_cost(pp, comp, upd, k, n, bmu, alpha):
    # quick real-valued cost for heuristic move selection; not canonical
    grand = 0.0
    for t in range(n):
        grand += pp[t] * (k[t] * comp[t])
    best = -_INF
    for t in range(n):
        tot = k[t] * ((bmu - alpha) * comp[t] + upd[t])
        if tot > best:
            best = tot
    return alpha * grand + best


def _build_seed(pp, comp, upd, kmax, total_layers, n, bmu, alpha, center):
    """Equalized split corrected to the exact layer total; None if stuck."""
    k = [0] * n
    for t in range(n):
        v = center[t]
        if v < 1:
            v = 1
        if v > kmax[t]:
            v = kmax[t]
        k[t] = v
    delta = total_layers
    for t in range(n):
        delta -= pp[t] * k[t]
    guard = 0
    while delta != 0:
        guard += 1
        if guard > 4 * total_layers + 16:
            return None
        best_t = -1
        best_cost = _INF
        if delta > 0:
            for t in range(n):
                if k[t] < kmax[t] and pp[t] <= delta:
                    k[t] += 1
                    c = _fast_cost(pp, comp, upd, k, n, bmu, alpha)
                    k[t] -= 1
                    if c < best_cost:
                        best_cost = c
                        best_t = t
            if best_t < 0:
                return None
            k[best_t] += 1
            delta -= pp[best_t]
        else:
            for t in range(n):
                if k[t] > 1 and pp[t] <= -delta:
                    k[t] -= 1
                    c = _fast_cost(pp, comp, upd, k, n, bmu, alpha)
                    k[t] += 1
                    if c < best_cost:
                        best_cost = c
                        best_t = t
            if best_t < 0:
                return None
            k[best_t] -= 1
            delta += pp[best_t]
    return k


def solve_layer_split(
    pp: list[int],
    comp: list[float],
    upd: list[float],
    kmax: list[int],
    total_layers: int,
    microbatches: int,
    alpha: float,
    seed: list[int] | None = None,
    cutoff: float = _INF,
) -> tuple[float, list[int]] | None:
    """Exact optimal split, or None when no valid assignment exists.

    seed, when given, is an extra starting incumbent (validated before use);
    the internal equalization seed is always tried as well.  cutoff makes the
    solver report None unless it finds a split strictly cheaper than cutoff,
    which lets a caller that already holds an incumbent skip whole configs.
    """
    n = len(pp)
    if n == 0:
        return None
    if cutoff is None:
        cutoff = _INF
    bmu = float(microbatches)

    sum_pp = 0
    for t in range(n):
        if kmax[t] < 1:
            return None
        sum_pp += pp[t]
    if sum_pp > total_layers:
        return None

    # suffix bounds for residual-capacity pruning and the cost lower bound
    suf_min = [0] * (n + 1)
    suf_max = [0] * (n + 1)
    suf_cmin = [0.0] * (n + 1)
    suf_beta = [0.0] * (n + 1)
    beta = [0.0] * n
    suf_cmin[n] = 0.0
    suf_beta[n] = -_INF
    for t in range(n - 1, -1, -1):
        suf_min[t] = suf_min[t + 1] + pp[t]
        suf_max[t] = suf_max[t + 1] + pp[t] * kmax[t]
        bt = (bmu - alpha) * comp[t] + upd[t]
        beta[t] = bt
        low = bt if bt >= 0.0 else bt * kmax[t]
        suf_beta[t] = low if low > suf_beta[t + 1] else suf_beta[t + 1]
        c = comp[t]
        if t == n - 1:
            suf_cmin[t] = c
        else:
            suf_cmin[t] = c if c < suf_cmin[t + 1] else suf_cmin[t + 1]
    if suf_max[0] < total_layers:
        return None

    denom = 0.0
    for t in range(n):
        denom += pp[t] / comp[t]
    tau = total_layers / denom
    center = [_half_up(tau / comp[t]) for t in range(n)]

    best_t_val = cutoff
    best_k: list[int] | None = None

    for cand in (_build_seed(pp, comp, upd, kmax, total_layers, n, bmu, alpha, center), seed):
        if cand is None or len(cand) != n:
            continue
        total = 0
        ok = True
        for t in range(n):
            if cand[t] < 1 or cand[t] > kmax[t]:
                ok = False
                break
            total += pp[t] * cand[t]
        if not ok or total != total_layers:
            continue
        cost = split_cost(pp, comp, upd, list(cand), microbatches, alpha)
        if cost < best_t_val:
            best_t_val = cost
            best_k = list(cand)

    k = [0] * n

    def descend(i: int, rem: int, grand: float, prefix_beta: float) -> None:
        nonlocal best_t_val, best_k
        if i == n:
            best = -_INF
            for t in range(n):
                tc = k[t] * comp[t]
                tot = microbatches * tc + k[t] * upd[t] + alpha * (grand - tc)
                if tot > best:
                    best = tot
            if best < best_t_val:
                best_t_val = best
                best_k = k.copy()
            return
        ppi = pp[i]
        hi_cap = rem - suf_min[i + 1]
        khi = hi_cap // ppi
        if khi > kmax[i]:
            khi = kmax[i]
        need = rem - suf_max[i + 1]
        if need > 0:
            klo = (need + ppi - 1) // ppi
        else:
            klo = 1
        if klo < 1:
            klo = 1
        if klo > khi:
            return
        c = comp[i]
        ctr = center[i]
        if ctr < klo:
            ctr = klo
        if ctr > khi:
            ctr = khi
        span = khi - klo
        for off in range(2 * span + 1):
            if off == 0:
                v = ctr
            elif off % 2 == 1:
                v = ctr + (off + 1) // 2
                if v > khi:
                    continue
            else:
                v = ctr - off // 2
                if v < klo:
                    continue
            rem2 = rem - ppi * v
            tc = v * c
            g_fast = grand + ppi * tc
            pb = v * beta[i]
            if pb < prefix_beta:
                pb = prefix_beta
            head = pb if pb > suf_beta[i + 1] else suf_beta[i + 1]
            bound = head + alpha * (g_fast + suf_cmin[i + 1] * rem2)
            if bound >= best_t_val:
                continue
            g2 = grand
            for _ in range(ppi):
                g2 += tc
            k[i] = v
            descend(i + 1, rem2, g2, pb)
        k[i] = 0

    descend(0, total_layers, 0.0, -_INF)
    if best_k is None:
        return None
    return best_t_val, best_k


def split_lower_bound(
    pp: list[int],
    comp: list[float],
    upd: list[float],
    kmax: list[int],
    total_layers: int,
    microbatches: int,
    alpha: float,
) -> float:
    """Certified lower bound on the best split_cost over feasible k.

    Relaxes the integer split to fractional stage loads and solves that
    relaxation exactly.  With beta_t = (b - alpha) * comp_t + upd_t the cost
    is alpha * G + max_t k_t * beta_t; sweeping the head term H over its
    breakpoints and greedy-filling layers cheapest-first under the caps
    min(kmax_t, H / beta_t) hits the relaxed optimum exactly.  Returns inf
    when no split fits at all.  Callers use this to skip exact solves that
    cannot beat an incumbent; the value can sit a few ulps above the true
    relaxed optimum, so compare against it with a relative margin.
    """
    n = len(pp)
    if n == 0:
        return _INF
    sum_pp = 0
    cap_layers = 0
    for t in range(n):
        sum_pp += pp[t]
        cap_layers += pp[t] * kmax[t]
    if sum_pp > total_layers or cap_layers < total_layers:
        return _INF
    rem_layers = float(total_layers - sum_pp)
    base = 0.0
    for t in range(n):
        base += pp[t] * comp[t]
    bcoef = float(microbatches) - alpha
    beta = [bcoef * comp[t] + upd[t] for t in range(n)]
    order = sorted(range(n), key=lambda t: (comp[t], t))

    degenerate = False
    for t in range(n):
        if beta[t] <= 0.0:
            degenerate = True
            break
    if degenerate:
        # non-positive head rate: bound head and volume separately
        head = -_INF
        for t in range(n):
            h = beta[t] if beta[t] >= 0.0 else beta[t] * kmax[t]
            if h > head:
                head = h
        g = base
        rem = rem_layers
        for t in order:
            e = float(pp[t] * (kmax[t] - 1))
            take = e if e < rem else rem
            g += take * comp[t]
            rem -= take
        return head + alpha * g

    h_min = beta[0]
    h_hi = beta[0] * kmax[0]
    sat = [0.0] * n
    for t in range(n):
        sat[t] = beta[t] * kmax[t]
        if beta[t] > h_min:
            h_min = beta[t]
        if sat[t] > h_hi:
            h_hi = sat[t]

    pts = [h_min, h_hi]
    for t in range(n):
        if h_min < sat[t] < h_hi:
            pts.append(sat[t])
    pts.sort()

    # between consecutive breakpoints every cap is linear in H, so the only
    # further slope changes are where a prefix capacity crosses the residual
    cands = list(pts)
    for i in range(len(pts) - 1):
        a = pts[i]
        b = pts[i + 1]
        if not b > a:
            continue
        mid = a + (b - a) * 0.5
        const = 0.0
        slope = 0.0
        for t in order:
            if mid >= sat[t]:
                const += pp[t] * (kmax[t] - 1.0)
            else:
                slope += pp[t] / beta[t]
                const -= float(pp[t])
            if slope > 0.0:
                root = (rem_layers - const) / slope
                if a < root < b:
                    # nudge right so the candidate lands on the feasible side
                    cands.append(root * (1.0 + 1e-12) + 1e-300)

    best = _INF
    for h in cands:
        g = base
        rem = rem_layers
        for t in order:
            if h >= sat[t]:
                e = float(pp[t] * (kmax[t] - 1))
            else:
                e = (h / beta[t] - 1.0) * pp[t]
                if e < 0.0:
                    e = 0.0
            take = e if e < rem else rem
            g += take * comp[t]
            rem -= take
        if rem > rem_layers * 1e-12 + 1e-30:
            continue
        f = h + alpha * g
        if f < best:
            best = f
    return best
