# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled layer-split kernel, the line-for-line twin of kernel_py.

Same algorithm, same floating-point operation order (the build disables FMA
contraction), so solve_layer_split returns bitwise-identical costs and splits.
The branch and bound runs without the GIL, which is what makes --workers > 1
worth having.  Behavioral changes must land in kernel_py as well.
"""
from libc.math cimport floor, INFINITY
from libc.stdlib cimport free, malloc

BACKEND = "cython"


ctypedef struct Ctx:
    long n
    long microbatches
    double alpha
    long* pp
    double* comp
    double* upd
    long* kmax
    long* suf_min
    long* suf_max
    double* suf_cmin
    double* suf_beta
    double* beta
    long* center
    long* k
    long* best_k
    double best_t
    bint found


cdef double c_split_cost(long n, long* pp, double* comp, double* upd, long* k,
                         long microbatches, double alpha) noexcept nogil:
    cdef double grand = 0.0
    cdef double tc, tot, best
    cdef long t, j
    for t in range(n):
        tc = k[t] * comp[t]
        for j in range(pp[t]):
            grand += tc
    best = -INFINITY
    for t in range(n):
        tc = k[t] * comp[t]
        tot = microbatches * tc + k[t] * upd[t] + alpha * (grand - tc)
        if tot > best:
            best = tot
    return best


cdef long c_half_up(double x) noexcept nogil:
    return <long>floor(x + 0.5)


cdef double c_fast_cost(long* pp, double* comp, double* upd, long* k, long n,
                        double bmu, double alpha) noexcept nogil:
    # quick real-valued cost for heuristic move selection; not canonical
    cdef double grand = 0.0
    cdef double tot, best
    cdef long t
    for t in range(n):
        grand += pp[t] * (k[t] * comp[t])
    best = -INFINITY
    for t in range(n):
        tot = k[t] * ((bmu - alpha) * comp[t] + upd[t])
        if tot > best:
            best = tot
    return alpha * grand + best


cdef bint c_build_seed(long* pp, double* comp, double* upd, long* kmax,
                       long total_layers, long n, double bmu, double alpha,
                       long* center, long* k) noexcept nogil:
    cdef long t, v, delta, guard, best_t
    cdef double c, best_cost
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
            return False
        best_t = -1
        best_cost = INFINITY
        if delta > 0:
            for t in range(n):
                if k[t] < kmax[t] and pp[t] <= delta:
                    k[t] += 1
                    c = c_fast_cost(pp, comp, upd, k, n, bmu, alpha)
                    k[t] -= 1
                    if c < best_cost:
                        best_cost = c
                        best_t = t
            if best_t < 0:
                return False
            k[best_t] += 1
            delta -= pp[best_t]
        else:
            for t in range(n):
                if k[t] > 1 and pp[t] <= -delta:
                    k[t] -= 1
                    c = c_fast_cost(pp, comp, upd, k, n, bmu, alpha)
                    k[t] += 1
                    if c < best_cost:
                        best_cost = c
                        best_t = t
            if best_t < 0:
                return False
            k[best_t] -= 1
            delta += pp[best_t]
    return True


cdef void c_descend(Ctx* ctx, long i, long rem, double grand, double prefix_beta) noexcept nogil:
    cdef long n = ctx.n
    cdef double best, tc, tot, c, g_fast, pb, head, bound, g2
    cdef long t, j, ppi, khi, klo, need, ctr, span, off, v, rem2
    if i == n:
        best = -INFINITY
        for t in range(n):
            tc = ctx.k[t] * ctx.comp[t]
            tot = ctx.microbatches * tc + ctx.k[t] * ctx.upd[t] + ctx.alpha * (grand - tc)
            if tot > best:
                best = tot
        if best < ctx.best_t:
            ctx.best_t = best
            for t in range(n):
                ctx.best_k[t] = ctx.k[t]
            ctx.found = True
        return
    ppi = ctx.pp[i]
    khi = (rem - ctx.suf_min[i + 1]) // ppi
    if khi > ctx.kmax[i]:
        khi = ctx.kmax[i]
    need = rem - ctx.suf_max[i + 1]
    if need > 0:
        klo = (need + ppi - 1) // ppi
    else:
        klo = 1
    if klo < 1:
        klo = 1
    if klo > khi:
        return
    c = ctx.comp[i]
    ctr = ctx.center[i]
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
        pb = v * ctx.beta[i]
        if pb < prefix_beta:
            pb = prefix_beta
        head = pb if pb > ctx.suf_beta[i + 1] else ctx.suf_beta[i + 1]
        bound = head + ctx.alpha * (g_fast + ctx.suf_cmin[i + 1] * rem2)
        if bound >= ctx.best_t:
            continue
        g2 = grand
        for j in range(ppi):
            g2 += tc
        ctx.k[i] = v
        c_descend(ctx, i + 1, rem2, g2, pb)
    ctx.k[i] = 0


cdef bint c_solve(Ctx* ctx, long total_layers, long* seed, bint has_seed) noexcept nogil:
    """Fills ctx.best_t / ctx.best_k; returns False on structural infeasibility."""
    cdef long n = ctx.n
    cdef long t, total, sum_pp
    cdef double bmu = ctx.microbatches
    cdef double bt, low, c, denom, tau, cost
    cdef bint ok

    sum_pp = 0
    for t in range(n):
        if ctx.kmax[t] < 1:
            return False
        sum_pp += ctx.pp[t]
    if sum_pp > total_layers:
        return False

    ctx.suf_min[n] = 0
    ctx.suf_max[n] = 0
    ctx.suf_cmin[n] = 0.0
    ctx.suf_beta[n] = -INFINITY
    for t in range(n - 1, -1, -1):
        ctx.suf_min[t] = ctx.suf_min[t + 1] + ctx.pp[t]
        ctx.suf_max[t] = ctx.suf_max[t + 1] + ctx.pp[t] * ctx.kmax[t]
        bt = (bmu - ctx.alpha) * ctx.comp[t] + ctx.upd[t]
        ctx.beta[t] = bt
        low = bt if bt >= 0.0 else bt * ctx.kmax[t]
        ctx.suf_beta[t] = low if low > ctx.suf_beta[t + 1] else ctx.suf_beta[t + 1]
        c = ctx.comp[t]
        if t == n - 1:
            ctx.suf_cmin[t] = c
        else:
            ctx.suf_cmin[t] = c if c < ctx.suf_cmin[t + 1] else ctx.suf_cmin[t + 1]
    if ctx.suf_max[0] < total_layers:
        return False

    denom = 0.0
    for t in range(n):
        denom += ctx.pp[t] / ctx.comp[t]
    tau = total_layers / denom
    for t in range(n):
        ctx.center[t] = c_half_up(tau / ctx.comp[t])

    # incumbents: the equalization seed, then the caller's seed, in that order
    if c_build_seed(ctx.pp, ctx.comp, ctx.upd, ctx.kmax, total_layers, n, bmu,
                    ctx.alpha, ctx.center, ctx.k):
        total = 0
        ok = True
        for t in range(n):
            if ctx.k[t] < 1 or ctx.k[t] > ctx.kmax[t]:
                ok = False
                break
            total += ctx.pp[t] * ctx.k[t]
        if ok and total == total_layers:
            cost = c_split_cost(n, ctx.pp, ctx.comp, ctx.upd, ctx.k,
                                ctx.microbatches, ctx.alpha)
            if cost < ctx.best_t:
                ctx.best_t = cost
                for t in range(n):
                    ctx.best_k[t] = ctx.k[t]
                ctx.found = True
    if has_seed:
        total = 0
        ok = True
        for t in range(n):
            if seed[t] < 1 or seed[t] > ctx.kmax[t]:
                ok = False
                break
            total += ctx.pp[t] * seed[t]
        if ok and total == total_layers:
            cost = c_split_cost(n, ctx.pp, ctx.comp, ctx.upd, seed,
                                ctx.microbatches, ctx.alpha)
            if cost < ctx.best_t:
                ctx.best_t = cost
                for t in range(n):
                    ctx.best_k[t] = seed[t]
                ctx.found = True

    for t in range(n):
        ctx.k[t] = 0
    c_descend(ctx, 0, total_layers, 0.0, -INFINITY)
    return True


def split_cost(pp, comp, upd, k, microbatches, alpha):
    """Canonical iteration time of one split (no feasibility checks)."""
    cdef long n = len(pp)
    cdef long* c_pp = <long*>malloc(n * sizeof(long))
    cdef double* c_comp = <double*>malloc(n * sizeof(double))
    cdef double* c_upd = <double*>malloc(n * sizeof(double))
    cdef long* c_k = <long*>malloc(n * sizeof(long))
    cdef long t
    cdef double out
    if c_pp == NULL or c_comp == NULL or c_upd == NULL or c_k == NULL:
        free(c_pp); free(c_comp); free(c_upd); free(c_k)
        raise MemoryError
    try:
        for t in range(n):
            c_pp[t] = pp[t]
            c_comp[t] = comp[t]
            c_upd[t] = upd[t]
            c_k[t] = k[t]
        out = c_split_cost(n, c_pp, c_comp, c_upd, c_k, microbatches, alpha)
    finally:
        free(c_pp); free(c_comp); free(c_upd); free(c_k)
    return out


def solve_layer_split(pp, comp, upd, kmax, total_layers, microbatches, alpha,
                      seed=None, cutoff=None):
    """Exact optimal split, or None when no valid assignment exists.

    Identical contract to kernel_py.solve_layer_split; see that module.  The
    search itself runs with the GIL released.
    """
    cdef long n = len(pp)
    if n == 0:
        return None
    cdef double c_cutoff = INFINITY if cutoff is None else <double>cutoff
    cdef long c_total = total_layers
    cdef long c_micro = microbatches
    cdef double c_alpha = alpha
    cdef bint has_seed = seed is not None and len(seed) == n
    cdef Ctx ctx
    cdef long t
    cdef bint feasible
    cdef long* c_seed = NULL

    ctx.n = n
    ctx.microbatches = c_micro
    ctx.alpha = c_alpha
    ctx.pp = <long*>malloc(n * sizeof(long))
    ctx.comp = <double*>malloc(n * sizeof(double))
    ctx.upd = <double*>malloc(n * sizeof(double))
    ctx.kmax = <long*>malloc(n * sizeof(long))
    ctx.suf_min = <long*>malloc((n + 1) * sizeof(long))
    ctx.suf_max = <long*>malloc((n + 1) * sizeof(long))
    ctx.suf_cmin = <double*>malloc((n + 1) * sizeof(double))
    ctx.suf_beta = <double*>malloc((n + 1) * sizeof(double))
    ctx.beta = <double*>malloc(n * sizeof(double))
    ctx.center = <long*>malloc(n * sizeof(long))
    ctx.k = <long*>malloc(n * sizeof(long))
    ctx.best_k = <long*>malloc(n * sizeof(long))
    if has_seed:
        c_seed = <long*>malloc(n * sizeof(long))
    ctx.best_t = c_cutoff
    ctx.found = False

    if (ctx.pp == NULL or ctx.comp == NULL or ctx.upd == NULL or ctx.kmax == NULL
            or ctx.suf_min == NULL or ctx.suf_max == NULL or ctx.suf_cmin == NULL
            or ctx.suf_beta == NULL or ctx.beta == NULL or ctx.center == NULL
            or ctx.k == NULL or ctx.best_k == NULL or (has_seed and c_seed == NULL)):
        _free_ctx(&ctx, c_seed)
        raise MemoryError

    try:
        for t in range(n):
            ctx.pp[t] = pp[t]
            ctx.comp[t] = comp[t]
            ctx.upd[t] = upd[t]
            ctx.kmax[t] = kmax[t]
        if has_seed:
            for t in range(n):
                c_seed[t] = seed[t]
        with nogil:
            feasible = c_solve(&ctx, c_total, c_seed, has_seed)
        if not feasible or not ctx.found:
            return None
        return ctx.best_t, [ctx.best_k[t] for t in range(n)]
    finally:
        _free_ctx(&ctx, c_seed)


cdef void _free_ctx(Ctx* ctx, long* c_seed):
    free(ctx.pp); free(ctx.comp); free(ctx.upd); free(ctx.kmax)
    free(ctx.suf_min); free(ctx.suf_max); free(ctx.suf_cmin); free(ctx.suf_beta)
    free(ctx.beta); free(ctx.center); free(ctx.k); free(ctx.best_k)
    free(c_seed)


cdef double c_split_bound(long n, long* pp, double* comp, double* upd, long* kmax,
                          long total_layers, long microbatches, double alpha,
                          double* beta, double* sat, long* order,
                          double* pts, double* cands) noexcept nogil:
    cdef long sum_pp = 0
    cdef long cap_layers = 0
    cdef long t, i, j, key, npts, ncand
    cdef double rem_layers, base, bcoef, h_min, h_hi, a, b, mid
    cdef double const, slope, root, g, rem, e, take, f, best, h, head
    cdef bint degenerate

    for t in range(n):
        sum_pp += pp[t]
        cap_layers += pp[t] * kmax[t]
    if sum_pp > total_layers or cap_layers < total_layers:
        return INFINITY
    rem_layers = <double>(total_layers - sum_pp)
    base = 0.0
    for t in range(n):
        base += pp[t] * comp[t]
    bcoef = <double>microbatches - alpha
    for t in range(n):
        beta[t] = bcoef * comp[t] + upd[t]

    for t in range(n):
        order[t] = t
    for i in range(1, n):
        key = order[i]
        j = i - 1
        while j >= 0 and (comp[order[j]] > comp[key]
                          or (comp[order[j]] == comp[key] and order[j] > key)):
            order[j + 1] = order[j]
            j -= 1
        order[j + 1] = key

    degenerate = False
    for t in range(n):
        if beta[t] <= 0.0:
            degenerate = True
            break
    if degenerate:
        head = -INFINITY
        for t in range(n):
            h = beta[t] if beta[t] >= 0.0 else beta[t] * kmax[t]
            if h > head:
                head = h
        g = base
        rem = rem_layers
        for j in range(n):
            t = order[j]
            e = <double>(pp[t] * (kmax[t] - 1))
            take = e if e < rem else rem
            g += take * comp[t]
            rem -= take
        return head + alpha * g

    h_min = beta[0]
    h_hi = beta[0] * kmax[0]
    for t in range(n):
        sat[t] = beta[t] * kmax[t]
        if beta[t] > h_min:
            h_min = beta[t]
        if sat[t] > h_hi:
            h_hi = sat[t]

    npts = 0
    pts[npts] = h_min
    npts += 1
    pts[npts] = h_hi
    npts += 1
    for t in range(n):
        if h_min < sat[t] and sat[t] < h_hi:
            pts[npts] = sat[t]
            npts += 1
    for i in range(1, npts):
        a = pts[i]
        j = i - 1
        while j >= 0 and pts[j] > a:
            pts[j + 1] = pts[j]
            j -= 1
        pts[j + 1] = a

    ncand = 0
    for i in range(npts):
        cands[ncand] = pts[i]
        ncand += 1
    for i in range(npts - 1):
        a = pts[i]
        b = pts[i + 1]
        if not (b > a):
            continue
        mid = a + (b - a) * 0.5
        const = 0.0
        slope = 0.0
        for j in range(n):
            t = order[j]
            if mid >= sat[t]:
                const += pp[t] * (kmax[t] - 1.0)
            else:
                slope += pp[t] / beta[t]
                const -= <double>pp[t]
            if slope > 0.0:
                root = (rem_layers - const) / slope
                if a < root and root < b:
                    cands[ncand] = root * (1.0 + 1e-12) + 1e-300
                    ncand += 1

    best = INFINITY
    for i in range(ncand):
        h = cands[i]
        g = base
        rem = rem_layers
        for j in range(n):
            t = order[j]
            if h >= sat[t]:
                e = <double>(pp[t] * (kmax[t] - 1))
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


def split_lower_bound(pp, comp, upd, kmax, total_layers, microbatches, alpha):
    """Certified lower bound on the best split_cost over feasible k.

    Identical contract to kernel_py.split_lower_bound; see that module.
    """
    cdef long n = len(pp)
    if n == 0:
        return INFINITY
    cdef long* c_pp = <long*>malloc(n * sizeof(long))
    cdef double* c_comp = <double*>malloc(n * sizeof(double))
    cdef double* c_upd = <double*>malloc(n * sizeof(double))
    cdef long* c_kmax = <long*>malloc(n * sizeof(long))
    cdef double* c_beta = <double*>malloc(n * sizeof(double))
    cdef double* c_sat = <double*>malloc(n * sizeof(double))
    cdef long* c_order = <long*>malloc(n * sizeof(long))
    cdef double* c_pts = <double*>malloc((n + 2) * sizeof(double))
    cdef double* c_cands = <double*>malloc(((n + 2) + n * (n + 1)) * sizeof(double))
    cdef long t
    cdef double out
    cdef long c_total = total_layers
    cdef long c_micro = microbatches
    cdef double c_alpha = alpha
    if (c_pp == NULL or c_comp == NULL or c_upd == NULL or c_kmax == NULL
            or c_beta == NULL or c_sat == NULL or c_order == NULL
            or c_pts == NULL or c_cands == NULL):
        free(c_pp); free(c_comp); free(c_upd); free(c_kmax); free(c_beta)
        free(c_sat); free(c_order); free(c_pts); free(c_cands)
        raise MemoryError
    try:
        for t in range(n):
            c_pp[t] = pp[t]
            c_comp[t] = comp[t]
            c_upd[t] = upd[t]
            c_kmax[t] = kmax[t]
        with nogil:
            out = c_split_bound(n, c_pp, c_comp, c_upd, c_kmax, c_total, c_micro,
                                c_alpha, c_beta, c_sat, c_order, c_pts, c_cands)
    finally:
        free(c_pp); free(c_comp); free(c_upd); free(c_kmax); free(c_beta)
        free(c_sat); free(c_order); free(c_pts); free(c_cands)
    return out
