# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled tile rasterizer and colour-side backward pass.

Inputs are the per-surfel arrays produced by ``prepare`` (already depth sorted,
camera space, float64) plus the scene's float32 texture stacks. Both entry points
walk each tile's surfel list in sorted order, so per-pixel summation order is
identical to the numpy paths.
"""

import numpy as np
cimport numpy as cnp
from cython.parallel cimport prange
from libc.math cimport sqrt, exp, floor, fabs
from libc.stdlib cimport malloc, realloc, free

cnp.import_array()

cdef double NEAR_EPS = 1e-4
cdef double PARALLEL_EPS = 1e-9


cdef struct Data:
    const double* mu
    const double* tx
    const double* bx
    const double* nx
    const double* scale
    const double* omega
    const double* shc
    const double* dc
    const double* nw
    const int* bbox
    const cnp.int64_t* texi
    const float* low
    const float* high
    int SL
    int SH
    double fx
    double fy
    double cx
    double cy
    int W
    int H
    double cutoff
    double tfloor


cdef struct Hit:
    int s
    double u
    double v
    double depth
    double a
    double T
    double rgb[3]
    double hv[4]
    int rgb_free[3]
    int a_free
    int idx_l[4]
    double w_l[4]
    int idx_h[4]
    double w_h[4]


cdef inline double tanh(double x) noexcept nogil:
    # 1 - 2 / (e^{2x} + 1): about twice as fast as libm tanh, absolute error ~1e-16
    return 1.0 - 2.0 / (exp(2.0 * x) + 1.0)


cdef inline int clampi(int x, int lo, int hi) noexcept nogil:
    if x < lo:
        return lo
    if x > hi:
        return hi
    return x


cdef inline void taps(int S, double u, double v, int* idx, double* w) noexcept nogil:
    cdef double tx = (u + 1.0) * 0.5 * S - 0.5
    cdef double ty = (v + 1.0) * 0.5 * S - 0.5
    cdef double x0f = floor(tx)
    cdef double y0f = floor(ty)
    cdef double fx = tx - x0f
    cdef double fy = ty - y0f
    cdef int x0 = <int>x0f
    cdef int y0 = <int>y0f
    cdef int c0 = clampi(x0, 0, S - 1)
    cdef int c1 = clampi(x0 + 1, 0, S - 1)
    cdef int r0 = clampi(y0, 0, S - 1)
    cdef int r1 = clampi(y0 + 1, 0, S - 1)
    idx[0] = r0 * S + c0
    idx[1] = r0 * S + c1
    idx[2] = r1 * S + c0
    idx[3] = r1 * S + c1
    w[0] = (1.0 - fx) * (1.0 - fy)
    w[1] = fx * (1.0 - fy)
    w[2] = (1.0 - fx) * fy
    w[3] = fx * fy


cdef inline double fetch(const float* tex, const int* idx, const double* w, int ch) noexcept nogil:
    return (tex[idx[0] * 4 + ch] * w[0] + tex[idx[1] * 4 + ch] * w[1]
            + tex[idx[2] * 4 + ch] * w[2] + tex[idx[3] * 4 + ch] * w[3])


cdef struct Surf:
    int s
    double n0, n1, n2
    double m0, m1, m2
    double t0, t1, t2
    double b0, b1, b2
    double mn
    double sx, sy
    double om
    double dc
    const float* lo
    const float* hi


cdef inline void load_surf(const Data* D, int s, Surf* f) noexcept nogil:
    """Per-surfel constants, loaded once per surfel instead of once per pixel."""
    cdef const double* n = D.nx + 3 * s
    cdef const double* m = D.mu + 3 * s
    cdef const double* t = D.tx + 3 * s
    cdef const double* b = D.bx + 3 * s
    f.s = s
    f.n0 = n[0]
    f.n1 = n[1]
    f.n2 = n[2]
    f.m0 = m[0]
    f.m1 = m[1]
    f.m2 = m[2]
    f.t0 = t[0]
    f.t1 = t[1]
    f.t2 = t[2]
    f.b0 = b[0]
    f.b1 = b[1]
    f.b2 = b[2]
    f.mn = m[0] * n[0] + m[1] * n[1] + m[2] * n[2]
    f.sx = D.scale[2 * s]
    f.sy = D.scale[2 * s + 1]
    f.om = D.omega[s]
    f.dc = D.dc[s]
    f.lo = D.low + D.texi[s] * D.SL * D.SL * 4
    f.hi = D.high + D.texi[s] * D.SH * D.SH * 4


cdef inline int eval_hit(const Data* D, const Surf* f, double dx, double dy, double dnorm,
                         Hit* h) noexcept nogil:
    """Intersect pixel ray (dx, dy, 1) with a loaded surfel and shade it.

    Returns 1 for a hit whose alpha reaches the cutoff, 0 otherwise.
    """
    cdef double denom = dx * f.n0 + dy * f.n1 + f.n2
    cdef double tt, px, py, pz, u, v, raw
    cdef int c, s = f.s
    if fabs(denom) < PARALLEL_EPS * dnorm:
        return 0
    tt = f.mn / denom
    if tt * dnorm <= NEAR_EPS:
        return 0
    px = tt * dx - f.m0
    py = tt * dy - f.m1
    pz = tt - f.m2
    u = (px * f.t0 + py * f.t1 + pz * f.t2) / f.sx
    if fabs(u) > 1.0:
        return 0
    v = (px * f.b0 + py * f.b1 + pz * f.b2) / f.sy
    if fabs(v) > 1.0:
        return 0
    h.s = s
    h.u = u
    h.v = v
    h.depth = tt * dnorm
    taps(D.SL, u, v, h.idx_l, h.w_l)
    taps(D.SH, u, v, h.idx_h, h.w_h)
    # alpha first: most rejected hits fall in the transparent fringe of the texture
    h.hv[3] = tanh(fetch(f.hi, h.idx_h, h.w_h, 3))
    raw = fetch(f.lo, h.idx_l, h.w_l, 3) + f.om * h.hv[3] + f.dc
    h.a_free = 0
    if raw <= 0.0:
        h.a = 0.0
    elif raw >= 1.0:
        h.a = 1.0
    else:
        h.a = raw
        h.a_free = 1
    if h.a < D.cutoff:
        return 0
    for c in range(3):
        h.hv[c] = tanh(fetch(f.hi, h.idx_h, h.w_h, c))
        raw = D.shc[3 * s + c] + fetch(f.lo, h.idx_l, h.w_l, c) + f.om * h.hv[c]
        h.rgb_free[c] = 0
        if raw <= 0.0:
            h.rgb[c] = 0.0
        elif raw >= 1.0:
            h.rgb[c] = 1.0
        else:
            h.rgb[c] = raw
            h.rgb_free[c] = 1
    return 1


cdef Data make_data(double[:, ::1] mu, double[:, ::1] tx, double[:, ::1] bx, double[:, ::1] nx,
                    double[:, ::1] scale, double[::1] omega, double[:, ::1] shc, double[::1] dc,
                    double[:, ::1] nw, int[:, ::1] bbox, cnp.int64_t[::1] texi,
                    float[:, :, :, ::1] low, float[:, :, :, ::1] high,
                    double fx, double fy, double cx, double cy, int W, int H,
                    double cutoff, double tfloor):
    cdef Data D
    cdef int M = mu.shape[0]
    D.mu = &mu[0, 0] if M else NULL
    D.tx = &tx[0, 0] if M else NULL
    D.bx = &bx[0, 0] if M else NULL
    D.nx = &nx[0, 0] if M else NULL
    D.scale = &scale[0, 0] if M else NULL
    D.omega = &omega[0] if M else NULL
    D.shc = &shc[0, 0] if M else NULL
    D.dc = &dc[0] if M else NULL
    D.nw = &nw[0, 0] if M else NULL
    D.bbox = &bbox[0, 0] if M else NULL
    D.texi = &texi[0] if M else NULL
    D.low = &low[0, 0, 0, 0] if low.shape[0] else NULL
    D.high = &high[0, 0, 0, 0] if high.shape[0] else NULL
    D.SL = low.shape[1]
    D.SH = high.shape[1]
    D.fx = fx
    D.fy = fy
    D.cx = cx
    D.cy = cy
    D.W = W
    D.H = H
    D.cutoff = cutoff
    D.tfloor = tfloor
    return D


def bin_tiles(int[:, ::1] bbox, int W, int H, int tile):
    """CSR lists of sorted-surfel indices per tile (row-major tiles), preserving sort order."""
    cdef int M = bbox.shape[0]
    cdef int tw = (W + tile - 1) // tile
    cdef int th = (H + tile - 1) // tile
    cdef cnp.ndarray[cnp.int64_t, ndim=1] offsets = np.zeros(tw * th + 1, dtype=np.int64)
    cdef cnp.int64_t[::1] off = offsets
    cdef int s, i, j, x0, x1, y0, y1
    cdef cnp.int64_t total
    for s in range(M):
        if bbox[s, 0] > bbox[s, 1] or bbox[s, 2] > bbox[s, 3]:
            continue
        x0 = bbox[s, 0] // tile
        x1 = bbox[s, 1] // tile
        y0 = bbox[s, 2] // tile
        y1 = bbox[s, 3] // tile
        for j in range(y0, y1 + 1):
            for i in range(x0, x1 + 1):
                off[j * tw + i + 1] += 1
    for i in range(tw * th):
        off[i + 1] += off[i]
    total = off[tw * th]
    cdef cnp.ndarray[cnp.int32_t, ndim=1] lst_arr = np.empty(total, dtype=np.int32)
    cdef int[::1] lst = lst_arr
    cdef cnp.ndarray[cnp.int64_t, ndim=1] fill_arr = offsets[:-1].copy()
    cdef cnp.int64_t[::1] fill = fill_arr
    for s in range(M):
        if bbox[s, 0] > bbox[s, 1] or bbox[s, 2] > bbox[s, 3]:
            continue
        x0 = bbox[s, 0] // tile
        x1 = bbox[s, 1] // tile
        y0 = bbox[s, 2] // tile
        y1 = bbox[s, 3] // tile
        for j in range(y0, y1 + 1):
            for i in range(x0, x1 + 1):
                lst[fill[j * tw + i]] = s
                fill[j * tw + i] += 1
    return offsets, lst_arr, tw, th


cdef void render_tile(const Data* D, int x0, int y0, int tile, const int* lst, int nlst,
                      double* color, double* alpha, double* depth, double* normal,
                      cnp.int64_t* counts, const cnp.int64_t* rec_off, int* rec_s, double* rec_a,
                      double* rec_d, double* rec_w) noexcept nogil:
    """Composite one tile surfel-major: each pixel still sees its surfels in sorted order.

    With ``color`` set, writes frame buffers; with ``counts`` set, stores per-pixel hit
    counts at ``counts[pix + 1]``; with ``rec_s`` set, writes hit records at ``rec_off[pix]``.
    """
    cdef int x1 = min(x0 + tile, D.W) - 1
    cdef int y1 = min(y0 + tile, D.H) - 1
    cdef int tw = x1 - x0 + 1
    cdef int npx = tw * (y1 - y0 + 1)
    cdef double* st = <double*>malloc(npx * 12 * sizeof(double))
    cdef int* nh = <int*>malloc(npx * sizeof(int))
    cdef double* T
    cdef double* acc
    cdef double* rdx
    cdef double* rdn
    cdef Surf f
    cdef int alive = npx
    cdef int k, s, px, py, li, bx0, bx1, by0, by1, c
    cdef cnp.int64_t pix
    cdef double dx, dy, dnorm, w
    cdef const int* bb
    cdef Hit h
    if st == NULL or nh == NULL:
        free(st)
        free(nh)
        return
    T = st
    acc = st + npx
    rdx = st + 10 * npx
    rdn = st + 11 * npx
    for li in range(npx):
        T[li] = 1.0
        nh[li] = 0
    for py in range(y0, y1 + 1):
        dy = (py + 0.5 - D.cy) / D.fy
        for px in range(x0, x1 + 1):
            li = (py - y0) * tw + (px - x0)
            dx = (px + 0.5 - D.cx) / D.fx
            rdx[li] = dx
            rdn[li] = sqrt(dx * dx + dy * dy + 1.0)
    for li in range(npx * 9):
        acc[li] = 0.0
    for k in range(nlst):
        if alive == 0:
            break
        s = lst[k]
        bb = D.bbox + 4 * s
        bx0 = max(bb[0], x0)
        bx1 = min(bb[1], x1)
        by0 = max(bb[2], y0)
        by1 = min(bb[3], y1)
        if bx0 > bx1 or by0 > by1:
            continue
        load_surf(D, s, &f)
        for py in range(by0, by1 + 1):
            dy = (py + 0.5 - D.cy) / D.fy
            for px in range(bx0, bx1 + 1):
                li = (py - y0) * tw + (px - x0)
                if T[li] < D.tfloor:
                    continue
                if not eval_hit(D, &f, rdx[li], dy, rdn[li], &h):
                    continue
                w = T[li] * h.a
                acc[9 * li] += w * h.rgb[0]
                acc[9 * li + 1] += w * h.rgb[1]
                acc[9 * li + 2] += w * h.rgb[2]
                acc[9 * li + 3] += w
                acc[9 * li + 4] += w * h.depth
                acc[9 * li + 5] += w * D.nw[3 * s]
                acc[9 * li + 6] += w * D.nw[3 * s + 1]
                acc[9 * li + 7] += w * D.nw[3 * s + 2]
                if rec_s != NULL:
                    pix = rec_off[py * D.W + px] + nh[li]
                    rec_s[pix] = s
                    rec_a[pix] = h.a
                    rec_d[pix] = h.depth
                    rec_w[pix] = w
                nh[li] += 1
                T[li] = T[li] * (1.0 - h.a)
                if T[li] < D.tfloor:
                    alive -= 1
    for py in range(y0, y1 + 1):
        for px in range(x0, x1 + 1):
            li = (py - y0) * tw + (px - x0)
            pix = py * D.W + px
            if color != NULL:
                for c in range(3):
                    color[3 * pix + c] = acc[9 * li + c]
                    normal[3 * pix + c] = acc[9 * li + 5 + c]
                alpha[pix] = acc[9 * li + 3]
                depth[pix] = acc[9 * li + 4]
            if counts != NULL:
                counts[pix + 1] = nh[li]
    free(st)
    free(nh)


def forward(double[:, ::1] mu, double[:, ::1] tx, double[:, ::1] bx, double[:, ::1] nx,
            double[:, ::1] scale, double[::1] omega, double[:, ::1] shc, double[::1] dc,
            double[:, ::1] nw, int[:, ::1] bbox, cnp.int64_t[::1] texi,
            float[:, :, :, ::1] low, float[:, :, :, ::1] high,
            double fx, double fy, double cx, double cy, int W, int H,
            double cutoff, double tfloor, int tile, int threads, bint record):
    """Rasterize; returns (color, alpha, depth, normal, records-or-None).

    Tiles are independent, so they are distributed over ``threads`` OpenMP threads;
    each writes a disjoint block of the output.
    """
    cdef Data D = make_data(mu, tx, bx, nx, scale, omega, shc, dc, nw, bbox, texi, low, high,
                            fx, fy, cx, cy, W, H, cutoff, tfloor)
    offsets_arr, lst_arr, tw, th = bin_tiles(bbox, W, H, tile)
    cdef cnp.int64_t[::1] off = offsets_arr
    cdef int[::1] lst = lst_arr
    cdef const int* lptr = &lst[0] if lst.shape[0] else NULL
    cdef int ntw = tw
    cdef int ntiles = tw * th
    color_arr = np.zeros((H, W, 3))
    alpha_arr = np.zeros((H, W))
    depth_arr = np.zeros((H, W))
    normal_arr = np.zeros((H, W, 3))
    cdef double[:, :, ::1] color = color_arr
    cdef double[:, ::1] alpha = alpha_arr
    cdef double[:, ::1] depth = depth_arr
    cdef double[:, :, ::1] normal = normal_arr
    cdef int ti, nl
    cdef cnp.int64_t start
    cdef int nthreads = threads if threads > 0 else 1
    cdef cnp.int64_t[::1] counts
    cdef cnp.int64_t[::1] rec_off
    cdef int[::1] rec_s
    cdef double[::1] rec_a, rec_d, rec_w

    if lptr == NULL:
        records = None
        if record:
            records = (np.zeros(W * H + 1, dtype=np.int64), np.zeros(0, dtype=np.int32),
                       np.zeros(0), np.zeros(0), np.zeros(0))
        return color_arr, alpha_arr, depth_arr, normal_arr, records

    for ti in prange(ntiles, nogil=True, num_threads=nthreads, schedule="dynamic"):
        start = off[ti]
        nl = <int>(off[ti + 1] - start)
        if nl > 0:
            render_tile(&D, (ti % ntw) * tile, (ti // ntw) * tile, tile, lptr + start, nl,
                        &color[0, 0, 0], &alpha[0, 0], &depth[0, 0], &normal[0, 0, 0],
                        NULL, NULL, NULL, NULL, NULL, NULL)
    if not record:
        return color_arr, alpha_arr, depth_arr, normal_arr, None

    counts_arr = np.zeros(W * H + 1, dtype=np.int64)
    counts = counts_arr
    for ti in prange(ntiles, nogil=True, num_threads=nthreads, schedule="dynamic"):
        start = off[ti]
        nl = <int>(off[ti + 1] - start)
        if nl > 0:
            render_tile(&D, (ti % ntw) * tile, (ti // ntw) * tile, tile, lptr + start, nl,
                        NULL, NULL, NULL, NULL, &counts[0], NULL, NULL, NULL, NULL, NULL)
    offs_arr = np.cumsum(counts_arr)
    total = int(offs_arr[-1])
    s_arr = np.empty(total, dtype=np.int32)
    a_arr = np.empty(total)
    d_arr = np.empty(total)
    w_arr = np.empty(total)
    if total:
        rec_off = offs_arr
        rec_s = s_arr
        rec_a = a_arr
        rec_d = d_arr
        rec_w = w_arr
        for ti in prange(ntiles, nogil=True, num_threads=nthreads, schedule="dynamic"):
            start = off[ti]
            nl = <int>(off[ti + 1] - start)
            if nl > 0:
                render_tile(&D, (ti % ntw) * tile, (ti // ntw) * tile, tile, lptr + start, nl,
                            NULL, NULL, NULL, NULL, NULL, &rec_off[0], &rec_s[0], &rec_a[0],
                            &rec_d[0], &rec_w[0])
    return color_arr, alpha_arr, depth_arr, normal_arr, (offs_arr, s_arr, a_arr, d_arr, w_arr)


def backward(double[:, ::1] mu, double[:, ::1] tx, double[:, ::1] bx, double[:, ::1] nx,
             double[:, ::1] scale, double[::1] omega, double[:, ::1] shc, double[::1] dc,
             double[:, ::1] nw, int[:, ::1] bbox, cnp.int64_t[::1] texi,
             float[:, :, :, ::1] low, float[:, :, :, ::1] high,
             double fx, double fy, double cx, double cy, int W, int H,
             double cutoff, double tfloor, int tile,
             double[:, :, ::1] dl_dcolor,
             double[:, :, :, ::1] g_low, double[:, :, :, ::1] g_high,
             double[:, ::1] g_shc, double[::1] g_dc):
    """Accumulate dL/d(texels, SH colour, opacity offset) given dL/d(pixel colour).

    Serial over tiles so accumulation order (and therefore the result) is fixed.
    """
    cdef Data D = make_data(mu, tx, bx, nx, scale, omega, shc, dc, nw, bbox, texi, low, high,
                            fx, fy, cx, cy, W, H, cutoff, tfloor)
    offsets_arr, lst_arr, tw, th = bin_tiles(bbox, W, H, tile)
    cdef cnp.int64_t[::1] off = offsets_arr
    cdef int[::1] lst = lst_arr
    if lst.shape[0] == 0:
        return
    cdef const int* lptr = &lst[0]
    cdef int ntw = tw
    cdef int ntiles = tw * th
    cdef double* gl = &g_low[0, 0, 0, 0]
    cdef double* gh = &g_high[0, 0, 0, 0]
    cdef int SL = low.shape[1]
    cdef int SHs = high.shape[1]
    cdef int cap = 64
    cdef Hit* hits = <Hit*>malloc(cap * sizeof(Hit))
    cdef Hit* tmp
    cdef Hit h
    cdef Surf f
    cdef int ti, px, py, x0, y0, nl, k, s, n, i, c, j
    cdef cnp.int64_t start, ti_, base_l, base_h
    cdef double ddx, ddy, dnorm, T, S0, S1, S2, g0, g1, g2, wi, dlda, gr, ga, om, sc
    cdef const int* bb
    cdef double S[3]
    cdef double g[3]
    if hits == NULL:
        raise MemoryError()
    try:
        with nogil:
            for ti in range(ntiles):
                start = off[ti]
                nl = <int>(off[ti + 1] - start)
                if nl == 0:
                    continue
                y0 = (ti // ntw) * tile
                x0 = (ti % ntw) * tile
                for py in range(y0, min(y0 + tile, H)):
                    for px in range(x0, min(x0 + tile, W)):
                        g[0] = dl_dcolor[py, px, 0]
                        g[1] = dl_dcolor[py, px, 1]
                        g[2] = dl_dcolor[py, px, 2]
                        if g[0] == 0.0 and g[1] == 0.0 and g[2] == 0.0:
                            continue
                        ddx = (px + 0.5 - D.cx) / D.fx
                        ddy = (py + 0.5 - D.cy) / D.fy
                        dnorm = sqrt(ddx * ddx + ddy * ddy + 1.0)
                        T = 1.0
                        n = 0
                        for k in range(nl):
                            s = lptr[start + k]
                            bb = D.bbox + 4 * s
                            if px < bb[0] or px > bb[1] or py < bb[2] or py > bb[3]:
                                continue
                            load_surf(&D, s, &f)
                            if not eval_hit(&D, &f, ddx, ddy, dnorm, &h):
                                continue
                            h.T = T
                            if n == cap:
                                cap = cap * 2
                                tmp = <Hit*>realloc(hits, cap * sizeof(Hit))
                                if tmp == NULL:
                                    with gil:
                                        raise MemoryError()
                                hits = tmp
                            hits[n] = h
                            n = n + 1
                            T = T * (1.0 - h.a)
                            if T < D.tfloor:
                                break
                        S[0] = 0.0
                        S[1] = 0.0
                        S[2] = 0.0
                        for i in range(n - 1, -1, -1):
                            s = hits[i].s
                            wi = hits[i].T * hits[i].a
                            om = D.omega[s]
                            ti_ = D.texi[s]
                            base_l = ti_ * SL * SL * 4
                            base_h = ti_ * SHs * SHs * 4
                            dlda = 0.0
                            for c in range(3):
                                dlda = dlda + g[c] * hits[i].T * (hits[i].rgb[c] - S[c])
                                if hits[i].rgb_free[c]:
                                    gr = g[c] * wi
                                    g_shc[s, c] += gr
                                    sc = gr * om * (1.0 - hits[i].hv[c] * hits[i].hv[c])
                                    for j in range(4):
                                        gl[base_l + hits[i].idx_l[j] * 4 + c] += gr * hits[i].w_l[j]
                                        gh[base_h + hits[i].idx_h[j] * 4 + c] += sc * hits[i].w_h[j]
                            if hits[i].a_free:
                                ga = dlda
                                g_dc[s] += ga
                                sc = ga * om * (1.0 - hits[i].hv[3] * hits[i].hv[3])
                                for j in range(4):
                                    gl[base_l + hits[i].idx_l[j] * 4 + 3] += ga * hits[i].w_l[j]
                                    gh[base_h + hits[i].idx_h[j] * 4 + 3] += sc * hits[i].w_h[j]
                            for c in range(3):
                                S[c] = hits[i].a * hits[i].rgb[c] + (1.0 - hits[i].a) * S[c]
    finally:
        free(hits)
