"""Independent reference implementations used as test oracles.

Everything here is written as plain scalar loops over numpy arrays (or
direct closed forms), deliberately sharing no code with the package under
test. Finite differences are central, step 1e-6 unless stated.
"""

import numpy as np

FD_EPS = 1e-6


def fd_gradient(func, arrays, wrt, eps=FD_EPS):
    """Central finite differences of func(*arrays) w.r.t. arrays[wrt].

    func consumes plain numpy arrays and returns a python float.
    """
    arrays = [np.array(a, dtype=np.float64) for a in arrays]
    base = arrays[wrt]
    grad = np.zeros_like(base)
    it = np.nditer(base, flags=["multi_index"])
    while not it.finished:
        idx = it.multi_index
        orig = base[idx]
        base[idx] = orig + eps
        up = func(*arrays)
        base[idx] = orig - eps
        down = func(*arrays)
        base[idx] = orig
        grad[idx] = (up - down) / (2.0 * eps)
        it.iternext()
    return grad


def rel_err(a, b):
    """Infinity-norm difference scaled by the larger magnitude, floored at 1."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    scale = max(1.0, float(np.max(np.abs(a))), float(np.max(np.abs(b))))
    return float(np.max(np.abs(a - b))) / scale


# -- convolution loop oracles ------------------------------------------------------


def conv2d_loops(x, kernel, stride=1, padding=0):
    """Direct 6-nested-loop cross-correlation, accumulating per output pixel
    in (input channel, kernel row, kernel column) order."""
    x = np.asarray(x, dtype=np.float64)
    kernel = np.asarray(kernel, dtype=np.float64)
    c_out, c_in, kh, kw = kernel.shape
    sh = sw = int(stride)
    ph = pw = int(padding)
    xp = np.pad(x, ((0, 0), (ph, ph), (pw, pw)))
    ho = (xp.shape[1] - kh) // sh + 1
    wo = (xp.shape[2] - kw) // sw + 1
    out = np.zeros((c_out, ho, wo))
    for co in range(c_out):
        for oy in range(ho):
            for ox in range(wo):
                acc = 0.0
                for ci in range(c_in):
                    for i in range(kh):
                        for j in range(kw):
                            acc += kernel[co, ci, i, j] * xp[ci, oy * sh + i, ox * sw + j]
                out[co, oy, ox] = acc
    return out


def depthwise_conv2d_loops(x, kernel, stride=1, padding=0):
    x = np.asarray(x, dtype=np.float64)
    kernel = np.asarray(kernel, dtype=np.float64)
    c, kh, kw = kernel.shape
    sh = sw = int(stride)
    ph = pw = int(padding)
    xp = np.pad(x, ((0, 0), (ph, ph), (pw, pw)))
    ho = (xp.shape[1] - kh) // sh + 1
    wo = (xp.shape[2] - kw) // sw + 1
    out = np.zeros((c, ho, wo))
    for ch in range(c):
        for oy in range(ho):
            for ox in range(wo):
                acc = 0.0
                for i in range(kh):
                    for j in range(kw):
                        acc += kernel[ch, i, j] * xp[ch, oy * sh + i, ox * sw + j]
                out[ch, oy, ox] = acc
    return out


# -- SSIM and loss loop oracles ------------------------------------------------------


def _box3_loops(img):
    """3x3 zero-padded mean pooling of an (H, W) array, per pixel."""
    h, w = img.shape
    out = np.zeros((h, w))
    for y in range(h):
        for x in range(w):
            acc = 0.0
            for dy in (-1, 0, 1):
                for dx in (-1, 0, 1):
                    yy, xx = y + dy, x + dx
                    if 0 <= yy < h and 0 <= xx < w:
                        acc += img[yy, xx]
            out[y, x] = acc / 9.0
    return out


def ssim_map_loops(x, y, c1=0.01**2, c2=0.03**2):
    """Per-pixel SSIM map, channels averaged, matching 3x3 zero-pad pooling."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.ndim == 2:
        x = x[None]
        y = y[None]
    maps = []
    for c in range(x.shape[0]):
        mx = _box3_loops(x[c])
        my = _box3_loops(y[c])
        xx = _box3_loops(x[c] * x[c])
        yy = _box3_loops(y[c] * y[c])
        xy = _box3_loops(x[c] * y[c])
        vx = xx - mx * mx
        vy = yy - my * my
        cov = xy - mx * my
        maps.append(((2 * mx * my + c1) * (2 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2)))
    return np.mean(maps, axis=0)


def reflectance_loss_loops(r_t, r_w, validity=None):
    r_t = np.asarray(r_t, dtype=np.float64)
    r_w = np.asarray(r_w, dtype=np.float64)
    c, h, w = r_t.shape
    if validity is None:
        validity = np.ones((h, w))
    total = 0.0
    count = 0.0
    for y in range(h):
        for x in range(w):
            if validity[y, x] > 0:
                acc = 0.0
                for ch in range(c):
                    acc += abs(r_t[ch, y, x] - r_w[ch, y, x])
                total += acc / c
                count += 1
    return total / count


def photometric_loss_loops(a, b, alpha, validity=None):
    """alpha * (1 - SSIM)/2 + (1 - alpha) * L1, means over valid pixels."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    smap = ssim_map_loops(a, b)
    c, h, w = a.shape
    if validity is None:
        validity = np.ones((h, w))
    s_total = l_total = count = 0.0
    for y in range(h):
        for x in range(w):
            if validity[y, x] > 0:
                s_total += smap[y, x]
                acc = 0.0
                for ch in range(c):
                    acc += abs(a[ch, y, x] - b[ch, y, x])
                l_total += acc / c
                count += 1
    return alpha * (1.0 - s_total / count) / 2.0 + (1.0 - alpha) * (l_total / count)


def reconstruction_loss_loops(t_hat, t, s_hat, s, alpha):
    return photometric_loss_loops(t_hat, t, alpha) + photometric_loss_loops(s_hat, s, alpha)


def smoothness_loss_loops(depth, image, labels):
    depth = np.asarray(depth, dtype=np.float64)
    image = np.asarray(image, dtype=np.float64)
    labels = np.asarray(labels)
    c, h, w = image.shape
    total = 0.0
    count = 0
    for y in range(h):
        for x in range(w - 1):
            if labels[y, x] == labels[y, x + 1]:
                gi = 0.0
                for ch in range(c):
                    gi += abs(image[ch, y, x + 1] - image[ch, y, x])
                total += abs(depth[y, x + 1] - depth[y, x]) * np.exp(-gi / c)
                count += 1
    for y in range(h - 1):
        for x in range(w):
            if labels[y, x] == labels[y + 1, x]:
                gi = 0.0
                for ch in range(c):
                    gi += abs(image[ch, y + 1, x] - image[ch, y, x])
                total += abs(depth[y + 1, x] - depth[y, x]) * np.exp(-gi / c)
                count += 1
    return total / count if count else 0.0


# -- metric loop oracles ---------------------------------------------------------------


def lower_median_loops(values):
    ordered = sorted(float(v) for v in np.asarray(values).ravel())
    return ordered[(len(ordered) - 1) // 2]


def depth_metrics_loops(pred, gt, mask=None):
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if mask is None:
        mask = np.isfinite(gt) & (gt > 0)
    d = [float(v) for v in pred[mask]]
    g = [float(v) for v in gt[mask]]
    n = len(d)
    abs_rel = sum(abs(a - b) / b for a, b in zip(d, g)) / n
    sq_rel = sum((a - b) ** 2 / b for a, b in zip(d, g)) / n
    rmse = (sum((a - b) ** 2 for a, b in zip(d, g)) / n) ** 0.5
    rmse_log = (sum((np.log(a) - np.log(b)) ** 2 for a, b in zip(d, g)) / n) ** 0.5
    deltas = []
    for t in (1.25, 1.25**2, 1.25**3):
        deltas.append(sum(1.0 for a, b in zip(d, g) if max(a / b, b / a) < t) / n)
    return {
        "abs_rel": abs_rel,
        "sq_rel": sq_rel,
        "rmse": rmse,
        "rmse_log": rmse_log,
        "delta1": deltas[0],
        "delta2": deltas[1],
        "delta3": deltas[2],
    }


def median_scale_loops(pred, gt, mask=None, cap=150.0):
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if mask is None:
        mask = np.isfinite(gt) & (gt > 0)
    f = lower_median_loops(gt[mask]) / lower_median_loops(pred[mask])
    return np.minimum(pred * f, cap), f


def ate_grid_search(pred_positions, gt_positions):
    """Per 5-frame window: brute-force the alignment scale over a coarse grid,
    refine around the winner down to step 1e-8, report the best residual
    RMSE; mean over windows."""
    p = np.asarray(pred_positions, dtype=np.float64)
    g = np.asarray(gt_positions, dtype=np.float64)

    def window_score(pw, gw, s):
        res = gw - s * pw
        return float(np.sqrt(np.mean(np.sum(res**2, axis=1))))

    segments = []
    for start in range(len(p) - 4):
        pw = p[start : start + 5] - p[start]
        gw = g[start : start + 5] - g[start]
        lo, hi = -10.0, 10.0
        best_s = 0.0
        step = (hi - lo) / 4000.0
        while step > 1e-8:
            grid = np.arange(lo, hi + step / 2, step)
            scores = [window_score(pw, gw, s) for s in grid]
            best_s = float(grid[int(np.argmin(scores))])
            lo, hi = best_s - 2 * step, best_s + 2 * step
            step /= 100.0
        segments.append(window_score(pw, gw, best_s))
    return float(np.mean(segments)), segments
