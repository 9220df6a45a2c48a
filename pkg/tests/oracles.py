"""Independent reference implementations: explicit loops, no shared code with the package."""
import math

import numpy as np


def shuffle_oracle(x, r):
    n, c, h, w = x.shape
    out = np.empty((n, c // (r * r), h * r, w * r), dtype=x.dtype)
    for b in range(n):
        for ch in range(c // (r * r)):
            for y in range(h):
                for xx in range(w):
                    for i in range(r):
                        for j in range(r):
                            out[b, ch, y * r + i, xx * r + j] = x[b, ch * r * r + i * r + j, y, xx]
    return out


def bilinear_oracle(x, factor):
    n, c, h, w = x.shape
    out = np.zeros((n, c, h * factor, w * factor))
    for b in range(n):
        for ch in range(c):
            for ty in range(h * factor):
                sy = min(max((ty + 0.5) / factor - 0.5, 0.0), h - 1)
                y0 = int(np.floor(sy))
                y1 = min(y0 + 1, h - 1)
                fy = sy - y0
                for tx in range(w * factor):
                    sx = min(max((tx + 0.5) / factor - 0.5, 0.0), w - 1)
                    x0 = int(np.floor(sx))
                    x1 = min(x0 + 1, w - 1)
                    fx = sx - x0
                    top = x[b, ch, y0, x0] * (1 - fx) + x[b, ch, y0, x1] * fx
                    bot = x[b, ch, y1, x0] * (1 - fx) + x[b, ch, y1, x1] * fx
                    out[b, ch, ty, tx] = top * (1 - fy) + bot * fy
    return out


def maxpool_oracle(x, k, stride, pad):
    n, c, h, w = x.shape
    oh = (h + 2 * pad - k) // stride + 1
    ow = (w + 2 * pad - k) // stride + 1
    out = np.full((n, c, oh, ow), -np.inf)
    for b in range(n):
        for ch in range(c):
            for i in range(oh):
                for j in range(ow):
                    for di in range(k):
                        for dj in range(k):
                            y, xx = i * stride - pad + di, j * stride - pad + dj
                            if 0 <= y < h and 0 <= xx < w:
                                out[b, ch, i, j] = max(out[b, ch, i, j], x[b, ch, y, xx])
    return out


def conv_oracle(x, wt, b, stride, pad):
    n, ci, h, w = x.shape
    co, _, k, _ = wt.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    oh = (h + 2 * pad - k) // stride + 1
    ow = (w + 2 * pad - k) // stride + 1
    out = np.zeros((n, co, oh, ow))
    for i in range(oh):
        for j in range(ow):
            patch = xp[:, :, i * stride : i * stride + k, j * stride : j * stride + k]
            out[:, :, i, j] = np.einsum("ncij,ocij->no", patch, wt)
    return out + (0 if b is None else b.reshape(1, -1, 1, 1))


def _px(a, y, x):
    h, w = len(a), len(a[0])
    return a[min(max(y, 0), h - 1)][min(max(x, 0), w - 1)]


def sobel_scalar(a):
    h, w = len(a), len(a[0])
    gx = [[0.0] * w for _ in range(h)]
    gy = [[0.0] * w for _ in range(h)]
    for y in range(h):
        for x in range(w):
            gx[y][x] = (
                (_px(a, y - 1, x + 1) + 2 * _px(a, y, x + 1) + _px(a, y + 1, x + 1))
                - (_px(a, y - 1, x - 1) + 2 * _px(a, y, x - 1) + _px(a, y + 1, x - 1))
            ) / 8.0
            gy[y][x] = (
                (_px(a, y + 1, x - 1) + 2 * _px(a, y + 1, x) + _px(a, y + 1, x + 1))
                - (_px(a, y - 1, x - 1) + 2 * _px(a, y - 1, x) + _px(a, y - 1, x + 1))
            ) / 8.0
    return gx, gy


def losses_scalar(d, g, alpha):
    """Per-image (depth, grad, normal) for 2-D lists, averaged over pixels."""
    h, w = len(d), len(d[0])
    n = h * w
    e = [[abs(d[y][x] - g[y][x]) for x in range(w)] for y in range(h)]
    ex, ey = sobel_scalar(e)
    dx, dy = sobel_scalar(d)
    gx, gy = sobel_scalar(g)
    depth = grad = normal = 0.0
    for y in range(h):
        for x in range(w):
            depth += math.log(e[y][x] + alpha)
            grad += math.log(abs(ex[y][x]) + alpha) + math.log(abs(ey[y][x]) + alpha)
            dot = dx[y][x] * gx[y][x] + dy[y][x] * gy[y][x] + 1.0
            nd = math.sqrt(dx[y][x] ** 2 + dy[y][x] ** 2 + 1.0)
            ng = math.sqrt(gx[y][x] ** 2 + gy[y][x] ** 2 + 1.0)
            normal += 1.0 - dot / (nd * ng)
    return depth / n, grad / n, normal / n


def batch_scalar(d, g, alpha=0.5):
    parts = [losses_scalar(d[i, 0].tolist(), g[i, 0].tolist(), alpha) for i in range(d.shape[0])]
    return tuple(sum(p[k] for p in parts) / len(parts) for k in range(3))
