"""Bidirectional point/pixel feature propagation with analytic backward passes.

Grid features are (C, H, W) arrays; point features are (N, C).  Projected
coordinates are continuous (u, v) pixels: the scatter direction bins by
floor(u), floor(v); the gather direction samples grid values located at
integer (u, v) positions with bilinear weights and zero padding outside the
image.  All reductions run in a canonical order so results are bit-identical
under permutation of the input points.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError

__all__ = [
    "DenseLayer",
    "point_to_pixel",
    "point_to_pixel_backward",
    "pixel_to_point",
    "pixel_to_point_backward",
    "fuse_p2i",
    "fuse_p2i_backward",
    "fuse_i2p",
    "fuse_i2p_backward",
]


@dataclass
class DenseLayer:
    """Shared per-point linear map / 1x1 convolution: y = W x + b."""

    weights: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)

    @property
    def in_channels(self) -> int:
        return self.weights.shape[1]

    @property
    def out_channels(self) -> int:
        return self.weights.shape[0]

    @staticmethod
    def init(in_channels: int, out_channels: int, rng: np.random.Generator):
        scale = np.sqrt(2.0 / in_channels)
        return DenseLayer(
            weights=rng.normal(0.0, scale, size=(out_channels, in_channels)),
            bias=np.zeros(out_channels),
        )


def _linear(layer: DenseLayer, x: np.ndarray) -> np.ndarray:
    """Apply the layer to (M, C_in) rows."""
    if x.shape[1] != layer.in_channels:
        raise ShapeError(
            f"layer expects {layer.in_channels} channels, got {x.shape[1]}"
        )
    return x @ layer.weights.T + layer.bias


def _canonical_order(cells: np.ndarray, coords: np.ndarray, data: np.ndarray):
    """Deterministic total order over (cell, coords, payload) rows.

    The order itself is arbitrary (raw byte order), but it is a pure function
    of each row's content, which makes every downstream reduction bit-exact
    under permutation of the input points.
    """
    rows = np.ascontiguousarray(
        np.column_stack([cells.astype(float), coords, data])
    )
    view = rows.view(np.dtype((np.void, rows.dtype.itemsize * rows.shape[1])))
    return np.argsort(view.ravel(), kind="stable")


def _bin_points(coords: np.ndarray, height: int, width: int):
    uv = np.asarray(coords, dtype=float).reshape(-1, 2)
    cols = np.floor(uv[:, 0]).astype(int)
    rows = np.floor(uv[:, 1]).astype(int)
    valid = (cols >= 0) & (cols < width) & (rows >= 0) & (rows < height)
    return rows, cols, valid


def point_to_pixel(
    features: np.ndarray, coords: np.ndarray, height: int, width: int
) -> np.ndarray:
    """Scatter-average point features onto a pixel grid.

    Pixel (r, c) receives the mean feature of all points with
    floor(v) == r, floor(u) == c; empty pixels are exactly zero.  Points
    projecting outside the grid are ignored.
    """
    g = np.asarray(features, dtype=float)
    n, c = g.shape
    uv = np.asarray(coords, dtype=float).reshape(-1, 2)
    if len(uv) != n:
        raise ShapeError("feature count and coordinate count differ")
    rows, cols, valid = _bin_points(uv, height, width)
    out = np.zeros((c, height, width))
    if not valid.any():
        return out
    cells = rows[valid] * width + cols[valid]
    gv, uvv = g[valid], uv[valid]
    order = _canonical_order(cells, uvv, gv)
    cells, gv = cells[order], gv[order]
    flat_idx = (cells[:, None] * c + np.arange(c)).ravel()
    sums = np.bincount(
        flat_idx, weights=gv.ravel(), minlength=height * width * c
    ).reshape(height * width, c)
    counts = np.bincount(cells, minlength=height * width).astype(float)
    nonzero = counts > 0
    sums[nonzero] /= counts[nonzero, None]
    return sums.T.reshape(c, height, width)


def point_to_pixel_backward(
    grad_output: np.ndarray, coords: np.ndarray, num_points: int
) -> np.ndarray:
    """Backward of :func:`point_to_pixel` w.r.t. the point features.

    A point landing in pixel (r, c) shared by n points receives
    grad_output[:, r, c] / n; out-of-grid points receive zero.
    """
    go = np.asarray(grad_output, dtype=float)
    c, height, width = go.shape
    uv = np.asarray(coords, dtype=float).reshape(-1, 2)
    if len(uv) != num_points:
        raise ShapeError("coordinate count and point count differ")
    rows, cols, valid = _bin_points(uv, height, width)
    grad = np.zeros((num_points, c))
    if not valid.any():
        return grad
    cells = rows[valid] * width + cols[valid]
    counts = np.bincount(cells, minlength=height * width).astype(float)
    grad[valid] = go.reshape(c, -1).T[cells] / counts[cells, None]
    return grad


def _bilinear_weights(coords: np.ndarray, height: int, width: int):
    """Neighbor indices and weights for zero-padded bilinear sampling."""
    uv = np.asarray(coords, dtype=float).reshape(-1, 2)
    u, v = uv[:, 0], uv[:, 1]
    x0 = np.floor(u).astype(int)
    y0 = np.floor(v).astype(int)
    fx, fy = u - x0, v - y0
    neighbors = []
    for dy, dx, wgt in (
        (0, 0, (1 - fx) * (1 - fy)),
        (0, 1, fx * (1 - fy)),
        (1, 0, (1 - fx) * fy),
        (1, 1, fx * fy),
    ):
        xs, ys = x0 + dx, y0 + dy
        inside = (xs >= 0) & (xs < width) & (ys >= 0) & (ys < height)
        neighbors.append((ys, xs, np.where(inside, wgt, 0.0), inside))
    return neighbors


def pixel_to_point(grid: np.ndarray, coords: np.ndarray) -> np.ndarray:
    """Bilinear gather of grid features at continuous point projections."""
    f = np.asarray(grid, dtype=float)
    c, height, width = f.shape
    uv = np.asarray(coords, dtype=float).reshape(-1, 2)
    out = np.zeros((len(uv), c))
    flat = f.reshape(c, -1)
    for ys, xs, wgt, inside in _bilinear_weights(uv, height, width):
        idx = np.where(inside, ys * width + xs, 0)
        out += wgt[:, None] * np.where(inside[:, None], flat.T[idx], 0.0)
    return out


def pixel_to_point_backward(
    grad_points: np.ndarray, coords: np.ndarray, height: int, width: int
) -> np.ndarray:
    """Backward of :func:`pixel_to_point` w.r.t. the grid features."""
    gp = np.asarray(grad_points, dtype=float)
    n, c = gp.shape
    uv = np.asarray(coords, dtype=float).reshape(-1, 2)
    if len(uv) != n:
        raise ShapeError("coordinate count and gradient count differ")
    # canonical order keeps the scatter-add bit-deterministic under permutation
    order = _canonical_order(
        np.floor(uv[:, 1]).astype(int) * width + np.floor(uv[:, 0]).astype(int),
        uv,
        gp,
    )
    uv, gp = uv[order], gp[order]
    grad = np.zeros(height * width * c)
    chan = np.arange(c)
    for ys, xs, wgt, inside in _bilinear_weights(uv, height, width):
        idx = ys[inside] * width + xs[inside]
        contrib = wgt[inside, None] * gp[inside]
        flat_idx = (idx[:, None] * c + chan).ravel()
        grad += np.bincount(
            flat_idx, weights=contrib.ravel(), minlength=height * width * c
        )
    return grad.reshape(height, width, c).transpose(2, 0, 1).copy()


class ProjectionPlan:
    """Precomputed sparse operators for a fixed set of projected coordinates.

    Caches the scatter-average matrix (pixels x points) and the bilinear
    gather matrix (points x pixels) so repeated propagation through the same
    scene costs two CSR products instead of re-binning every call.  Both
    backwards are exact transposes, so the adjoint identity holds by
    construction.
    """

    def __init__(self, coords: np.ndarray, height: int, width: int):
        from scipy import sparse

        uv = np.asarray(coords, dtype=float).reshape(-1, 2)
        n = len(uv)
        self.height, self.width, self.count = height, width, n

        rows, cols, valid = _bin_points(uv, height, width)
        cells = rows[valid] * width + cols[valid]
        counts = np.bincount(cells, minlength=height * width).astype(float)
        idx = np.nonzero(valid)[0]
        self.scatter_matrix = sparse.csr_matrix(
            (1.0 / counts[cells], (cells, idx)), shape=(height * width, n)
        )
        self.scatter_matrix_t = self.scatter_matrix.T.tocsr()

        g_rows, g_cols, g_vals = [], [], []
        for ys, xs, wgt, inside in _bilinear_weights(uv, height, width):
            sel = np.nonzero(inside)[0]
            g_rows.append(sel)
            g_cols.append(ys[sel] * width + xs[sel])
            g_vals.append(wgt[sel])
        self.gather_matrix = sparse.csr_matrix(
            (
                np.concatenate(g_vals),
                (np.concatenate(g_rows), np.concatenate(g_cols)),
            ),
            shape=(n, height * width),
        )
        self.gather_matrix_t = self.gather_matrix.T.tocsr()

    def scatter(self, features: np.ndarray) -> np.ndarray:
        out = self.scatter_matrix @ features
        return out.T.reshape(-1, self.height, self.width)

    def scatter_grad(self, grad_output: np.ndarray) -> np.ndarray:
        c = grad_output.shape[0]
        return self.scatter_matrix_t @ grad_output.reshape(c, -1).T

    def gather(self, grid: np.ndarray) -> np.ndarray:
        c = grid.shape[0]
        return self.gather_matrix @ grid.reshape(c, -1).T

    def gather_grad(self, grad_points: np.ndarray) -> np.ndarray:
        out = self.gather_matrix_t @ grad_points
        return out.T.reshape(-1, self.height, self.width)


def _relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def _fuse_forward(x_aux: np.ndarray, x_main: np.ndarray, layers):
    """Shared fusion core on row-major features: relu(L2(cat(relu(L1(aux)), main)))."""
    l1, l2 = layers
    pre1 = _linear(l1, x_aux)
    a1 = _relu(pre1)
    cat = np.concatenate([a1, x_main], axis=1)
    pre2 = _linear(l2, cat)
    out = _relu(pre2)
    cache = (x_aux, pre1, a1, cat, pre2, layers)
    return out, cache


def _fuse_backward(grad_out: np.ndarray, cache):
    x_aux, pre1, a1, cat, pre2, (l1, l2) = cache
    d_pre2 = grad_out * (pre2 > 0)
    g_l2 = DenseLayer(weights=d_pre2.T @ cat, bias=d_pre2.sum(axis=0))
    d_cat = d_pre2 @ l2.weights
    k = a1.shape[1]
    d_a1, d_main = d_cat[:, :k], d_cat[:, k:]
    d_pre1 = d_a1 * (pre1 > 0)
    g_l1 = DenseLayer(weights=d_pre1.T @ x_aux, bias=d_pre1.sum(axis=0))
    d_aux = d_pre1 @ l1.weights
    return d_aux, d_main, (g_l1, g_l2)


def _grid_to_rows(grid: np.ndarray) -> np.ndarray:
    c = grid.shape[0]
    return grid.reshape(c, -1).T


def _rows_to_grid(rows: np.ndarray, height: int, width: int) -> np.ndarray:
    return rows.T.reshape(-1, height, width)


def fuse_p2i(
    scattered: np.ndarray, image: np.ndarray, layers: tuple[DenseLayer, DenseLayer]
):
    """Refine a scattered point-feature map and merge it with image features.

    Both inputs are (C, H, W); the merge is pixel-wise:
    relu(L2(cat(relu(L1(scattered)), image))).  Returns (output, cache) for
    the matching backward.
    """
    if scattered.shape[1:] != image.shape[1:]:
        raise ShapeError("grids must share spatial dimensions")
    h, w = image.shape[1:]
    out, cache = _fuse_forward(_grid_to_rows(scattered), _grid_to_rows(image), layers)
    return _rows_to_grid(out, h, w), (cache, h, w)


def fuse_p2i_backward(grad_out: np.ndarray, cache):
    """Gradients of fuse_p2i w.r.t. (scattered, image, layer parameters)."""
    inner, h, w = cache
    d_aux, d_main, g_layers = _fuse_backward(_grid_to_rows(grad_out), inner)
    return _rows_to_grid(d_aux, h, w), _rows_to_grid(d_main, h, w), g_layers


def fuse_i2p(
    gathered: np.ndarray, points: np.ndarray, layers: tuple[DenseLayer, DenseLayer]
):
    """Point-wise analogue of :func:`fuse_p2i` on (N, C) features."""
    if gathered.shape[0] != points.shape[0]:
        raise ShapeError("point counts must match")
    return _fuse_forward(gathered, points, layers)


def fuse_i2p_backward(grad_out: np.ndarray, cache):
    """Gradients of fuse_i2p w.r.t. (gathered, points, layer parameters)."""
    return _fuse_backward(grad_out, cache)
