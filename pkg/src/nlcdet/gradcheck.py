"""Finite-difference verification of every analytic backward pass.

Central differences in double precision; fusion-block instances are resampled
until all pre-activations sit safely away from the ReLU kink.
"""

from __future__ import annotations

import numpy as np

from .losses import center_loss, cross_entropy, nlc_loss
from .pipeline import SceneParams, ToyModel, TrainConfig, backward, compute_losses, forward, generate_scene
from .propagation import (
    DenseLayer,
    fuse_i2p,
    fuse_i2p_backward,
    fuse_p2i,
    fuse_p2i_backward,
    pixel_to_point,
    pixel_to_point_backward,
    point_to_pixel,
    point_to_pixel_backward,
)

__all__ = [
    "check_point_to_pixel",
    "check_pixel_to_point",
    "check_adjoint_point_to_pixel",
    "check_adjoint_pixel_to_point",
    "check_fuse_p2i",
    "check_fuse_i2p",
    "check_losses",
    "check_full_model",
    "run_all",
]

_EPS = 1e-6


def _rel_err(a: np.ndarray, b: np.ndarray) -> float:
    denom = max(float(np.linalg.norm(a)), float(np.linalg.norm(b)), 1e-12)
    return float(np.linalg.norm(a - b)) / denom


def _random_instance(rng, n=7, c=3, h=5, w=6):
    feats = rng.normal(size=(n, c))
    # spread coords over the grid, include some out-of-image points
    coords = np.column_stack(
        [rng.uniform(-1.5, w + 1.5, size=n), rng.uniform(-1.5, h + 1.5, size=n)]
    )
    return feats, coords, h, w


def check_point_to_pixel(rng: np.random.Generator) -> float:
    """FD check of the scatter-average backward w.r.t. point features."""
    feats, coords, h, w = _random_instance(rng)
    cotangent = rng.normal(size=(feats.shape[1], h, w))
    analytic = point_to_pixel_backward(cotangent, coords, len(feats))

    fd = np.zeros_like(feats)
    for i in range(feats.size):
        for sign in (1.0, -1.0):
            pert = feats.copy()
            pert.flat[i] += sign * _EPS
            out = point_to_pixel(pert, coords, h, w)
            fd.flat[i] += sign * float(np.sum(out * cotangent))
    fd /= 2 * _EPS
    return _rel_err(analytic, fd)


def check_pixel_to_point(rng: np.random.Generator) -> float:
    """FD check of the bilinear-gather backward w.r.t. grid features."""
    feats, coords, h, w = _random_instance(rng)
    grid = rng.normal(size=(feats.shape[1], h, w))
    cotangent = rng.normal(size=(len(coords), grid.shape[0]))
    analytic = pixel_to_point_backward(cotangent, coords, h, w)

    fd = np.zeros_like(grid)
    for i in range(grid.size):
        for sign in (1.0, -1.0):
            pert = grid.copy()
            pert.flat[i] += sign * _EPS
            out = pixel_to_point(pert, coords)
            fd.flat[i] += sign * float(np.sum(out * cotangent))
    fd /= 2 * _EPS
    return _rel_err(analytic, fd)


def check_adjoint_point_to_pixel(rng: np.random.Generator) -> float:
    """<scatter(g), t> must equal <g, scatter_backward(t)> (transpose identity)."""
    feats, coords, h, w = _random_instance(rng)
    t = rng.normal(size=(feats.shape[1], h, w))
    lhs = float(np.sum(point_to_pixel(feats, coords, h, w) * t))
    rhs = float(np.sum(feats * point_to_pixel_backward(t, coords, len(feats))))
    return abs(lhs - rhs)


def check_adjoint_pixel_to_point(rng: np.random.Generator) -> float:
    feats, coords, h, w = _random_instance(rng)
    grid = rng.normal(size=(feats.shape[1], h, w))
    t = rng.normal(size=(len(coords), grid.shape[0]))
    lhs = float(np.sum(pixel_to_point(grid, coords) * t))
    rhs = float(np.sum(grid * pixel_to_point_backward(t, coords, h, w)))
    return abs(lhs - rhs)


def _random_fuse_layers(rng, c_aux, c_mid, c_main, c_out):
    l1 = DenseLayer(
        weights=rng.normal(size=(c_mid, c_aux)), bias=rng.normal(size=c_mid)
    )
    l2 = DenseLayer(
        weights=rng.normal(size=(c_out, c_mid + c_main)), bias=rng.normal(size=c_out)
    )
    return l1, l2


def _kink_safe(cache, threshold=1e-4):
    inner = cache[0] if len(cache) == 3 else cache
    _, pre1, _, _, pre2, _ = inner
    return min(np.abs(pre1).min(), np.abs(pre2).min()) > threshold


def _check_fuse(rng, grid_mode: bool) -> float:
    forward_fn = fuse_p2i if grid_mode else fuse_i2p
    backward_fn = fuse_p2i_backward if grid_mode else fuse_i2p_backward
    for _ in range(50):
        c_aux, c_mid, c_main, c_out = 3, 4, 3, 4
        if grid_mode:
            h, w = 3, 4
            aux = rng.normal(size=(c_aux, h, w))
            main = rng.normal(size=(c_main, h, w))
        else:
            n = 10
            aux = rng.normal(size=(n, c_aux))
            main = rng.normal(size=(n, c_main))
        layers = _random_fuse_layers(rng, c_aux, c_mid, c_main, c_out)
        out, cache = forward_fn(aux, main, layers)
        if not _kink_safe(cache):
            continue
        cot = rng.normal(size=out.shape)
        d_aux, d_main, (g1, g2) = backward_fn(cot, cache)
        analytic = np.concatenate(
            [
                d_aux.ravel(),
                d_main.ravel(),
                g1.weights.ravel(),
                g1.bias,
                g2.weights.ravel(),
                g2.bias,
            ]
        )

        blocks = [aux, main, layers[0].weights, layers[0].bias, layers[1].weights, layers[1].bias]
        fd_parts = []
        for bi, block in enumerate(blocks):
            fd = np.zeros(block.size)
            for i in range(block.size):
                vals = []
                for sign in (1.0, -1.0):
                    pert = [b.copy() for b in blocks]
                    pert[bi].flat[i] += sign * _EPS
                    pl = (
                        DenseLayer(weights=pert[2], bias=pert[3]),
                        DenseLayer(weights=pert[4], bias=pert[5]),
                    )
                    o, _ = forward_fn(pert[0], pert[1], pl)
                    vals.append(float(np.sum(o * cot)))
                fd[i] = (vals[0] - vals[1]) / (2 * _EPS)
            fd_parts.append(fd)
        return _rel_err(analytic, np.concatenate(fd_parts))
    raise RuntimeError("could not sample a kink-safe fusion instance")


def check_fuse_p2i(rng: np.random.Generator) -> float:
    return _check_fuse(rng, grid_mode=True)


def check_fuse_i2p(rng: np.random.Generator) -> float:
    return _check_fuse(rng, grid_mode=False)


def check_losses(rng: np.random.Generator) -> float:
    """FD check of the coordinate-loss and cross-entropy gradients."""
    n = 12
    worst = 0.0

    fg = rng.random(n) < 0.6
    fg[0] = True
    delta = 0.7
    for loss_fn in (nlc_loss, center_loss):
        pred = rng.normal(size=(n, 3))
        target = rng.normal(size=(n, 3))
        # keep residuals off the Huber C1 seam for clean differences
        diff = pred - target
        seam = np.abs(np.abs(diff) - delta) < 1e-3
        pred[seam] += 5e-3
        _, grad = loss_fn(pred, target, fg, delta)
        fd = np.zeros_like(pred)
        for i in range(pred.size):
            for sign in (1.0, -1.0):
                pert = pred.copy()
                pert.flat[i] += sign * _EPS
                l, _ = loss_fn(pert, target, fg, delta)
                fd.flat[i] += sign * l
        fd /= 2 * _EPS
        worst = max(worst, _rel_err(grad, fd))

    logits = rng.normal(size=(n, 4))
    labels = rng.integers(0, 4, size=n)
    _, grad = cross_entropy(logits, labels)
    fd = np.zeros_like(logits)
    for i in range(logits.size):
        for sign in (1.0, -1.0):
            pert = logits.copy()
            pert.flat[i] += sign * _EPS
            l, _ = cross_entropy(pert, labels)
            fd.flat[i] += sign * l
    fd /= 2 * _EPS
    worst = max(worst, _rel_err(grad, fd))
    return worst


def _min_preactivation(cache) -> float:
    vals = []
    for key in ("pre_g0", "pre_f0", "pre_g1", "pre_f1"):
        if key in cache:
            vals.append(np.abs(cache[key]).min())
    for key in ("c_i2p1", "c_i2p2"):
        if key in cache:
            _, pre1, _, _, pre2, _ = cache[key]
            vals.extend([np.abs(pre1).min(), np.abs(pre2).min()])
    for key in ("c_p2i1", "c_p2i2"):
        if key in cache:
            inner = cache[key][0]
            _, pre1, _, _, pre2, _ = inner
            vals.extend([np.abs(pre1).min(), np.abs(pre2).min()])
    return min(vals) if vals else np.inf


def check_full_model(rng: np.random.Generator, directions: int = 5) -> float:
    """Directional FD check of the end-to-end toy-model loss gradient."""
    scene = generate_scene(
        int(rng.integers(1 << 31)),
        SceneParams(max_boxes=1, min_points_per_box=20, max_points_per_box=30,
                    background_points=20, image_height=6, image_width=8),
    )
    config = TrainConfig(point_channels=4, image_channels=4)
    # resample until every pre-activation is clear of the ReLU kink
    for _ in range(50):
        model = ToyModel.init(int(rng.integers(1 << 31)), c_point=4, c_image=4)
        # zero-initialized biases would pin empty-pixel pre-activations to the
        # ReLU kink; randomize them for the check
        for layer in model.layers.values():
            layer.bias = rng.normal(0.0, 0.3, size=layer.bias.shape)
        _, probe_cache = forward(model, scene, config)
        if _min_preactivation(probe_cache) > 1e-4:
            break
    else:
        raise RuntimeError("could not sample a kink-safe model instance")

    def loss_at(vec):
        model.unpack(vec)
        outputs, _ = forward(model, scene, config)
        losses, _ = compute_losses(outputs, scene, config)
        return losses["total"]

    base = model.pack()
    outputs, cache = forward(model, scene, config)
    _, head_grads = compute_losses(outputs, scene, config)
    grads = backward(model, scene, config, cache, head_grads)
    flat_model = ToyModel(layers=grads)
    grad_vec = flat_model.pack()

    worst = 0.0
    for _ in range(directions):
        d = rng.normal(size=base.size)
        d /= np.linalg.norm(d)
        step = 1e-6
        f_plus = loss_at(base + step * d)
        f_minus = loss_at(base - step * d)
        fd = (f_plus - f_minus) / (2 * step)
        analytic = float(grad_vec @ d)
        worst = max(
            worst, abs(analytic - fd) / max(abs(analytic), abs(fd), 1e-10)
        )
    model.unpack(base)
    return worst


def run_all(trials: int, seed: int, perturb: bool = False) -> dict[str, float]:
    """Run every operator check ``trials`` times; returns max error per check.

    ``perturb`` deliberately corrupts one backward result (negative control
    for the verification harness itself).
    """
    rng = np.random.default_rng(seed)
    results = {}
    checks = {
        "point_to_pixel": check_point_to_pixel,
        "pixel_to_point": check_pixel_to_point,
        "adjoint_point_to_pixel": check_adjoint_point_to_pixel,
        "adjoint_pixel_to_point": check_adjoint_pixel_to_point,
        "fuse_p2i": check_fuse_p2i,
        "fuse_i2p": check_fuse_i2p,
        "losses": check_losses,
    }
    for name, fn in checks.items():
        results[name] = max(fn(rng) for _ in range(trials))
    results["full_model"] = max(
        check_full_model(rng) for _ in range(max(1, trials // 20))
    )
    if perturb:
        results["point_to_pixel"] += 1.0
    return results


THRESHOLDS = {
    "point_to_pixel": 1e-6,
    "pixel_to_point": 1e-6,
    "adjoint_point_to_pixel": 1e-10,
    "adjoint_pixel_to_point": 1e-10,
    "fuse_p2i": 1e-6,
    "fuse_i2p": 1e-6,
    "losses": 1e-6,
    "full_model": 1e-5,
}
