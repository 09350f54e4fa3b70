"""Joint estimation of per-channel SR kernels and a per-patch homography.

For each pattern the HR target is built as ``gain * warp(pattern, H) + offset``
(the two-point flat-field model), blurred per channel, subsampled and mosaicked.
Kernels and H minimise the mean smoothed-L1 distance to the burst-averaged
captures with Adam, followed by a Gauss-Newton polish.  No non-negativity or
unit-sum constraint is placed on the kernels.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .. import backend
from ..alignment.homography import PARAM_INDEX, Homography
from ..alignment.warp import _warp_jacobian
from ..errors import ConfigError, DimensionError, OptimizationError
from ..image import CfaPattern, RawFrame
from ..radiometric import two_point_terms
from .forward import SrKernelSet, lr_geometry
from .gaussian import GaussianKernelSpec, gen_gaussian_kernel

log = logging.getLogger(__name__)


@dataclass
class KernelEstimationConfig:
    batch_size: int = 20
    iterations: int = 2000
    lr_kernel: float = 1e-3
    # Step size for homography entries expressed in normalised coordinates
    # (both grids mapped to [-1, 1]), so one unit is half the patch width.
    lr_homography: float = 1e-3
    lr_final_fraction: float = 1e-2
    loss: str = "l1"
    patch_size: int = 128
    scale: int = 4
    support: int = 21
    huber_delta: float = 1e-6
    phase: int = 0
    seed: int = 0
    homography_warmup: int = 100
    polish_iterations: int = 10
    # Integer kernel-shift search radius per hill-climb step (0 disables).
    shift_search: int = 1
    shift_polish_iterations: int = 3
    early_stop_window: int = 100
    early_stop_rtol: float = 1e-6
    min_batch: int = 1

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.support % 2 == 0:
            raise ConfigError("kernel support must be odd")
        if self.loss != "l1":
            raise ConfigError(f"unsupported loss {self.loss!r}")
        if self.scale < 1 or self.patch_size < 1:
            raise ConfigError("scale and patch_size must be positive")

    @property
    def hr_size(self) -> int:
        return self.scale * self.patch_size

    @property
    def margin(self) -> int:
        return self.support // 2

    @property
    def hr_extent(self) -> int:
        """Side of the HR target including the convolution margin."""
        return self.hr_size + 2 * self.margin

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class FlatFields:
    """White/black field captures resampled onto the HR target grid, (H, W, 3)."""

    white: np.ndarray
    black: np.ndarray
    black_level: float = 0.0
    white_level: float = 1.0
    max_value: float = 1.0

    def terms(self):
        return two_point_terms(self.white, self.black, self.black_level, self.white_level, self.max_value)

    @classmethod
    def uniform(cls, shape, white=0.8, black=0.02) -> "FlatFields":
        return cls(np.full(tuple(shape) + (3,), white), np.full(tuple(shape) + (3,), black))


def huber(r, delta):
    a = np.abs(r)
    return np.where(a <= delta, 0.5 * r * r / delta, a - 0.5 * delta)


def huber_grad(r, delta):
    return np.clip(r / delta, -1.0, 1.0)


def _planes(img):
    img = np.asarray(img, dtype=np.float64)
    return np.ascontiguousarray(img[None] if img.ndim == 2 else np.moveaxis(img, -1, 0))


class KernelProblem:
    """Batch loss and exact gradients for one FOV patch."""

    def __init__(self, measured, displayed, fields: FlatFields, cfa: CfaPattern | str = "RGGB",
                 scale: int = 4, support: int = 21, phase: int = 0, huber_delta: float = 1e-6):
        if len(measured) != len(displayed):
            raise ConfigError(f"{len(measured)} measured patches but {len(displayed)} patterns")
        if len(measured) == 0:
            raise ConfigError("empty batch")
        self.cfa = CfaPattern(cfa) if isinstance(cfa, str) else cfa
        self.cmap = self.cfa.channel_map()
        self.scale, self.support, self.delta = scale, support, huber_delta
        self.y = [np.asarray(m.data if isinstance(m, RawFrame) else m, dtype=np.float64) for m in measured]
        self.x = [_planes(d) for d in displayed]
        gain, offset = fields.terms()
        self.gain, self.off = _planes(gain), _planes(offset)
        self.hr_shape = self.gain.shape[1:]
        self.n_rows, self.n_cols, margin = lr_geometry(self.hr_shape, support, scale)
        self.offset = margin - support // 2 + phase
        for y in self.y:
            if y.shape != (self.n_rows, self.n_cols):
                raise DimensionError(f"measured patch {y.shape} does not match LR grid {(self.n_rows, self.n_cols)}")
        shapes = {x.shape[1:] for x in self.x}
        if len(shapes) != 1:
            raise DimensionError("displayed patterns differ in size")
        self.display_shape = shapes.pop()

    @property
    def batch_size(self):
        return len(self.y)

    def hr_target(self, b: int, G: np.ndarray) -> np.ndarray:
        warped, _ = backend.warp_bilinear(self.x[b], G, *self.hr_shape)
        return self.gain * warped + self.off

    def render(self, kernels, h) -> list[np.ndarray]:
        G = np.linalg.inv(h.h if isinstance(h, Homography) else h)
        return [backend.render_lr(self.hr_target(b, G), kernels, self.scale, self.offset, self.cmap,
                                  self.n_rows, self.n_cols) for b in range(self.batch_size)]

    def loss(self, kernels, h) -> float:
        norm = 1.0 / (self.batch_size * self.n_rows * self.n_cols)
        return float(sum(huber(p - y, self.delta).sum() for p, y in zip(self.render(kernels, h), self.y)) * norm)

    def loss_and_grad(self, kernels, h, need_h: bool = True):
        """Return ``(loss, d/d kernels, d/d H)``; the H gradient is the full 3x3 matrix.

        ``h`` may be any non-normalised 3x3 array, since only its projective
        class enters the model.  Patterns are reduced in a fixed order.
        """
        H = h.h if isinstance(h, Homography) else np.asarray(h, dtype=np.float64)
        G = np.linalg.inv(H)
        kernels = np.ascontiguousarray(kernels, dtype=np.float64)
        norm = 1.0 / (self.batch_size * self.n_rows * self.n_cols)
        total = 0.0
        grad_k = np.zeros_like(kernels)
        grad_G = np.zeros((3, 3))
        for b in range(self.batch_size):
            x_hr = self.hr_target(b, G)
            pred = backend.render_lr(x_hr, kernels, self.scale, self.offset, self.cmap, self.n_rows, self.n_cols)
            r = pred - self.y[b]
            total += huber(r, self.delta).sum()
            g = huber_grad(r, self.delta) * norm
            gk, gx = backend.render_lr_adjoint(x_hr, kernels, g, self.scale, self.offset, self.cmap, need_h)
            grad_k += gk
            if need_h:
                up = self.gain * gx
                if self.x[b].shape[0] == 1:
                    up = up.sum(axis=0, keepdims=True)
                grad_G += backend.warp_bilinear_vjp(self.x[b], G, up)
        grad_H = -G.T @ grad_G @ G.T
        return total * norm, grad_k, grad_H

    def _windows(self, x_hr: np.ndarray, c: int, sel: np.ndarray) -> np.ndarray:
        """HR windows seen by the LR samples of channel ``c`` (rows match ``sel``)."""
        k, s, o = self.support, self.scale, self.offset
        win = np.lib.stride_tricks.sliding_window_view(x_hr[c], (k, k))
        win = win[o:o + s * (self.n_rows - 1) + 1:s, o:o + s * (self.n_cols - 1) + 1:s]
        return win[sel].reshape(-1, k * k)

    def gauss_newton(self, kernels, h, iterations: int = 10, damping: float = 1e-4):
        """Joint damped Gauss-Newton over the kernels and the 8 entries of H.

        The prediction is linear in the kernels, and a kernel shift nearly
        mimics a translation of H, so the two blocks are solved together.
        Residuals are reweighted by ``1 / max(|r|, delta)`` to follow the
        smoothed-L1 objective.  A step is kept only if it lowers the loss.
        Returns ``(kernels, H, loss)``.
        """
        H = (h.h if isinstance(h, Homography) else np.asarray(h, dtype=np.float64)).copy()
        H = H / H[2, 2]
        kk = self.support
        nk = kk * kk
        flat = np.ascontiguousarray(np.asarray(kernels, dtype=np.float64)[:, ::-1, ::-1]).reshape(3, nk)
        sels = [self.cmap[np.arange(self.n_rows)[:, None] % 2, np.arange(self.n_cols)[None, :] % 2] == c
                for c in range(3)]

        def unflip(f):
            return np.ascontiguousarray(f.reshape(3, kk, kk)[:, ::-1, ::-1])

        best = self.loss(unflip(flat), H)
        lam = damping
        n_par = 3 * nk + 8
        for _ in range(iterations):
            G = np.linalg.inv(H)
            k_cur = unflip(flat)
            jtj = np.zeros((n_par, n_par))
            jtr = np.zeros(n_par)
            for b in range(self.batch_size):
                x_hr = self.hr_target(b, G)
                r = backend.render_lr(x_hr, k_cur, self.scale, self.offset, self.cmap, self.n_rows,
                                      self.n_cols) - self.y[b]
                w = 1.0 / np.maximum(np.abs(r), self.delta)
                jac = _warp_jacobian(self.x[b], G, *self.hr_shape)
                cols = np.stack([backend.render_lr(self.gain * jac[..., q], k_cur, self.scale, self.offset,
                                                   self.cmap, self.n_rows, self.n_cols) for q in range(8)])
                for c in range(3):
                    sel = sels[c]
                    a = self._windows(x_hr, c, sel)
                    jh = cols[:, sel].T
                    wc, rc = w[sel], r[sel]
                    blk = slice(c * nk, (c + 1) * nk)
                    aw = a * wc[:, None]
                    jtj[blk, blk] += aw.T @ a
                    jtj[blk, -8:] += aw.T @ jh
                    jtj[-8:, -8:] += (jh * wc[:, None]).T @ jh
                    jtr[blk] += aw.T @ rc
                    jtr[-8:] += (jh * wc[:, None]).T @ rc
            for c in range(3):
                blk = slice(c * nk, (c + 1) * nk)
                jtj[-8:, blk] = jtj[blk, -8:].T
            d = np.sqrt(np.maximum(np.diag(jtj), 1e-300))
            a_n = jtj / np.outer(d, d)
            g_n = jtr / d
            improved = False
            for _ in range(8):
                try:
                    step = np.linalg.solve(a_n + lam * np.eye(n_par), -g_n) / d
                except np.linalg.LinAlgError:
                    lam *= 10
                    continue
                f_new = flat + step[:-8].reshape(3, nk)
                h_new = H.copy()
                for v, (i, j) in zip(step[-8:], PARAM_INDEX):
                    h_new[i, j] += v
                loss = self.loss(unflip(f_new), h_new)
                if np.isfinite(loss) and loss < best:
                    flat, H, best, lam, improved = f_new, h_new, loss, max(lam * 0.1, 1e-12), True
                    break
                lam *= 10
            if not improved:
                break
        return unflip(flat), H, best


def shift_kernels(kernels: np.ndarray, dx: int, dy: int) -> np.ndarray:
    """Move kernel taps by whole pixels, zero-filling the vacated border."""
    out = np.zeros_like(kernels)
    k = kernels.shape[-1]
    src_y, dst_y = slice(max(dy, 0), k + min(dy, 0)), slice(max(-dy, 0), k + min(-dy, 0))
    src_x, dst_x = slice(max(dx, 0), k + min(dx, 0)), slice(max(-dx, 0), k + min(-dx, 0))
    out[:, dst_y, dst_x] = kernels[:, src_y, src_x]
    return out


def shift_search(problem: KernelProblem, kernels, h, loss, radius: int = 1, iterations: int = 3,
                 floor: float = 1e-12, gain: float = 0.5):
    """Hill-climb over whole-pixel kernel shifts paired with the opposite H translation.

    Such a pair leaves the prediction unchanged except through the flat-field
    gain and the kernel border, so gradient methods rarely cross between
    them.  Each neighbour gets a short Gauss-Newton refinement and the best
    one replaces the current fit if it cuts the loss below ``gain`` times its
    value.  A fit already under ``floor`` is left alone: the data cannot
    separate the pairings there.
    """
    h = np.asarray(h, dtype=np.float64)
    if loss <= floor:
        return kernels, h, loss
    steps = [(dx, dy) for dy in range(-radius, radius + 1) for dx in range(-radius, radius + 1) if dx or dy]
    for _ in range(problem.support // 2):
        cands = []
        for dx, dy in steps:
            k_c, h_c, l_c = problem.gauss_newton(shift_kernels(kernels, dx, dy),
                                                 Homography.translation(dx, dy).h @ h, iterations)
            cands.append((l_c, k_c, h_c))
        l_best, k_best, h_best = min(cands, key=lambda c: c[0])
        if not l_best < gain * loss:
            break
        loss, kernels, h = l_best, k_best, h_best
    return kernels, h, loss


def coordinate_normalizer(shape) -> np.ndarray:
    """Affine map sending pixel coordinates of an (H, W) grid into [-1, 1]."""
    h, w = shape
    s = 2.0 / max(h - 1, w - 1, 1)
    return np.array([[s, 0, -s * (w - 1) / 2], [0, s, -s * (h - 1) / 2], [0, 0, 1.0]])


class Adam:
    def __init__(self, shape, beta1=0.9, beta2=0.999, eps=1e-8):
        self.m = np.zeros(shape)
        self.v = np.zeros(shape)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0

    def step(self, grad, lr):
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad * grad
        mhat = self.m / (1 - self.beta1 ** self.t)
        vhat = self.v / (1 - self.beta2 ** self.t)
        return lr * mhat / (np.sqrt(vhat) + self.eps)


def cosine_lr(base, it, total, final_fraction):
    frac = it / max(total - 1, 1)
    return base * (final_fraction + (1 - final_fraction) * 0.5 * (1 + math.cos(math.pi * frac)))


def initial_kernels(scale: int, support: int) -> np.ndarray:
    k = gen_gaussian_kernel(GaussianKernelSpec(scale / 2.0, scale / 2.0, 0.0, support))
    return np.stack([k, k, k])


@dataclass
class EstimationTrace:
    losses: list = field(default_factory=list)
    stopped_early: bool = False


def estimate_kernels(measured, displayed, init_h: Homography, fields: FlatFields,
                     cfg: KernelEstimationConfig | None = None, cfa: CfaPattern | str = "RGGB",
                     patch_index=(0, 0), camera: str = "", trace: EstimationTrace | None = None,
                     init_kernels=None) -> SrKernelSet:
    """Fit per-channel kernels and refine ``init_h`` (display -> patch HR grid).

    Kernels and H are updated jointly by Adam (optionally holding H at
    ``init_h`` for ``homography_warmup`` iterations).  The lowest-loss iterate
    then seeds a joint Gauss-Newton polish; Adam alone converges slowly along
    the valley where a kernel shift trades off against a translation of H.
    A whole-pixel shift search (:func:`shift_search`) finally resolves which
    of the nearly equivalent kernel/H pairings fits best.
    """
    cfg = cfg or KernelEstimationConfig()
    if len(measured) < max(cfg.min_batch, 1):
        raise ConfigError(f"batch of {len(measured)} is below the configured minimum {cfg.min_batch}")
    problem = KernelProblem(measured, displayed, fields, cfa, cfg.scale, cfg.support, cfg.phase, cfg.huber_delta)
    t_d = coordinate_normalizer(problem.display_shape)
    t_s = coordinate_normalizer(problem.hr_shape)
    t_s_inv = np.linalg.inv(t_s)
    hn = t_s @ init_h.h @ np.linalg.inv(t_d)
    hn = hn / hn[2, 2]
    p = np.array([hn[i, j] for i, j in PARAM_INDEX])

    def full_h(params):
        m = np.ones((3, 3))
        for v, (i, j) in zip(params, PARAM_INDEX):
            m[i, j] = v
        return t_s_inv @ m @ t_d

    k = initial_kernels(cfg.scale, cfg.support) if init_kernels is None else np.array(init_kernels, dtype=np.float64)
    adam_k, adam_h = Adam(k.shape), Adam(8)
    trace = trace if trace is not None else EstimationTrace()
    best = (np.inf, k.copy(), p.copy())
    window = cfg.early_stop_window
    it = 0
    for it in range(cfg.iterations):
        refine = it >= cfg.homography_warmup
        loss, gk, gH = problem.loss_and_grad(k, full_h(p), need_h=refine)
        if not (np.isfinite(loss) and np.all(np.isfinite(gk)) and np.all(np.isfinite(gH))):
            raise OptimizationError(f"loss diverged at iteration {it}",
                                    {"iteration": it, "loss": loss, "last_losses": trace.losses[-10:]})
        trace.losses.append(loss)
        if loss < best[0]:
            best = (loss, k.copy(), p.copy())
        lr_scale = cosine_lr(1.0, it, cfg.iterations, cfg.lr_final_fraction)
        k = k - adam_k.step(gk, cfg.lr_kernel * lr_scale)
        if refine:
            g_norm = t_s_inv.T @ gH @ t_d.T
            p = p - adam_h.step(np.array([g_norm[i, j] for i, j in PARAM_INDEX]), cfg.lr_homography * lr_scale)
        if window and it >= cfg.homography_warmup + window:
            old = trace.losses[-window - 1]
            if abs(old - loss) <= cfg.early_stop_rtol * max(abs(old), 1e-300):
                trace.stopped_early = True
                break
    final_loss = problem.loss(k, full_h(p))
    if final_loss < best[0]:
        best = (final_loss, k.copy(), p.copy())
    loss, k, p = best
    h = full_h(p)
    if cfg.polish_iterations > 0:
        k, h, loss = problem.gauss_newton(k, h, cfg.polish_iterations)
    if cfg.shift_search > 0:
        k, h, loss = shift_search(problem, k, h, loss, cfg.shift_search, cfg.shift_polish_iterations)
        if cfg.polish_iterations > 0:
            k, h, loss = problem.gauss_newton(k, h, cfg.polish_iterations)
    log.info("patch %s: loss %.3e after %d iterations", patch_index, loss, it + 1)
    return SrKernelSet(kernels=k, scale=cfg.scale, patch_index=patch_index, refined_h=Homography(h),
                       residual=float(loss), iterations=it + 1, phase=cfg.phase, camera=camera)
