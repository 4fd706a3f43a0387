"""Image quality metrics and set-level evaluation.

PSNR is computed over all packed channels jointly with peak 1.0 by default
(raw-space convention); zero-MSE is capped rather than infinite so queue
arithmetic stays finite. SSIM uses the standard 11x11 Gaussian window
(sigma 1.5) per channel, averaged across channels.
"""

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .engine.tensor import Tensor
from .errors import ContractViolation

PSNR_CAP_DB = 99.0

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5


def _as_np(x):
    if isinstance(x, np.ndarray):
        return x
    if isinstance(x, Tensor):
        return x.data
    return np.asarray(x)


def psnr(a, b, peak=1.0, cap_db=PSNR_CAP_DB):
    """10*log10(peak^2 / MSE), in dB; returns cap_db when MSE is zero."""
    a = _as_np(a)
    b = _as_np(b)
    if a.shape != b.shape:
        raise ContractViolation(f"psnr shape mismatch: {a.shape} vs {b.shape}")
    if peak <= 0:
        raise ContractViolation(f"psnr peak must be > 0, got {peak}")
    diff = a.astype(np.float64) - b.astype(np.float64)
    mse = float(np.mean(diff * diff))
    if mse == 0.0:
        return cap_db
    return float(10.0 * np.log10(peak * peak / mse))


def _gaussian_window(size=SSIM_WINDOW, sigma=SSIM_SIGMA):
    r = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(r * r) / (2.0 * sigma * sigma))
    win = np.outer(g, g)
    return win / win.sum()


def _ssim_channel(x, y, c1, c2, win):
    k = win.shape[0]
    wx = sliding_window_view(x, (k, k))
    wy = sliding_window_view(y, (k, k))
    mu_x = np.tensordot(wx, win, axes=([2, 3], [0, 1]))
    mu_y = np.tensordot(wy, win, axes=([2, 3], [0, 1]))
    ex2 = np.tensordot(wx * wx, win, axes=([2, 3], [0, 1]))
    ey2 = np.tensordot(wy * wy, win, axes=([2, 3], [0, 1]))
    exy = np.tensordot(wx * wy, win, axes=([2, 3], [0, 1]))
    var_x = ex2 - mu_x * mu_x
    var_y = ey2 - mu_y * mu_y
    cov = exy - mu_x * mu_y
    num = (2.0 * mu_x * mu_y + c1) * (2.0 * cov + c2)
    den = (mu_x * mu_x + mu_y * mu_y + c1) * (var_x + var_y + c2)
    return float(np.mean(num / den))


def ssim(a, b, peak=1.0):
    """Gaussian-windowed structural similarity, per channel then averaged."""
    a = _as_np(a)
    b = _as_np(b)
    if a.shape != b.shape:
        raise ContractViolation(f"ssim shape mismatch: {a.shape} vs {b.shape}")
    if a.ndim == 2:
        a = a[None]
        b = b[None]
    if a.ndim != 3:
        raise ContractViolation(f"ssim needs (C, H, W) or (H, W), got {a.shape}")
    if a.shape[1] < SSIM_WINDOW or a.shape[2] < SSIM_WINDOW:
        raise ContractViolation(f"ssim needs spatial dims >= {SSIM_WINDOW}, got {a.shape}")
    c1 = (0.01 * peak) ** 2
    c2 = (0.03 * peak) ** 2
    win = _gaussian_window()
    vals = [_ssim_channel(a[c].astype(np.float64), b[c].astype(np.float64), c1, c2, win)
            for c in range(a.shape[0])]
    return float(np.mean(np.asarray(vals, dtype=np.float64)))


def error_map(a, b, normalize=False):
    """Elementwise |a - b|; optionally scaled to [0, 1] by its max."""
    a = _as_np(a)
    b = _as_np(b)
    if a.shape != b.shape:
        raise ContractViolation(f"error_map shape mismatch: {a.shape} vs {b.shape}")
    m = np.abs(a.astype(np.float64) - b.astype(np.float64))
    if normalize:
        peak = m.max()
        if peak > 0:
            m = m / peak
    return m


@dataclass
class EvalReport:
    """Per-item and mean quality over one dataset."""

    psnr_values: list
    ssim_values: list
    mean_psnr: float
    mean_ssim: float
    count: int


def _pairs_of(dataset):
    return dataset.pairs if hasattr(dataset, "pairs") else list(dataset)


def _batched_outputs(model, pairs, encoder, chunk=32, modulate=True):
    outs = []
    for lo in range(0, len(pairs), chunk):
        part = pairs[lo:lo + chunk]
        noisy = np.stack([p.noisy for p in part])
        meta = encoder.encode_pairs(part, dtype=model.dtype)
        outs.append(model.denoise(noisy, meta, modulate=modulate))
    return np.concatenate(outs, axis=0)


def eval_mean_psnr(model, pairs, encoder, peak=1.0, modulate=True):
    """Mean PSNR of the model over a list of pairs (fixed-order reduction)."""
    pairs = _pairs_of(pairs)
    out = _batched_outputs(model, pairs, encoder, modulate=modulate)
    vals = [psnr(out[i], pairs[i].clean, peak=peak) for i in range(len(pairs))]
    return float(np.mean(np.asarray(vals, dtype=np.float64)))


def eval_model(model, dataset, encoder, peak=1.0, modulate=True):
    """Run the model on every pair with its own metadata and report quality."""
    pairs = _pairs_of(dataset)
    if not pairs:
        raise ContractViolation("eval_model needs a nonempty dataset")
    out = _batched_outputs(model, pairs, encoder, modulate=modulate)
    psnr_values = [psnr(out[i], pairs[i].clean, peak=peak) for i in range(len(pairs))]
    ssim_values = [ssim(out[i], pairs[i].clean, peak=peak) for i in range(len(pairs))]
    return EvalReport(
        psnr_values=psnr_values,
        ssim_values=ssim_values,
        mean_psnr=float(np.mean(np.asarray(psnr_values, dtype=np.float64))),
        mean_ssim=float(np.mean(np.asarray(ssim_values, dtype=np.float64))),
        count=len(pairs),
    )
