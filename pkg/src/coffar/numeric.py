"""Numeric core: 2-d correlation and convolution, the softmax and
entropy family, and a finite-difference gradient checker.

Conventions used throughout the package:

* arrays are float64 and treated as immutable values; every op returns
  a fresh array,
* correlation and convolution zero-pad to keep the input size and
  require odd kernel dimensions so the kernel has a center,
* entropies are in nats; predicted probabilities are clamped to
  [1e-12, 1 - 1e-12] before any log.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from coffar import kernels
from coffar.errors import KernelError, ShapeError, ValueCheckError

PROB_CLAMP_LO = 1e-12
PROB_CLAMP_HI = 1.0 - 1e-12


def _check_image(f: np.ndarray, name: str) -> np.ndarray:
    f = np.asarray(f, dtype=np.float64)
    if f.ndim != 2 or f.size == 0:
        raise ShapeError(f"{name} must be a non-empty 2-d array, got shape {f.shape}")
    return f


def _check_kernel(w: np.ndarray, image_shape: tuple[int, int]) -> np.ndarray:
    w = np.asarray(w, dtype=np.float64)
    if w.ndim != 2 or w.size == 0:
        raise KernelError(f"kernel must be a non-empty 2-d array, got shape {w.shape}")
    kh, kw = w.shape
    if kh % 2 == 0 or kw % 2 == 0:
        raise KernelError(f"kernel dimensions must be odd, got {kh}x{kw}")
    if kh > image_shape[0] or kw > image_shape[1]:
        raise KernelError(
            f"kernel {kh}x{kw} larger than input {image_shape[0]}x{image_shape[1]}"
        )
    return w


def rotate180(w: np.ndarray) -> np.ndarray:
    """Reverse both axes of a 2-d kernel."""
    return np.ascontiguousarray(np.asarray(w)[::-1, ::-1])


def correlate2d(image: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Sliding inner product of the kernel with the image.

    out(x, y) = sum_{s,t} kernel(s, t) * image(x + s, y + t) with the
    kernel offsets centered and the image zero-padded, so the output
    has the input's shape.
    """
    f = _check_image(image, "input")
    w = _check_kernel(kernel, f.shape)
    return kernels.corr2d_fwd(f[None, None], w[None, None])[0, 0]


def convolve2d(image: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Convolution: correlation against the 180-degree rotated kernel."""
    f = _check_image(image, "input")
    w = _check_kernel(kernel, f.shape)
    return kernels.corr2d_fwd(f[None, None], rotate180(w)[None, None])[0, 0]


def conv_layer_forward(
    inputs: np.ndarray, kernel_stack: np.ndarray, biases: np.ndarray
) -> np.ndarray:
    """One convolutional layer: out[j] = sum_i conv(inputs[i], k[j, i]) + b[j].

    Args:
      inputs: (ci, h, w) input maps.
      kernel_stack: (co, ci, kh, kw) kernels, odd kh and kw.
      biases: (co,) per-output-map bias.

    Returns:
      (co, h, w) output maps, same spatial size as the input.
    """
    x = np.asarray(inputs, dtype=np.float64)
    w = np.asarray(kernel_stack, dtype=np.float64)
    b = np.asarray(biases, dtype=np.float64)
    if x.ndim != 3 or x.size == 0:
        raise ShapeError(f"inputs must be (ci, h, w), got shape {x.shape}")
    if w.ndim != 4:
        raise ShapeError(f"kernel stack must be (co, ci, kh, kw), got shape {w.shape}")
    if w.shape[1] != x.shape[0]:
        raise ShapeError(
            f"kernel stack expects {w.shape[1]} input channels, got {x.shape[0]}"
        )
    if b.shape != (w.shape[0],):
        raise ShapeError(f"biases must be ({w.shape[0]},), got shape {b.shape}")
    _check_kernel(w[0, 0], x.shape[1:])
    flipped = np.ascontiguousarray(w[:, :, ::-1, ::-1])
    out = kernels.corr2d_fwd(x[None], flipped)[0]
    return out + b[:, None, None]


def softmax(logits: np.ndarray) -> np.ndarray:
    """Numerically stable softmax of a 1-d logit vector."""
    z = np.asarray(logits, dtype=np.float64)
    if z.ndim != 1 or z.size == 0:
        raise ShapeError(f"logits must be a non-empty 1-d array, got shape {z.shape}")
    if not np.all(np.isfinite(z)):
        raise ValueCheckError("logits must be finite")
    e = np.exp(z - z.max())
    return e / e.sum()


def _check_prob_vector(p: np.ndarray, name: str) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 1 or p.size == 0:
        raise ShapeError(f"{name} must be a non-empty 1-d array, got shape {p.shape}")
    if not np.all(np.isfinite(p)):
        raise ValueCheckError(f"{name} must be finite")
    if np.any(p < 0.0) or np.any(p > 1.0):
        raise ValueCheckError(f"{name} entries must lie in [0, 1]")
    s = float(p.sum())
    if abs(s - 1.0) > 1e-12:
        raise ValueCheckError(f"{name} must sum to 1, got {s!r}")
    return p


def entropy(p: np.ndarray) -> float:
    """Shannon entropy in nats; zero entries contribute zero."""
    p = _check_prob_vector(p, "distribution")
    terms = np.where(p > 0.0, p * np.log(np.where(p > 0.0, p, 1.0)), 0.0)
    return float(-terms.sum())


def cross_entropy(target: np.ndarray, pred: np.ndarray) -> float:
    """-sum_i target_i * ln(pred_i) with the prediction clamped."""
    t = _check_prob_vector(target, "target")
    p = _check_prob_vector(pred, "prediction")
    if t.shape != p.shape:
        raise ShapeError(f"length mismatch: {t.shape} vs {p.shape}")
    logp = np.log(np.clip(p, PROB_CLAMP_LO, PROB_CLAMP_HI))
    return float(-np.sum(t * logp))


def kl_divergence(target: np.ndarray, pred: np.ndarray) -> float:
    """sum_i target_i * ln(target_i / pred_i), prediction clamped.

    Zero target entries contribute zero. Equals
    cross_entropy(target, pred) - entropy(target) up to rounding.
    """
    t = _check_prob_vector(target, "target")
    p = _check_prob_vector(pred, "prediction")
    if t.shape != p.shape:
        raise ShapeError(f"length mismatch: {t.shape} vs {p.shape}")
    logp = np.log(np.clip(p, PROB_CLAMP_LO, PROB_CLAMP_HI))
    logt = np.log(np.where(t > 0.0, t, 1.0))
    return float(np.sum(np.where(t > 0.0, t * (logt - logp), 0.0)))


@dataclass(frozen=True)
class EntropyReport:
    """Entropy bookkeeping for one (target, prediction) pair, in nats."""

    h_target: float
    h_pred: float
    cross: float
    kl: float


def entropy_report(target: np.ndarray, pred: np.ndarray) -> EntropyReport:
    return EntropyReport(
        h_target=entropy(target),
        h_pred=entropy(pred),
        cross=cross_entropy(target, pred),
        kl=kl_divergence(target, pred),
    )


def grad_check(fn, point: np.ndarray, step: float = 1e-5) -> float:
    """Compare an analytic gradient against central finite differences.

    Args:
      fn: callable mapping an array to (scalar value, gradient array of
        the same shape).
      point: where to evaluate.
      step: finite-difference half-step.

    Returns:
      max over components of |g_a - g_n| / max(1, |g_a|, |g_n|).
    """
    x = np.array(point, dtype=np.float64)
    _, analytic = fn(x)
    analytic = np.asarray(analytic, dtype=np.float64)
    if analytic.shape != x.shape:
        raise ShapeError(
            f"gradient shape {analytic.shape} does not match point shape {x.shape}"
        )
    numeric = np.empty_like(x)
    flat = x.reshape(-1)
    num_flat = numeric.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        fp, _ = fn(x)
        flat[i] = orig - step
        fm, _ = fn(x)
        flat[i] = orig
        num_flat[i] = (fp - fm) / (2.0 * step)
    denom = np.maximum(1.0, np.maximum(np.abs(analytic), np.abs(numeric)))
    return float(np.max(np.abs(analytic - numeric) / denom))
