"""Axis-aligned box propagation through network layers.

Two regimes share the affine/convolution arithmetic and differ only at
Bernstein activation layers:

* refined: re-express each neuron's polynomial on the incoming box by
  subdivision, then take the coefficient range (tight),
* naive: interval arithmetic over the de Casteljau recursion on the incoming
  box, ignoring the subdivision and enclosure properties (the generic-IBP
  baseline; may be arbitrarily loose and is allowed to overflow to +/-inf).

Boxes entering an activation are clipped to the neuron's stored domain first;
the network's forward pass clamps pre-activations the same way, so the clip
is the exact interval image of the function actually computed.

All functions are pure.  The module keeps a single operation counter used by
tests to assert that the O(1) global certificate never triggers a hidden
propagation pass.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .bernstein import de_casteljau, interval_de_casteljau, left_part, right_part


class DomainClipWarning(UserWarning):
    """A query box exceeded a stored activation domain and was clipped."""


_PROPAGATION_OPS = 0


def propagation_ops() -> int:
    """Monotone counter of box-propagation kernel calls (test instrumentation)."""
    return _PROPAGATION_OPS


def _count() -> None:
    global _PROPAGATION_OPS
    _PROPAGATION_OPS += 1


@dataclass
class BoxBounds:
    """Per-dimension interval vector: lo[i] <= x[i] <= hi[i].

    Entries may be +/-inf only on the naive propagation path; NaN is always
    rejected.
    """

    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self) -> None:
        lo = np.atleast_1d(np.asarray(self.lo, dtype=np.float64))
        hi = np.atleast_1d(np.asarray(self.hi, dtype=np.float64))
        if lo.shape != hi.shape:
            raise ValueError(f"bound shapes differ: {lo.shape} vs {hi.shape}")
        if np.any(np.isnan(lo)) or np.any(np.isnan(hi)):
            raise ValueError("bounds must not contain NaN")
        if np.any(lo > hi):
            i = int(np.argmax(lo > hi))
            raise ValueError(f"lower bound exceeds upper bound at index {i}")
        self.lo = lo
        self.hi = hi

    def __len__(self) -> int:
        return self.lo.size

    @property
    def width(self) -> np.ndarray:
        return self.hi - self.lo

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.lo + self.hi)

    @property
    def radius(self) -> np.ndarray:
        return 0.5 * (self.hi - self.lo)

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.lo)) and np.all(np.isfinite(self.hi)))

    def contains(self, x, tol: float = 0.0) -> bool:
        x = np.asarray(x, dtype=np.float64)
        return bool(np.all(x >= self.lo - tol) and np.all(x <= self.hi + tol))

    def contains_box(self, other: "BoxBounds", tol: float = 0.0) -> bool:
        return bool(np.all(other.lo >= self.lo - tol) and np.all(other.hi <= self.hi + tol))

    def intersect(self, other: "BoxBounds") -> "BoxBounds":
        return BoxBounds(np.maximum(self.lo, other.lo), np.minimum(self.hi, other.hi))

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return rng.uniform(self.lo, self.hi, size=(n, len(self)))

    def copy(self) -> "BoxBounds":
        return BoxBounds(self.lo.copy(), self.hi.copy())


# ---------------------------------------------------------------------------
# Affine and convolution propagation (exact interval images).
# ---------------------------------------------------------------------------


def affine_interval(weight: np.ndarray, bias, lo: np.ndarray, hi: np.ndarray):
    """Exact interval image of x @ W.T + b; lo/hi may carry batch axes.

    Center/radius form: out = W mu + b -/+ |W| r.  For degenerate inputs
    (lo == hi) the center path reproduces the plain forward pass bitwise.
    """
    _count()
    if weight.shape[1] != lo.shape[-1]:
        raise ValueError(
            f"weight expects {weight.shape[1]} inputs, box has {lo.shape[-1]}"
        )
    if np.all(np.isfinite(lo)) and np.all(np.isfinite(hi)):
        mu = 0.5 * (lo + hi)
        r = 0.5 * (hi - lo)
        ctr = mu @ weight.T + bias
        rad = r @ np.abs(weight).T
        return ctr - rad, ctr + rad
    # Non-finite entries (naive path only): per-entry masked products avoid
    # 0 * inf = NaN; anything still NaN is widened to +/-inf, which is sound.
    wp = np.maximum(weight, 0.0)
    wn = np.minimum(weight, 0.0)
    with np.errstate(invalid="ignore"):
        out_lo = (
            np.where(wp > 0, wp * lo[..., None, :], 0.0).sum(-1)
            + np.where(wn < 0, wn * hi[..., None, :], 0.0).sum(-1)
            + bias
        )
        out_hi = (
            np.where(wp > 0, wp * hi[..., None, :], 0.0).sum(-1)
            + np.where(wn < 0, wn * lo[..., None, :], 0.0).sum(-1)
            + bias
        )
    out_lo = np.where(np.isnan(out_lo), -np.inf, out_lo)
    out_hi = np.where(np.isnan(out_hi), np.inf, out_hi)
    return out_lo, out_hi


def affine_ibp(weight: np.ndarray, bias: np.ndarray, box: BoxBounds) -> BoxBounds:
    """Exact interval image of an affine layer over a box."""
    lo, hi = affine_interval(np.asarray(weight, float), np.asarray(bias, float), box.lo, box.hi)
    return BoxBounds(lo, hi)


def conv_patch_indices(in_shape, kernel_shape, stride: int, padding: int):
    """Gather indices turning a padded image into convolution patches.

    Returns (padded_shape, flat_indices, out_hw) where flat_indices has shape
    (out_h*out_w, in_c*kh*kw) into the flattened padded image.
    """
    c, h, w = in_shape
    kh, kw = kernel_shape
    ph, pw = h + 2 * padding, w + 2 * padding
    out_h = (ph - kh) // stride + 1
    out_w = (pw - kw) // stride + 1
    if out_h <= 0 or out_w <= 0:
        raise ValueError(f"kernel {kernel_shape} does not fit input {in_shape}")
    idx = np.arange(c * ph * pw).reshape(c, ph, pw)
    patches = np.empty((out_h * out_w, c * kh * kw), dtype=np.intp)
    p = 0
    for i in range(out_h):
        for j in range(out_w):
            si, sj = i * stride, j * stride
            patches[p] = idx[:, si : si + kh, sj : sj + kw].ravel()
            p += 1
    return (c, ph, pw), patches, (out_h, out_w)


def conv_im2col(x: np.ndarray, in_shape, kernel_shape, stride: int, padding: int) -> np.ndarray:
    """(B, c*h*w) -> (B, out_h*out_w, c*kh*kw) patch matrix with zero padding."""
    b = x.shape[0]
    c, h, w = in_shape
    (pc, ph, pw), patches, _ = conv_patch_indices(in_shape, kernel_shape, stride, padding)
    padded = np.zeros((b, pc, ph, pw))
    padded[:, :, padding : padding + h, padding : padding + w] = x.reshape(b, c, h, w)
    return padded.reshape(b, -1)[:, patches]


def conv_col2im(dcols: np.ndarray, in_shape, kernel_shape, stride: int, padding: int) -> np.ndarray:
    """Adjoint of conv_im2col: scatter patch gradients back to (B, c*h*w)."""
    b = dcols.shape[0]
    c, h, w = in_shape
    (pc, ph, pw), patches, _ = conv_patch_indices(in_shape, kernel_shape, stride, padding)
    padded = np.zeros((b, pc * ph * pw))
    np.add.at(padded, (slice(None), patches), dcols)
    padded = padded.reshape(b, pc, ph, pw)
    return padded[:, :, padding : padding + h, padding : padding + w].reshape(b, -1)


def conv_forward(x: np.ndarray, kernel: np.ndarray, bias: np.ndarray,
                 stride: int, padding: int, in_shape) -> np.ndarray:
    """Convolution on flattened inputs; output flattened as (out_c, out_h, out_w)."""
    oc = kernel.shape[0]
    cols = conv_im2col(x, in_shape, kernel.shape[2:], stride, padding)
    out = cols @ kernel.reshape(oc, -1).T  # (B, L, oc)
    out = out + bias
    return np.ascontiguousarray(out.transpose(0, 2, 1)).reshape(x.shape[0], -1)


def conv_interval(kernel: np.ndarray, bias, stride: int, padding: int, in_shape,
                  lo: np.ndarray, hi: np.ndarray):
    """Exact interval image of a convolution; same rule as affine_interval.

    Zero padding contributes exact zeros to both center and radius.
    """
    _count()
    squeeze = lo.ndim == 1
    lo2 = np.atleast_2d(lo)
    hi2 = np.atleast_2d(hi)
    mu = 0.5 * (lo2 + hi2)
    r = 0.5 * (hi2 - lo2)
    oc = kernel.shape[0]
    km = kernel.reshape(oc, -1).T
    ctr = conv_im2col(mu, in_shape, kernel.shape[2:], stride, padding) @ km + bias
    rad = conv_im2col(r, in_shape, kernel.shape[2:], stride, padding) @ np.abs(km)
    out_lo = np.ascontiguousarray((ctr - rad).transpose(0, 2, 1)).reshape(lo2.shape[0], -1)
    out_hi = np.ascontiguousarray((ctr + rad).transpose(0, 2, 1)).reshape(lo2.shape[0], -1)
    if squeeze:
        return out_lo[0], out_hi[0]
    return out_lo, out_hi


def conv_ibp(kernel, bias, stride: int, padding: int, in_shape, box: BoxBounds) -> BoxBounds:
    """Exact interval image of a conv layer over a box (unrolled-affine semantics)."""
    c, h, w = in_shape
    if box.lo.size != c * h * w:
        raise ValueError(f"box size {box.lo.size} does not match input shape {in_shape}")
    lo, hi = conv_interval(np.asarray(kernel, float), np.asarray(bias, float),
                           stride, padding, in_shape, box.lo, box.hi)
    return BoxBounds(lo, hi)


# ---------------------------------------------------------------------------
# Bernstein activation layers.
# ---------------------------------------------------------------------------


def _clip_to_domain(lo, hi, dom_lo, dom_hi, warn: bool):
    a = np.clip(lo, dom_lo, dom_hi)
    b = np.clip(hi, dom_lo, dom_hi)
    if warn:
        scale = 1e-9 * (1.0 + np.maximum(np.abs(dom_lo), np.abs(dom_hi)))
        if np.any(lo < dom_lo - scale) or np.any(hi > dom_hi + scale):
            warnings.warn(
                "query box exceeds stored activation domain; clipping to it",
                DomainClipWarning,
                stacklevel=3,
            )
    return a, b


def bern_global_enclosure(coeffs: np.ndarray) -> BoxBounds:
    """Per-neuron coefficient range [min_k c, max_k c]; O(n) per neuron.

    Valid for any input inside the polynomial's stored domain, independent of
    the query box.
    """
    _count()
    coeffs = np.asarray(coeffs, dtype=np.float64)
    return BoxBounds(coeffs.min(axis=-1), coeffs.max(axis=-1))


def refined_enclosure_interval(coeffs, stored_lo, stored_hi, lo, hi):
    """Refined per-neuron output bounds over a (possibly batched) box.

    Restricts each polynomial to the clipped incoming interval by two splits
    and takes the coefficient range, then intersects with the global
    coefficient range (a sound, strictly-no-wider bound).
    """
    _count()
    a, b = _clip_to_domain(lo, hi, stored_lo, stored_hi, warn=True)
    width = stored_hi - stored_lo
    tau1 = (a - stored_lo) / width
    right = right_part(coeffs, tau1)
    den = stored_hi - a
    tau2 = np.where(den > 0, (b - a) / np.where(den > 0, den, 1.0), 0.0)
    sub = left_part(right, tau2)
    out_lo = sub.min(axis=-1)
    out_hi = sub.max(axis=-1)
    gmin = np.asarray(coeffs).min(axis=-1)
    gmax = np.asarray(coeffs).max(axis=-1)
    out_lo = np.maximum(out_lo, gmin)
    out_hi = np.minimum(out_hi, gmax)
    if not (np.all(np.isfinite(out_lo)) and np.all(np.isfinite(out_hi))):
        raise FloatingPointError("refined enclosure produced a non-finite bound")
    return out_lo, out_hi


def bern_refined_enclosure(coeffs, stored_lo, stored_hi, box: BoxBounds) -> BoxBounds:
    """BoxBounds wrapper around refined_enclosure_interval."""
    lo, hi = refined_enclosure_interval(
        np.asarray(coeffs, float), np.asarray(stored_lo, float),
        np.asarray(stored_hi, float), box.lo, box.hi,
    )
    return BoxBounds(lo, hi)


def naive_enclosure_interval(coeffs, stored_lo, stored_hi, lo, hi):
    """Generic interval bounds over a (possibly batched) box.

    Clips to the stored domain (the forward clamp's exact image) and then
    interval-evaluates the polynomial without using its structure.
    """
    _count()
    a, b = _clip_to_domain(lo, hi, stored_lo, stored_hi, warn=False)
    width = stored_hi - stored_lo
    t_lo = (a - stored_lo) / width
    t_hi = (b - stored_lo) / width
    out_lo, out_hi = interval_de_casteljau(coeffs, t_lo, t_hi)
    out_lo = np.where(np.isnan(out_lo), -np.inf, out_lo)
    out_hi = np.where(np.isnan(out_hi), np.inf, out_hi)
    return out_lo, out_hi


def bern_naive_enclosure(coeffs, stored_lo, stored_hi, box: BoxBounds) -> BoxBounds:
    """BoxBounds wrapper around naive_enclosure_interval."""
    lo, hi = naive_enclosure_interval(
        np.asarray(coeffs, float), np.asarray(stored_lo, float),
        np.asarray(stored_hi, float), box.lo, box.hi,
    )
    return BoxBounds(lo, hi)


def bern_point_eval(coeffs, stored_lo, stored_hi, x):
    """Clamped polynomial evaluation, shared by forward passes and tests."""
    xc = np.clip(x, stored_lo, stored_hi)
    t = (xc - stored_lo) / (stored_hi - stored_lo)
    return de_casteljau(coeffs, t)
