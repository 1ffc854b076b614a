"""Hand-written backpropagation, optimizers, and the three training regimes.

No autodiff: every layer type has an explicit forward cache and backward
rule.  The certified regime additionally backpropagates through the box
propagation itself (affine interval arithmetic, and the de Casteljau
subdivision triangles at activation layers), routing min/max gradients to the
extremal coefficient and detaching the stored activation domains, which are
recomputed from scratch each step anyway.

Activation gradients are intrinsically bounded: the coefficient gradient is a
basis value in [0, 1] and the input gradient is limited by the coefficient
magnitudes, so training is stable at any polynomial order.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, fields

import numpy as np

from . import bounds as B
from .bernstein import basis_values, de_casteljau, left_part, right_part
from .network import AffineLayer, BernLayer, Conv2dLayer, Network

REGIMES = ("plain", "pgd", "certified")


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss or gradient."""


# --- losses -------------------------------------------------------------------


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def softmax_cross_entropy(logits: np.ndarray, y: np.ndarray):
    """Mean cross-entropy and its gradient w.r.t. the logits."""
    n = logits.shape[0]
    logp = _log_softmax(logits)
    loss = -logp[np.arange(n), y].mean()
    d = np.exp(logp)
    d[np.arange(n), y] -= 1.0
    return loss, d / n


def per_sample_cross_entropy(logits: np.ndarray, y: np.ndarray) -> np.ndarray:
    return -_log_softmax(logits)[np.arange(logits.shape[0]), y]


def mse(pred: np.ndarray, target: np.ndarray):
    """Mean squared error and gradient (regression heads, e.g. controllers)."""
    diff = pred - target
    return float(np.mean(diff**2)), 2.0 * diff / diff.size


# --- forward/backward ----------------------------------------------------------


def _forward_with_caches(net: Network, x: np.ndarray):
    caches = []
    h = x
    for layer in net.layers:
        if isinstance(layer, AffineLayer):
            caches.append(("affine", layer, h))
            h = h @ layer.weight.T + layer.bias
        elif isinstance(layer, Conv2dLayer):
            cols = B.conv_im2col(h, layer.in_shape, layer.kernel.shape[2:],
                                 layer.stride, layer.padding)
            caches.append(("conv", layer, cols))
            oc = layer.kernel.shape[0]
            out = cols @ layer.kernel.reshape(oc, -1).T + layer.bias
            h = np.ascontiguousarray(out.transpose(0, 2, 1)).reshape(h.shape[0], -1)
        else:
            lo, hi = layer.stored_lo, layer.stored_hi
            mask = (h >= lo) & (h <= hi)
            t = (np.clip(h, lo, hi) - lo) / (hi - lo)
            caches.append(("bern", layer, t, mask))
            h = de_casteljau(layer.coeffs, t)
    return h, caches


def _bern_derivative_values(layer: BernLayer, t: np.ndarray) -> np.ndarray:
    n = layer.order
    if n == 0:
        return np.zeros_like(t)
    width = layer.stored_hi - layer.stored_lo
    dcoeffs = n * np.diff(layer.coeffs, axis=1) / width[:, None]
    return de_casteljau(dcoeffs, t)


def _backward_through(net: Network, caches, dh: np.ndarray, want_params: bool = True):
    """Reverse pass; returns (per-layer grad dicts or None, input gradient)."""
    grads = [None] * len(net.layers) if want_params else None
    for idx in range(len(caches) - 1, -1, -1):
        entry = caches[idx]
        kind, layer = entry[0], entry[1]
        if kind == "affine":
            x_in = entry[2]
            if want_params:
                grads[idx] = {"weight": dh.T @ x_in, "bias": dh.sum(axis=0)}
            dh = dh @ layer.weight
        elif kind == "conv":
            cols = entry[2]
            oc = layer.kernel.shape[0]
            L = cols.shape[1]
            dout = dh.reshape(dh.shape[0], oc, L).transpose(0, 2, 1)  # (B, L, oc)
            km = layer.kernel.reshape(oc, -1)
            if want_params:
                dkm = np.einsum("blc,blo->oc", cols, dout)
                grads[idx] = {"kernel": dkm.reshape(layer.kernel.shape),
                              "bias": dout.sum(axis=(0, 1))}
            dcols = dout @ km
            dh = B.conv_col2im(dcols, layer.in_shape, layer.kernel.shape[2:],
                               layer.stride, layer.padding)
        else:
            t, mask = entry[2], entry[3]
            if want_params:
                basis = basis_values(layer.order, t)
                grads[idx] = {"coeffs": np.einsum("bm,bmk->mk", dh, basis)}
            dh = dh * _bern_derivative_values(layer, t) * mask
    return grads, dh


@dataclass
class GradientSet:
    """Per-layer gradient arrays, shaped exactly like the network parameters."""

    layers: list[dict[str, np.ndarray] | None]

    @classmethod
    def zeros_for(cls, net: Network) -> "GradientSet":
        out: list[dict[str, np.ndarray]] = []
        per_layer: dict[int, dict[str, np.ndarray]] = {}
        for i, name, arr in net.parameters():
            per_layer.setdefault(i, {})[name] = np.zeros_like(arr)
        return cls([per_layer.get(i) for i in range(len(net.layers))])

    def add_scaled(self, other: "GradientSet", scale: float) -> "GradientSet":
        for mine, theirs in zip(self.layers, other.layers):
            if theirs is None:
                continue
            for name, arr in theirs.items():
                mine[name] += scale * arr
        return self

    def check_finite(self, context: str = "") -> None:
        for i, layer in enumerate(self.layers):
            if layer is None:
                continue
            for name, arr in layer.items():
                if not np.all(np.isfinite(arr)):
                    raise DivergenceError(
                        f"non-finite gradient for layer {i} {name}"
                        + (f" ({context})" if context else "")
                    )

    def max_abs(self) -> float:
        vals = [np.abs(a).max() for layer in self.layers if layer
                for a in layer.values() if a.size]
        return float(max(vals)) if vals else 0.0


def backward(net: Network, x: np.ndarray, y: np.ndarray, loss_kind: str = "ce"):
    """Loss and parameter gradients for a batch (mean reduction).

    loss_kind 'ce' expects integer class labels, 'mse' expects target vectors.
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    logits, caches = _forward_with_caches(net, x)
    if loss_kind == "ce":
        loss, dlogits = softmax_cross_entropy(logits, np.asarray(y))
    elif loss_kind == "mse":
        loss, dlogits = mse(logits, np.atleast_2d(np.asarray(y, dtype=np.float64)))
    else:
        raise ValueError(f"unknown loss kind {loss_kind!r}")
    if not np.isfinite(loss):
        raise DivergenceError(f"non-finite loss {loss}")
    layer_grads, _ = _backward_through(net, caches, dlogits)
    grads = GradientSet(layer_grads)
    grads.check_finite()
    return loss, grads


def loss_and_input_grad(net: Network, x: np.ndarray, y: np.ndarray):
    """Logits and the gradient of the mean CE w.r.t. the input (one pass)."""
    logits, caches = _forward_with_caches(net, x)
    _, dlogits = softmax_cross_entropy(logits, y)
    _, dx = _backward_through(net, caches, dlogits, want_params=False)
    return logits, dx


# --- Adam ----------------------------------------------------------------------


@dataclass
class AdamState:
    m: list[dict[str, np.ndarray] | None]
    v: list[dict[str, np.ndarray] | None]
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_network(cls, net: Network) -> "AdamState":
        return cls(GradientSet.zeros_for(net).layers,
                   GradientSet.zeros_for(net).layers)


def adam_step(net: Network, grads: GradientSet, state: AdamState, lr: float,
              weight_decay: float = 0.0) -> None:
    """One Adam update, in place; deterministic given the state.

    weight_decay is decoupled (applied directly to the parameters) and skips
    biases.
    """
    state.step += 1
    bc1 = 1.0 - state.beta1**state.step
    bc2 = 1.0 - state.beta2**state.step
    for i, name, arr in net.parameters():
        g = grads.layers[i][name]
        m = state.m[i][name]
        v = state.v[i][name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        arr -= lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
        if weight_decay and name != "bias":
            arr -= lr * weight_decay * arr


# --- PGD -----------------------------------------------------------------------


def pgd_attack(net: Network, x: np.ndarray, y: np.ndarray, epsilon: float,
               steps: int, step_size: float | None = None) -> np.ndarray:
    """Sign-gradient ascent on cross-entropy inside the l-inf ball.

    The ball is intersected with the network input domain; the attack starts
    at the clean input and keeps the per-sample worst iterate, so the
    returned batch never has lower loss than the input.
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if epsilon == 0.0 or steps == 0:
        return x.copy()
    if step_size is None:
        step_size = 2.5 * epsilon / steps
    lo = np.maximum(x - epsilon, net.input_lo)
    hi = np.minimum(x + epsilon, net.input_hi)
    logits, g = loss_and_input_grad(net, x, y)
    best = per_sample_cross_entropy(logits, y)
    best_x = x.copy()
    adv = x
    for _ in range(steps):
        adv = np.clip(adv + step_size * np.sign(g), lo, hi)
        logits, g = loss_and_input_grad(net, adv, y)
        losses = per_sample_cross_entropy(logits, y)
        improved = losses > best
        best_x[improved] = adv[improved]
        best = np.maximum(best, losses)
    return best_x


# --- certified loss --------------------------------------------------------------
#
# The robust term propagates the perturbation box layer by layer, with a tape
# of everything the backward pass needs.  Subdivision triangles are linear in
# the coefficients and smooth in the split points, so gradients flow through
# both; clip subgradients are zero outside the stored domain.


def _split_backward(levels, tau, dout, diagonal: bool):
    """Backward through right_part (diagonal=False) or left_part (True)."""
    n = levels[0].shape[-1] - 1
    om = (1.0 - tau)[..., None]
    tt = tau[..., None]
    dlev = np.zeros_like(levels[0])
    dtau = np.zeros(tau.shape)
    for k in range(n, 0, -1):
        if diagonal:
            dlev[..., k] += dout[..., k]
        else:
            dlev[..., n] += dout[..., n - k]
        g = dlev[..., k:]
        prev = levels[k - 1]
        dtau += ((prev[..., k:] - prev[..., k - 1 : n]) * g).sum(axis=-1)
        dprev = np.zeros_like(dlev)
        dprev[..., :k] = dlev[..., :k]
        dprev[..., k - 1 : n] += om * g
        dprev[..., k:] += tt * g
        dlev = dprev
    if diagonal:
        dlev[..., 0] += dout[..., 0]
    else:
        dlev[..., n] += dout[..., n]
    return dlev, dtau


def _robust_forward(net: Network, lo: np.ndarray, hi: np.ndarray):
    """Propagate a batch of boxes through all layers but the last; keep a tape."""
    tape = []
    for layer in net.layers[:-1]:
        if isinstance(layer, AffineLayer):
            mu = 0.5 * (lo + hi)
            r = 0.5 * (hi - lo)
            ctr = mu @ layer.weight.T + layer.bias
            rad = r @ np.abs(layer.weight).T
            tape.append(("affine", layer, mu, r))
            lo, hi = ctr - rad, ctr + rad
        elif isinstance(layer, Conv2dLayer):
            mu = 0.5 * (lo + hi)
            r = 0.5 * (hi - lo)
            kshape = layer.kernel.shape[2:]
            oc = layer.kernel.shape[0]
            km = layer.kernel.reshape(oc, -1)
            mu_cols = B.conv_im2col(mu, layer.in_shape, kshape, layer.stride, layer.padding)
            r_cols = B.conv_im2col(r, layer.in_shape, kshape, layer.stride, layer.padding)
            ctr = mu_cols @ km.T + layer.bias
            rad = r_cols @ np.abs(km).T
            nb = lo.shape[0]
            tape.append(("conv", layer, mu_cols, r_cols))
            lo = np.ascontiguousarray((ctr - rad).transpose(0, 2, 1)).reshape(nb, -1)
            hi = np.ascontiguousarray((ctr + rad).transpose(0, 2, 1)).reshape(nb, -1)
        else:
            dl, du = layer.stored_lo, layer.stored_hi
            mask_a = (lo >= dl) & (lo <= du)
            mask_b = (hi >= dl) & (hi <= du)
            a = np.clip(lo, dl, du)
            b = np.clip(hi, dl, du)
            width = du - dl
            tau1 = (a - dl) / width
            right, lev1 = right_part(layer.coeffs, tau1, keep_levels=True)
            den = du - a
            safe = np.where(den > 0, den, 1.0)
            tau2 = np.where(den > 0, (b - a) / safe, 0.0)
            sub, lev2 = left_part(right, tau2, keep_levels=True)
            imin = np.argmin(sub, axis=-1)
            imax = np.argmax(sub, axis=-1)
            tape.append(("bern", layer, tau1, tau2, lev1, lev2, imin, imax,
                         mask_a, mask_b, width, safe, den, b, du))
            lo = np.take_along_axis(sub, imin[..., None], axis=-1)[..., 0]
            hi = np.take_along_axis(sub, imax[..., None], axis=-1)[..., 0]
    if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
        raise DivergenceError("non-finite bound in certified-loss propagation")
    return lo, hi, tape


def _robust_backward(net: Network, tape, dlo: np.ndarray, dhi: np.ndarray,
                     grads: GradientSet, scale: float) -> None:
    """Accumulate scale * d(robust term)/d(params) into grads."""
    for idx in range(len(tape) - 1, -1, -1):
        entry = tape[idx]
        kind, layer = entry[0], entry[1]
        if kind == "affine":
            mu, r = entry[2], entry[3]
            dc = dlo + dhi
            dr = dhi - dlo
            g = grads.layers[idx]
            g["weight"] += scale * (dc.T @ mu + np.sign(layer.weight) * (dr.T @ r))
            g["bias"] += scale * dc.sum(axis=0)
            dmu = dc @ layer.weight
            drr = dr @ np.abs(layer.weight)
            dlo = 0.5 * (dmu - drr)
            dhi = 0.5 * (dmu + drr)
        elif kind == "conv":
            mu_cols, r_cols = entry[2], entry[3]
            oc = layer.kernel.shape[0]
            L = mu_cols.shape[1]
            nb = dlo.shape[0]
            dc = (dlo + dhi).reshape(nb, oc, L).transpose(0, 2, 1)
            dr = (dhi - dlo).reshape(nb, oc, L).transpose(0, 2, 1)
            km = layer.kernel.reshape(oc, -1)
            dkm = np.einsum("blc,blo->oc", mu_cols, dc)
            dkm += np.sign(km) * np.einsum("blc,blo->oc", r_cols, dr)
            g = grads.layers[idx]
            g["kernel"] += scale * dkm.reshape(layer.kernel.shape)
            g["bias"] += scale * dc.sum(axis=(0, 1))
            dmu_cols = dc @ km
            dr_cols = dr @ np.abs(km)
            kshape = layer.kernel.shape[2:]
            dmu = B.conv_col2im(dmu_cols, layer.in_shape, kshape, layer.stride, layer.padding)
            drr = B.conv_col2im(dr_cols, layer.in_shape, kshape, layer.stride, layer.padding)
            dlo = 0.5 * (dmu - drr)
            dhi = 0.5 * (dmu + drr)
        else:
            (_, _, tau1, tau2, lev1, lev2, imin, imax,
             mask_a, mask_b, width, safe, den, b, du) = entry
            dsub = np.zeros_like(lev2[0])
            np.put_along_axis(dsub, imin[..., None], dlo[..., None], axis=-1)
            cur = np.take_along_axis(dsub, imax[..., None], axis=-1)
            np.put_along_axis(dsub, imax[..., None], cur + dhi[..., None], axis=-1)
            dright, dtau2 = _split_backward(lev2, tau2, dsub, diagonal=True)
            dcoeff, dtau1 = _split_backward(lev1, tau1, dright, diagonal=False)
            grads.layers[idx]["coeffs"] += scale * dcoeff.sum(axis=0)
            live = den > 0
            da = dtau1 / width + np.where(live, dtau2 * (b - du) / safe**2, 0.0)
            db = np.where(live, dtau2 / safe, 0.0)
            dlo = da * mask_a
            dhi = db * mask_b


def _merged_margin_upper(net: Network, lo: np.ndarray, hi: np.ndarray, y: np.ndarray):
    """Upper bounds of (logit_i - logit_y) via merged final-layer rows."""
    final = net.layers[-1]
    if not isinstance(final, AffineLayer):
        raise ValueError("certified loss requires a final affine layer")
    w, bias = final.weight, final.bias
    wm = w[None, :, :] - w[y][:, None, :]
    bm = bias[None, :] - bias[y][:, None]
    mu = 0.5 * (lo + hi)
    r = 0.5 * (hi - lo)
    ub = np.einsum("bcp,bp->bc", wm, mu) + np.einsum("bcp,bp->bc", np.abs(wm), r) + bm
    return ub, (wm, bm, mu, r)


def _merged_margin_backward(net: Network, cache, dub: np.ndarray, y: np.ndarray,
                            grads: GradientSet, scale: float):
    wm, _, mu, r = cache
    idx = len(net.layers) - 1
    dmu = np.einsum("bc,bcp->bp", dub, wm)
    dr = np.einsum("bc,bcp->bp", dub, np.abs(wm))
    dwm = dub[:, :, None] * mu[:, None, :] + np.sign(wm) * (dub[:, :, None] * r[:, None, :])
    dw = dwm.sum(axis=0)
    np.subtract.at(dw, y, dwm.sum(axis=1))
    db = dub.sum(axis=0)
    np.subtract.at(db, y, dub.sum(axis=1))
    g = grads.layers[idx]
    g["weight"] += scale * dw
    g["bias"] += scale * db
    dlo = 0.5 * (dmu - dr)
    dhi = 0.5 * (dmu + dr)
    return dlo, dhi


def _perturbation_box(net: Network, x: np.ndarray, epsilon: float):
    lo = np.clip(x - epsilon, net.input_lo, net.input_hi)
    hi = np.clip(x + epsilon, net.input_lo, net.input_hi)
    return lo, hi


def robust_cross_entropy(net: Network, x: np.ndarray, y: np.ndarray, epsilon: float):
    """Cross-entropy of the worst-case logit-difference upper bounds.

    The true-class entry is identically zero (its merged row is the zero
    vector), matching the convention that the reference logit is proved
    against itself.
    """
    lo, hi = _perturbation_box(net, np.atleast_2d(x), epsilon)
    lo, hi, tape = _robust_forward(net, lo, hi)
    ub, cache = _merged_margin_upper(net, lo, hi, y)
    loss, dub = softmax_cross_entropy(ub, y)
    return loss, (tape, cache, dub)


def certified_loss(net: Network, x: np.ndarray, y: np.ndarray,
                   epsilon: float, lam: float) -> float:
    """Blended objective: (1 - lam) * clean CE + lam * robust CE."""
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"lambda must lie in [0, 1], got {lam}")
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    loss_ce, _ = softmax_cross_entropy(net.forward(x), y)
    if lam == 0.0:
        return float(loss_ce)
    loss_rce, _ = robust_cross_entropy(net, x, y, epsilon)
    return float((1.0 - lam) * loss_ce + lam * loss_rce)


def certified_backward(net: Network, x: np.ndarray, y: np.ndarray,
                       epsilon: float, lam: float):
    """Loss and gradients of the blended certified objective."""
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"lambda must lie in [0, 1], got {lam}")
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y = np.asarray(y)
    logits, caches = _forward_with_caches(net, x)
    loss_ce, dlogits = softmax_cross_entropy(logits, y)
    if lam == 0.0:
        layer_grads, _ = _backward_through(net, caches, dlogits)
        grads = GradientSet(layer_grads)
        grads.check_finite("clean term")
        return float(loss_ce), grads
    grads = GradientSet.zeros_for(net)
    if lam < 1.0:
        layer_grads, _ = _backward_through(net, caches, dlogits)
        grads.add_scaled(GradientSet(layer_grads), 1.0 - lam)
    loss_rce, (tape, cache, dub) = robust_cross_entropy(net, x, y, epsilon)
    dlo, dhi = _merged_margin_backward(net, cache, dub, y, grads, lam)
    _robust_backward(net, tape, dlo, dhi, grads, lam)
    loss = (1.0 - lam) * loss_ce + lam * loss_rce
    if not np.isfinite(loss):
        raise DivergenceError(f"non-finite certified loss {loss}")
    grads.check_finite("certified objective")
    return float(loss), grads


# --- training loop ---------------------------------------------------------------


@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 512
    learning_rate: float = 5e-3
    lr_decay: float = 0.999  # exponential, applied after lr_decay_start epochs
    lr_decay_start: int = 50
    warmup_epochs: int = 10  # epochs before the robust weight starts ramping
    lambda_max: float = 0.5  # endpoint of the linear robust-weight schedule
    epsilon: float = 0.0  # perturbation radius (pgd and certified regimes)
    regime: str = "plain"  # plain | pgd | certified
    pgd_steps: int = 100
    pgd_step_size: float | None = None  # default 2.5 * epsilon / steps
    weight_decay: float = 0.0  # decoupled decay on weights and coefficients
    loss: str = "ce"  # ce | mse (mse implies plain regime)
    seed: int = 0

    def __post_init__(self) -> None:
        if self.regime not in REGIMES:
            raise ValueError(f"regime must be one of {REGIMES}, got {self.regime!r}")
        if not 0.0 <= self.lambda_max <= 1.0:
            raise ValueError("lambda_max must lie in [0, 1]")
        if self.epsilon < 0.0:
            raise ValueError("epsilon must be non-negative")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    train_acc: float
    test_acc: float
    cert_acc: float
    lam: float
    lr: float


@dataclass
class TrainLog:
    records: list[EpochRecord] = field(default_factory=list)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["epoch", "loss", "train_acc", "test_acc",
                             "cert_acc", "lambda", "lr"])
            for r in self.records:
                writer.writerow([r.epoch, repr(r.loss), repr(r.train_acc),
                                 repr(r.test_acc), repr(r.cert_acc),
                                 repr(r.lam), repr(r.lr)])


def accuracy(net: Network, x: np.ndarray, y: np.ndarray) -> float:
    if len(x) == 0:
        return float("nan")
    return float(np.mean(net.forward(x).argmax(axis=1) == y))


def _lambda_at(cfg: TrainConfig, epoch: int) -> float:
    if cfg.regime != "certified" or epoch < cfg.warmup_epochs:
        return 0.0
    last = cfg.epochs - 1
    if last <= cfg.warmup_epochs:
        return cfg.lambda_max
    frac = (epoch - cfg.warmup_epochs) / (last - cfg.warmup_epochs)
    return cfg.lambda_max * frac


def _lr_at(cfg: TrainConfig, epoch: int) -> float:
    extra = max(0, epoch - cfg.lr_decay_start)
    return cfg.learning_rate * cfg.lr_decay**extra


def train(net: Network, train_x: np.ndarray, train_y: np.ndarray,
          config: TrainConfig, test_x: np.ndarray | None = None,
          test_y: np.ndarray | None = None,
          cert_probe: tuple[np.ndarray, np.ndarray] | None = None,
          metrics_path=None, verbose: bool = False) -> TrainLog:
    """Run the configured regime; mutates net in place and returns the log.

    Each step recomputes the stored activation domains before the forward
    pass, then updates parameters with Adam.  The certified regime ramps the
    robust weight linearly from zero (after warmup) to lambda_max at the last
    epoch and, when cert_probe is given, logs certified accuracy on it per
    epoch.  A final bound refresh runs before returning.
    """
    train_x = np.asarray(train_x, dtype=np.float64)
    rng = np.random.default_rng(config.seed)
    state = AdamState.for_network(net)
    log = TrainLog()
    n = train_x.shape[0]
    for epoch in range(config.epochs):
        lr = _lr_at(config, epoch)
        lam = _lambda_at(config, epoch)
        perm = rng.permutation(n)
        epoch_loss = 0.0
        seen = 0
        for start in range(0, n, config.batch_size):
            take = perm[start : start + config.batch_size]
            xb, yb = train_x[take], train_y[take]
            net.refresh_domain_bounds()
            try:
                if config.regime == "plain" or config.loss == "mse":
                    loss, grads = backward(net, xb, yb, loss_kind=config.loss)
                elif config.regime == "pgd":
                    xadv = pgd_attack(net, xb, yb, config.epsilon,
                                      config.pgd_steps, config.pgd_step_size)
                    loss, grads = backward(net, xadv, yb)
                else:
                    loss, grads = certified_backward(net, xb, yb, config.epsilon, lam)
            except DivergenceError as e:
                raise DivergenceError(
                    f"epoch {epoch}, batch at {start}: {e}"
                ) from None
            adam_step(net, grads, state, lr, config.weight_decay)
            epoch_loss += loss * len(take)
            seen += len(take)
        net.refresh_domain_bounds()
        if config.loss == "ce":
            train_acc = accuracy(net, train_x, train_y)
            test_acc = (accuracy(net, test_x, test_y)
                        if test_x is not None else float("nan"))
        else:
            train_acc = test_acc = float("nan")
        cert_acc = float("nan")
        if cert_probe is not None:
            from . import certify  # local import; certify depends on this module

            px, py = cert_probe
            cert_acc = certify.certified_accuracy(
                net, px, py, config.epsilon, method="bern_ibp"
            ).accuracy
        log.records.append(EpochRecord(epoch, epoch_loss / max(seen, 1),
                                       train_acc, test_acc, cert_acc, lam, lr))
        if verbose:
            r = log.records[-1]
            print(f"epoch {r.epoch:3d}  loss {r.loss:.4f}  train {r.train_acc:.3f} "
                  f"test {r.test_acc:.3f}  cert {r.cert_acc:.3f}  lam {r.lam:.3f}")
    net.refresh_domain_bounds()
    if metrics_path is not None:
        log.to_csv(metrics_path)
    return log
