"""Incomplete certification: global and local checks, robustness margins,
certified accuracy, and the refined-vs-naive comparison harness.

CERTIFIED answers are always sound; UNKNOWN is inconclusive.  Falsification
is never claimed here; a separate PGD search reports concrete attacks and
doubles as the upper bound on certified accuracy.

Margins bound (target logit - other logit) jointly by merging the final-layer
rows before the last propagation step, which is strictly tighter than
subtracting independently propagated logit bounds.  Samples are processed in
fixed-size chunks so results are bit-identical regardless of pool size.
"""

from __future__ import annotations

import csv
import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import bounds as B
from .network import AffineLayer, BernLayer, Conv2dLayer, Network
from .training import loss_and_input_grad

CERTIFIED = "CERTIFIED"
UNKNOWN = "UNKNOWN"
METHODS = ("bern_ibp", "naive_ibp")

# Fixed certification chunk: results must not depend on the pool size.
_CHUNK = 256


@dataclass(frozen=True)
class CertResult:
    verdict: str
    margin: float
    method: str
    elapsed: float

    def __post_init__(self) -> None:
        expect = CERTIFIED if self.margin > 0 else UNKNOWN
        if self.verdict != expect:
            raise ValueError(f"verdict {self.verdict} inconsistent with margin {self.margin}")

    @classmethod
    def from_margin(cls, margin: float, method: str, elapsed: float) -> "CertResult":
        return cls(CERTIFIED if margin > 0 else UNKNOWN, float(margin), method, elapsed)


def _propagate_boxes(net: Network, lo: np.ndarray, hi: np.ndarray,
                     method: str, n_layers: int):
    """Push batched boxes through the first n_layers layers."""
    for layer in net.layers[:n_layers]:
        if isinstance(layer, AffineLayer):
            lo, hi = B.affine_interval(layer.weight, layer.bias, lo, hi)
        elif isinstance(layer, Conv2dLayer):
            lo, hi = B.conv_interval(layer.kernel, layer.bias, layer.stride,
                                     layer.padding, layer.in_shape, lo, hi)
        elif method == "bern_ibp":
            lo, hi = B.refined_enclosure_interval(layer.coeffs, layer.stored_lo,
                                                  layer.stored_hi, lo, hi)
        else:
            lo, hi = B.naive_enclosure_interval(layer.coeffs, layer.stored_lo,
                                                layer.stored_hi, lo, hi)
    return lo, hi


def _merged_upper(weight: np.ndarray, bias: np.ndarray, y: np.ndarray,
                  lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    """Per-sample upper bounds of (logit_i - logit_y) over the box."""
    wm = weight[None, :, :] - weight[y][:, None, :]
    bm = bias[None, :] - bias[y][:, None]
    if np.all(np.isfinite(lo)) and np.all(np.isfinite(hi)):
        mu = 0.5 * (lo + hi)
        r = 0.5 * (hi - lo)
        return (np.einsum("bcp,bp->bc", wm, mu)
                + np.einsum("bcp,bp->bc", np.abs(wm), r) + bm)
    wp = np.maximum(wm, 0.0)
    wn = np.minimum(wm, 0.0)
    with np.errstate(invalid="ignore"):
        ub = (np.where(wp > 0, wp * hi[:, None, :], 0.0).sum(-1)
              + np.where(wn < 0, wn * lo[:, None, :], 0.0).sum(-1) + bm)
    return np.where(np.isnan(ub), np.inf, ub)


def robust_margins(net: Network, x: np.ndarray, targets: np.ndarray,
                   epsilon: float, method: str = "bern_ibp") -> np.ndarray:
    """Lower bounds on min_{i != t} (logit_t - logit_i) over the l-inf ball.

    The ball is intersected with the input domain before propagation.  The
    naive method may legitimately return -inf for deep or high-order nets.
    """
    if method not in METHODS:
        raise ValueError(f"method must be one of {METHODS}, got {method!r}")
    if epsilon < 0:
        raise ValueError("epsilon must be non-negative")
    final = net.layers[-1]
    if not isinstance(final, AffineLayer):
        raise ValueError("robustness margins need a final affine (logit) layer")
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    targets = np.atleast_1d(np.asarray(targets))
    lo = np.clip(x - epsilon, net.input_lo, net.input_hi)
    hi = np.clip(x + epsilon, net.input_lo, net.input_hi)
    lo, hi = _propagate_boxes(net, lo, hi, method, len(net.layers) - 1)
    ub = _merged_upper(final.weight, final.bias, targets, lo, hi)
    ub[np.arange(len(targets)), targets] = -np.inf
    return -ub.max(axis=1)


def robust_margin(net: Network, x: np.ndarray, epsilon: float, target: int,
                  method: str = "bern_ibp") -> float:
    """Single-sample robustness margin; positive certifies the target class."""
    return float(robust_margins(net, x, np.array([target]), epsilon, method)[0])


def certify_global(net: Network) -> CertResult:
    """Certify output > 0 over the whole input domain.

    With a final Bernstein layer the stored coefficients already bound the
    outputs over the full domain, so the check reads only that layer and
    performs no propagation at all.  Otherwise falls back to one refined
    propagation over the input domain.
    """
    t0 = time.perf_counter()
    final = net.layers[-1]
    if isinstance(final, BernLayer):
        margin = float(final.coeffs.min())
        return CertResult.from_margin(margin, "bern_ibp", time.perf_counter() - t0)
    return certify_local(net, net.input_domain)


def certify_local(net: Network, box: B.BoxBounds) -> CertResult:
    """Certify output > 0 over a sub-box via refined propagation."""
    t0 = time.perf_counter()
    lo = np.clip(box.lo, net.input_lo, net.input_hi)
    hi = np.clip(box.hi, net.input_lo, net.input_hi)
    out_lo, _ = _propagate_boxes(net, lo[None, :], hi[None, :], "bern_ibp",
                                 len(net.layers))
    margin = float(out_lo.min())
    return CertResult.from_margin(margin, "bern_ibp", time.perf_counter() - t0)


# --- dataset-level certification -------------------------------------------------


@dataclass
class CertifiedAccuracy:
    accuracy: float
    margins: np.ndarray
    predictions: np.ndarray
    certified: np.ndarray
    epsilon: float
    method: str
    elapsed: float


def _chunked(n: int):
    return [slice(s, min(s + _CHUNK, n)) for s in range(0, n, _CHUNK)]


def _run_chunks(fn, n: int, threads: int):
    slices = _chunked(n)
    if threads <= 1 or len(slices) <= 1:
        return [fn(s) for s in slices]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, slices))


def certified_accuracy(net: Network, x: np.ndarray, y: np.ndarray, epsilon: float,
                       method: str = "bern_ibp", threads: int = 1) -> CertifiedAccuracy:
    """Fraction of samples that are correctly classified and certified robust.

    Also returns the per-sample margin distribution, the raw material for
    tightness plots and tables.
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y = np.asarray(y)
    t0 = time.perf_counter()

    def work(s: slice):
        preds = net.forward(x[s]).argmax(axis=1)
        margins = robust_margins(net, x[s], y[s], epsilon, method)
        return preds, margins

    parts = _run_chunks(work, len(x), threads)
    preds = np.concatenate([p for p, _ in parts])
    margins = np.concatenate([m for _, m in parts])
    certified = (preds == y) & (margins > 0)
    return CertifiedAccuracy(float(certified.mean()), margins, preds, certified,
                             epsilon, method, time.perf_counter() - t0)


def pgd_upper_bound_accuracy(net: Network, x: np.ndarray, y: np.ndarray,
                             epsilon: float, steps: int = 100,
                             step_size: float | None = None) -> float:
    """Fraction of samples whose label survives every PGD iterate.

    Sound upper bound on certified accuracy at the same radius: a certified
    sample cannot be flipped by any point of the ball, iterates included.
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y = np.asarray(y)
    robust = net.forward(x).argmax(axis=1) == y
    if epsilon <= 0 or steps <= 0:
        return float(robust.mean())
    if step_size is None:
        step_size = 2.5 * epsilon / steps
    lo = np.maximum(x - epsilon, net.input_lo)
    hi = np.minimum(x + epsilon, net.input_hi)
    _, g = loss_and_input_grad(net, x, y)
    adv = x
    for _ in range(steps):
        adv = np.clip(adv + step_size * np.sign(g), lo, hi)
        logits, g = loss_and_input_grad(net, adv, y)
        robust &= logits.argmax(axis=1) == y
    return float(robust.mean())


# --- comparison harness and reports ----------------------------------------------


@dataclass
class MarginComparison:
    epsilon: float
    margins_bern: np.ndarray
    margins_naive: np.ndarray
    predictions: np.ndarray
    time_bern: float
    time_naive: float


def compare_margins(net: Network, x: np.ndarray, y: np.ndarray, epsilon: float,
                    threads: int = 1) -> MarginComparison:
    """Per-sample refined vs naive margins at one radius."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y = np.asarray(y)
    preds_parts = _run_chunks(lambda s: net.forward(x[s]).argmax(axis=1), len(x), threads)
    t0 = time.perf_counter()
    bern_parts = _run_chunks(lambda s: robust_margins(net, x[s], y[s], epsilon, "bern_ibp"),
                             len(x), threads)
    t1 = time.perf_counter()
    naive_parts = _run_chunks(lambda s: robust_margins(net, x[s], y[s], epsilon, "naive_ibp"),
                              len(x), threads)
    t2 = time.perf_counter()
    return MarginComparison(epsilon,
                            np.concatenate(bern_parts),
                            np.concatenate(naive_parts),
                            np.concatenate(preds_parts),
                            t1 - t0, t2 - t1)


def margin_summary(m: np.ndarray) -> dict:
    finite = m[np.isfinite(m)]
    return {
        "mean": float(finite.mean()) if finite.size else float("-inf"),
        "median": float(np.median(m)) if np.all(np.isfinite(m)) else float(np.median(m)),
        "min": float(m.min()),
        "max": float(m.max()),
        "frac_positive": float((m > 0).mean()),
        "n_neg_inf": int(np.sum(np.isneginf(m))),
    }


def write_comparison_csv(path, y: np.ndarray, comparisons: list[MarginComparison]) -> None:
    """Experiment harness output: one row per (sample, epsilon)."""
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["sample_id", "label", "prediction", "epsilon",
                    "margin_bern", "margin_naive", "verdict_bern", "verdict_naive",
                    "time_bern", "time_naive"])
        for comp in comparisons:
            n = len(comp.margins_bern)
            tb = comp.time_bern / n
            tn = comp.time_naive / n
            for i in range(n):
                mb, mn = comp.margins_bern[i], comp.margins_naive[i]
                w.writerow([i, int(y[i]), int(comp.predictions[i]), repr(comp.epsilon),
                            repr(float(mb)), repr(float(mn)),
                            CERTIFIED if mb > 0 else UNKNOWN,
                            CERTIFIED if mn > 0 else UNKNOWN,
                            repr(tb), repr(tn)])


def write_certification_csv(path, y: np.ndarray, results: list[CertifiedAccuracy]) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["sample_id", "label", "prediction", "epsilon", "method",
                    "margin", "verdict", "time"])
        for res in results:
            per = res.elapsed / max(len(res.margins), 1)
            for i, m in enumerate(res.margins):
                w.writerow([i, int(y[i]), int(res.predictions[i]), repr(res.epsilon),
                            res.method, repr(float(m)),
                            CERTIFIED if res.certified[i] else UNKNOWN, repr(per)])


def certification_summary(results: list[CertifiedAccuracy],
                          pgd_ub: dict[float, float] | None = None) -> dict:
    out: dict = {"results": []}
    for res in results:
        entry = {
            "epsilon": res.epsilon,
            "method": res.method,
            "certified_acc": res.accuracy,
            "margins": margin_summary(res.margins),
            "timing": {
                "total_s": res.elapsed,
                "per_sample_s": res.elapsed / max(len(res.margins), 1),
            },
        }
        if pgd_ub is not None and res.epsilon in pgd_ub:
            entry["pgd_upper_bound_acc"] = pgd_ub[res.epsilon]
        out["results"].append(entry)
    return out


def write_summary_json(path, summary: dict) -> None:
    with open(path, "w") as f:
        json.dump(summary, f, indent=2, sort_keys=True)
        f.write("\n")
