"""Polynomials in Bernstein form on a closed interval.

Everything downstream (layer bounds, certification, reachability) reduces to
three facts about this representation:

* the value anywhere on the domain is a convex combination of the
  coefficients, so ``[min(c), max(c)]`` encloses the range,
* the same function on a subinterval has Bernstein coefficients produced by
  de Casteljau's recurrence, and restriction never widens the coefficient
  range,
* the derivative is again in Bernstein form, with coefficients
  ``n * (c[k+1] - c[k]) / (u - l)``.

The array kernels at the bottom operate on float64 arrays whose last axis
indexes coefficients; leading axes are arbitrary batch dimensions (layer code
uses ``(batch, neuron)``).  ``BernsteinPoly`` wraps a single coefficient
vector for scalar work.  All functions are pure; nothing here holds mutable
state.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Domains narrower than this are widened symmetrically before use; zero-width
# training bounds would otherwise make the basis normalization singular.
MIN_DOMAIN_WIDTH = 1e-12


def binomial(n: int, k: int) -> float:
    """C(n, k) via the multiplicative recurrence, in float64.

    Exactly representable (a few ulp at worst) for n <= 64, far beyond the
    polynomial orders used anywhere in this package.
    """
    if k < 0 or k > n:
        return 0.0
    k = min(k, n - k)
    out = 1.0
    for i in range(1, k + 1):
        out = out * (n - k + i) / i
    return out


@dataclass(frozen=True)
class Interval:
    """A closed, finite scalar interval [lo, hi]."""

    lo: float
    hi: float

    def __post_init__(self) -> None:
        lo, hi = float(self.lo), float(self.hi)
        if not (np.isfinite(lo) and np.isfinite(hi)):
            raise ValueError(f"interval endpoints must be finite, got [{lo}, {hi}]")
        if lo > hi:
            raise ValueError(f"interval endpoints out of order: [{lo}, {hi}]")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def width(self) -> float:
        return self.hi - self.lo

    @property
    def mid(self) -> float:
        return 0.5 * (self.lo + self.hi)

    def contains(self, x: float, tol: float = 0.0) -> bool:
        return self.lo - tol <= x <= self.hi + tol

    def contains_interval(self, other: "Interval", tol: float = 0.0) -> bool:
        return self.lo - tol <= other.lo and other.hi <= self.hi + tol


def _as_domain(domain) -> tuple[float, float]:
    """Accept an Interval or a (lo, hi) pair; widen degenerate domains."""
    if isinstance(domain, Interval):
        lo, hi = domain.lo, domain.hi
    else:
        lo, hi = float(domain[0]), float(domain[1])
    if not (np.isfinite(lo) and np.isfinite(hi)) or lo > hi:
        raise ValueError(f"invalid domain [{lo}, {hi}]")
    if hi - lo < MIN_DOMAIN_WIDTH:
        mid = 0.5 * (lo + hi)
        lo = mid - 0.5 * MIN_DOMAIN_WIDTH
        hi = mid + 0.5 * MIN_DOMAIN_WIDTH
    return lo, hi


def basis_eval(n: int, k: int, domain, x: float) -> float:
    """Value of the k-th Bernstein basis polynomial of degree n at x.

    Equals C(n,k) * (x-l)^k * (u-x)^(n-k) / (u-l)^n, computed through the
    normalized coordinate t = (x-l)/(u-l) so the two power terms cannot
    overflow for large n.
    """
    if not 0 <= k <= n:
        raise ValueError(f"basis index k={k} out of range for degree n={n}")
    lo, hi = _as_domain(domain)
    if not lo <= x <= hi:
        raise ValueError(f"x={x} outside basis domain [{lo}, {hi}]")
    t = (x - lo) / (hi - lo)
    return binomial(n, k) * t**k * (1.0 - t) ** (n - k)


@dataclass(frozen=True)
class BernsteinPoly:
    """Degree-n polynomial in Bernstein form on a fixed interval [lo, hi].

    coeffs[k] weights the k-th basis polynomial; coeffs[0] is the value at
    the left endpoint and coeffs[-1] the value at the right endpoint.
    Instances are immutable and safe to share across threads.
    """

    coeffs: np.ndarray
    lo: float
    hi: float

    def __post_init__(self) -> None:
        c = np.array(self.coeffs, dtype=np.float64)
        if c.ndim != 1 or c.size == 0:
            raise ValueError("coeffs must be a non-empty 1-D vector")
        if not np.all(np.isfinite(c)):
            raise ValueError("coefficients must be finite")
        c.setflags(write=False)
        lo, hi = _as_domain((self.lo, self.hi))
        object.__setattr__(self, "coeffs", c)
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def degree(self) -> int:
        return self.coeffs.size - 1

    @property
    def domain(self) -> Interval:
        return Interval(self.lo, self.hi)

    @classmethod
    def from_power_basis(cls, power_coeffs, domain) -> "BernsteinPoly":
        """Bernstein form of sum(a[i] * x^i) on the given domain.

        Exact up to floating-point rounding: the power coefficients are first
        recentred onto the unit interval, then converted with the closed-form
        c_k = sum_{i<=k} C(k,i)/C(n,i) * a_hat[i].
        """
        a = np.asarray(power_coeffs, dtype=np.float64)
        if a.ndim != 1 or a.size == 0:
            raise ValueError("power coefficients must be a non-empty 1-D vector")
        lo, hi = _as_domain(domain)
        n = a.size - 1
        w = hi - lo
        a_hat = np.zeros(n + 1)
        for i in range(n + 1):
            s = 0.0
            for j in range(i, n + 1):
                s += a[j] * binomial(j, i) * lo ** (j - i)
            a_hat[i] = s * w**i
        c = np.zeros(n + 1)
        for k in range(n + 1):
            c[k] = sum(binomial(k, i) / binomial(n, i) * a_hat[i] for i in range(k + 1))
        return cls(c, lo, hi)

    def _t(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        w = self.hi - self.lo
        slack = 1e-9 * max(1.0, abs(self.lo), abs(self.hi))
        if np.any(x < self.lo - slack) or np.any(x > self.hi + slack):
            raise ValueError(f"evaluation point outside domain [{self.lo}, {self.hi}]")
        return np.clip((x - self.lo) / w, 0.0, 1.0)

    def eval(self, x):
        """Evaluate by de Casteljau's recursion (stable for any order)."""
        return de_casteljau(self.coeffs, self._t(x))

    __call__ = eval

    def enclosure(self) -> Interval:
        """Range bound [min(c), max(c)]; contains every value on the domain."""
        return Interval(float(self.coeffs.min()), float(self.coeffs.max()))

    def subdivide(self, alpha: float) -> tuple["BernsteinPoly", "BernsteinPoly"]:
        """Split at alpha into the same polynomial on [lo, alpha] and [alpha, hi]."""
        if not self.lo <= alpha <= self.hi:
            raise ValueError(f"split point {alpha} outside domain [{self.lo}, {self.hi}]")
        tau = (alpha - self.lo) / (self.hi - self.lo)
        left, right = subdivide_coeffs(self.coeffs, np.float64(tau))
        return (
            BernsteinPoly(left, self.lo, alpha),
            BernsteinPoly(right, alpha, self.hi),
        )

    def restrict(self, sub) -> "BernsteinPoly":
        """Bernstein form of the same function on a subinterval.

        Splits at sub.lo keeping the right part, then at sub.hi keeping the
        left part.
        """
        a, b = (sub.lo, sub.hi) if isinstance(sub, Interval) else (float(sub[0]), float(sub[1]))
        slack = 1e-9 * max(1.0, abs(self.lo), abs(self.hi))
        if a > b or a < self.lo - slack or b > self.hi + slack:
            raise ValueError(
                f"subinterval [{a}, {b}] not contained in domain [{self.lo}, {self.hi}]"
            )
        a, b = max(a, self.lo), min(b, self.hi)
        if b - a < MIN_DOMAIN_WIDTH:
            # floor the width, keeping the target inside the domain
            half = 0.5 * MIN_DOMAIN_WIDTH
            mid = min(max(0.5 * (a + b), self.lo + half), self.hi - half)
            a, b = mid - half, mid + half
        tau1 = (a - self.lo) / (self.hi - self.lo)
        right = right_part(self.coeffs, np.float64(tau1))
        tau2 = (b - a) / (self.hi - a)
        sub_coeffs = left_part(right, np.float64(tau2))
        return BernsteinPoly(sub_coeffs, a, b)

    def derivative(self) -> "BernsteinPoly":
        """Degree-(n-1) Bernstein form of dP/dx on the same domain.

        Coefficients are n * (c[k+1] - c[k]) / (hi - lo); the width factor is
        the chain rule through the normalized coordinate.  Degree 0 input
        yields the zero polynomial of degree 0.
        """
        n = self.degree
        if n == 0:
            return BernsteinPoly(np.zeros(1), self.lo, self.hi)
        d = n * np.diff(self.coeffs) / (self.hi - self.lo)
        return BernsteinPoly(d, self.lo, self.hi)

    def derivative_sup_bound(self) -> float:
        """Upper bound on |dP/dx| over the domain: 2n * max|c| / (hi - lo).

        Bounds the derivative through the difference-of-bases identity; tight
        only up to the factor 2 but independent of where x lies.
        """
        n = self.degree
        if n == 0:
            return 0.0
        return 2.0 * n * float(np.abs(self.coeffs).max()) / (self.hi - self.lo)


# ---------------------------------------------------------------------------
# Array kernels.  coeffs has shape (..., n+1); t broadcasts against the
# leading axes.  Every lerp is written as  (1-t)*A + t*B  with the same
# operation order so that independently computed triangles agree bitwise on
# identical inputs (degenerate boxes then bound exactly).
# ---------------------------------------------------------------------------


def _broadcast(coeffs, t) -> tuple[np.ndarray, np.ndarray, int]:
    coeffs = np.asarray(coeffs, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    n = coeffs.shape[-1] - 1
    batch = np.broadcast_shapes(coeffs.shape[:-1], t.shape)
    work = np.broadcast_to(coeffs, batch + (n + 1,)).copy()
    t = np.broadcast_to(t, batch)[..., None]
    return work, t, n


def de_casteljau(coeffs, t) -> np.ndarray:
    """Evaluate at normalized coordinate t in [0, 1]; returns shape t."""
    beta, t, n = _broadcast(coeffs, t)
    s = 1.0 - t
    for j in range(n):
        beta[..., : n - j] = s * beta[..., : n - j] + t * beta[..., 1 : n - j + 1]
    # contiguous copy: strided views can steer BLAS onto different kernels
    return np.ascontiguousarray(beta[..., 0])


def basis_values(n: int, t) -> np.ndarray:
    """All degree-n basis values at normalized t; shape t.shape + (n+1,).

    Built by the degree-raising recurrence, so every entry stays in [0, 1]
    up to rounding for t in [0, 1].
    """
    t = np.asarray(t, dtype=np.float64)
    out = np.zeros(t.shape + (n + 1,))
    out[..., 0] = 1.0
    tt = t[..., None]
    s = 1.0 - tt
    for j in range(1, n + 1):
        prev = out[..., :j].copy()
        out[..., :j] = s * prev
        out[..., 1 : j + 1] += tt * prev
    return out


def subdivide_coeffs(coeffs, tau) -> tuple[np.ndarray, np.ndarray]:
    """Coefficients of both halves after splitting at normalized tau.

    left[i] is the diagonal of the de Casteljau triangle, right[i] its last
    row reversed; both represent the original function on their subintervals.
    """
    work, tau, n = _broadcast(coeffs, tau)
    left = np.empty_like(work)
    right = np.empty_like(work)
    left[..., 0] = work[..., 0]
    right[..., n] = work[..., n]
    om = 1.0 - tau
    for k in range(1, n + 1):
        work[..., k:] = om * work[..., k - 1 : n] + tau * work[..., k:]
        left[..., k] = work[..., k]
        right[..., n - k] = work[..., n]
    return left, right


def right_part(coeffs, tau, keep_levels: bool = False):
    """Coefficients on [alpha, hi] after splitting at normalized tau.

    With keep_levels=True also returns each triangle level (the work array
    after every sweep, level 0 being the input), which the training code
    replays to backpropagate through the split.
    """
    work, tau, n = _broadcast(coeffs, tau)
    right = np.empty_like(work)
    right[..., n] = work[..., n]
    om = 1.0 - tau
    levels = [work.copy()] if keep_levels else None
    for k in range(1, n + 1):
        work[..., k:] = om * work[..., k - 1 : n] + tau * work[..., k:]
        right[..., n - k] = work[..., n]
        if keep_levels:
            levels.append(work.copy())
    if keep_levels:
        return right, levels
    return right


def left_part(coeffs, tau, keep_levels: bool = False):
    """Coefficients on [lo, alpha] after splitting at normalized tau."""
    work, tau, n = _broadcast(coeffs, tau)
    left = np.empty_like(work)
    left[..., 0] = work[..., 0]
    om = 1.0 - tau
    levels = [work.copy()] if keep_levels else None
    for k in range(1, n + 1):
        work[..., k:] = om * work[..., k - 1 : n] + tau * work[..., k:]
        left[..., k] = work[..., k]
        if keep_levels:
            levels.append(work.copy())
    if keep_levels:
        return left, levels
    return left


def restrict_coeffs(coeffs, tau1, tau2) -> np.ndarray:
    """Coefficients on the subinterval given by the two normalized splits.

    tau1 positions the subinterval's left endpoint inside the full domain;
    tau2 positions its right endpoint inside the remaining right part.
    """
    return left_part(right_part(coeffs, tau1), tau2)


def interval_de_casteljau(coeffs, t_lo, t_hi) -> tuple[np.ndarray, np.ndarray]:
    """Interval-arithmetic evaluation over normalized [t_lo, t_hi] in [0, 1].

    Runs the de Casteljau recursion with interval operands, losing the
    correlation between the two lerp terms.  Sound for the range on the
    t-interval, but the overestimation compounds per level; this is the
    generic bound a propagator unaware of the enclosure and subdivision
    properties would compute.
    """
    blo, tlo, n = _broadcast(coeffs, t_lo)
    bhi = blo.copy()
    thi = np.broadcast_to(np.asarray(t_hi, dtype=np.float64), tlo.shape[:-1])[..., None]
    slo = 1.0 - thi
    shi = 1.0 - tlo
    for j in range(n):
        a_lo, a_hi = blo[..., : n - j], bhi[..., : n - j]
        b_lo, b_hi = blo[..., 1 : n - j + 1], bhi[..., 1 : n - j + 1]
        # both factor intervals lie in [0, 1], so two products bound each term
        new_lo = np.minimum(slo * a_lo, shi * a_lo) + np.minimum(tlo * b_lo, thi * b_lo)
        new_hi = np.maximum(slo * a_hi, shi * a_hi) + np.maximum(tlo * b_hi, thi * b_hi)
        blo[..., : n - j] = new_lo
        bhi[..., : n - j] = new_hi
    return np.ascontiguousarray(blo[..., 0]), np.ascontiguousarray(bhi[..., 0])
