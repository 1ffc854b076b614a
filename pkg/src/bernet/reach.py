"""Closed-loop box reachability of a discrete-time linear plant under a
Bernstein-network controller.

One step maps a state box X to the exact interval image of A x + B u, where
u ranges over the controller's output bounds on X.  Controller inputs are
saturated to its declared input domain in both the bound propagation and the
sampled trajectories, so the two paths analyze the same closed-loop map.
Boxes get a hair of outward padding each step (round-to-nearest interval
arithmetic could otherwise misplace a corner sample by an ulp); containment
of sampled trajectories is a hard invariant.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from . import bounds as B
from .network import Network

# Outward padding applied to each step's box: absolute + relative.
_PAD = 1e-9


@dataclass
class LinearSystem:
    """x_{k+1} = A x_k + B u_k with u_k produced by a controller network."""

    a: np.ndarray  # (d, d)
    b: np.ndarray  # (d, m)
    kind: str = "discrete"

    def __post_init__(self) -> None:
        self.a = np.asarray(self.a, dtype=np.float64)
        self.b = np.asarray(self.b, dtype=np.float64)
        if self.a.ndim != 2 or self.a.shape[0] != self.a.shape[1]:
            raise ValueError(f"state matrix must be square, got {self.a.shape}")
        if self.b.ndim != 2 or self.b.shape[0] != self.a.shape[0]:
            raise ValueError(f"input matrix shape {self.b.shape} inconsistent with A")
        if not (np.all(np.isfinite(self.a)) and np.all(np.isfinite(self.b))):
            raise ValueError("system matrices must be finite")
        if self.kind != "discrete":
            raise ValueError("only discrete-time systems are supported")

    @property
    def state_dim(self) -> int:
        return self.a.shape[0]

    @property
    def input_dim(self) -> int:
        return self.b.shape[1]


@dataclass
class ReachTrace:
    boxes: list[B.BoxBounds]  # length T + 1, boxes[0] = initial set
    volumes: list[float]  # box volume per step
    sampled_volumes: list[float]  # bounding-box volume of sampled states
    errors: list[float]  # (estimated - sampled) / sampled per step
    method: str = "bern_ibp"


def box_volume(box: B.BoxBounds) -> float:
    """Product of widths; zero-width dimensions give zero volume."""
    return float(np.prod(box.width))


def _saturate(x: np.ndarray, net: Network) -> np.ndarray:
    return np.clip(x, net.input_lo, net.input_hi)


def step_reach(sys: LinearSystem, controller: Network, box: B.BoxBounds,
               method: str = "bern_ibp") -> B.BoxBounds:
    """One-step reachable box: exact interval image of A x + B u.

    The controller output box comes from the requested propagation method on
    the state box clipped to the controller's input domain.
    """
    if len(box) != sys.state_dim:
        raise ValueError(f"box dimension {len(box)} != state dimension {sys.state_dim}")
    if controller.in_width != sys.state_dim or controller.out_width != sys.input_dim:
        raise ValueError("controller input/output widths do not match the system")
    u_lo = np.clip(box.lo, controller.input_lo, controller.input_hi)
    u_hi = np.clip(box.hi, controller.input_lo, controller.input_hi)
    from .certify import _propagate_boxes  # shared propagation core

    u_lo, u_hi = _propagate_boxes(controller, u_lo[None, :], u_hi[None, :],
                                  method, len(controller.layers))
    joint = B.BoxBounds(np.concatenate([box.lo, u_lo[0]]),
                        np.concatenate([box.hi, u_hi[0]]))
    nxt = B.affine_ibp(np.hstack([sys.a, sys.b]), np.zeros(sys.state_dim), joint)
    pad = _PAD * (1.0 + np.maximum(np.abs(nxt.lo), np.abs(nxt.hi)))
    return B.BoxBounds(nxt.lo - pad, nxt.hi + pad)


def simulate_trajectories(sys: LinearSystem, controller: Network,
                          x0: np.ndarray, horizon: int) -> np.ndarray:
    """States of shape (horizon + 1, n, d) for sampled initial states."""
    states = np.empty((horizon + 1,) + x0.shape)
    states[0] = x0
    x = x0
    for k in range(horizon):
        u = controller.forward(_saturate(x, controller))
        x = x @ sys.a.T + u @ sys.b.T
        states[k + 1] = x
    return states


def sampled_volume(sys: LinearSystem, controller: Network, x0_box: B.BoxBounds,
                   step: int, n_samples: int, seed: int = 0) -> float:
    """Bounding-box volume of sampled states after `step` steps.

    Ground-truth proxy comparable with the certified box volume; a sample
    hull can never exceed a sound box.
    """
    if n_samples < 1:
        raise ValueError("need at least one sample")
    rng = np.random.default_rng(seed)
    x0 = x0_box.sample(n_samples, rng)
    states = simulate_trajectories(sys, controller, x0, step)
    pts = states[step]
    return float(np.prod(pts.max(axis=0) - pts.min(axis=0)))


def reach_horizon(sys: LinearSystem, controller: Network, x0_box: B.BoxBounds,
                  horizon: int, n_samples: int = 10_000, seed: int = 0,
                  method: str = "bern_ibp") -> ReachTrace:
    """Iterate step_reach, tracking volumes and the volume error per step.

    errors[k] = (box volume - sampled volume) / sampled volume at step k;
    an outer approximation keeps this nonnegative up to sampling noise.
    """
    if horizon < 1:
        raise ValueError("horizon must be at least 1")
    boxes = [x0_box.copy()]
    for k in range(horizon):
        nxt = step_reach(sys, controller, boxes[-1], method)
        if not nxt.is_finite():
            raise FloatingPointError(f"reach box diverged at step {k + 1}")
        boxes.append(nxt)
    rng = np.random.default_rng(seed)
    x0 = x0_box.sample(n_samples, rng)
    states = simulate_trajectories(sys, controller, x0, horizon)
    volumes, samp_volumes, errors = [], [], []
    for k in range(horizon + 1):
        v_hat = box_volume(boxes[k])
        pts = states[k]
        v = float(np.prod(pts.max(axis=0) - pts.min(axis=0)))
        volumes.append(v_hat)
        samp_volumes.append(v)
        errors.append((v_hat - v) / v if v > 0 else float("inf") if v_hat > 0 else 0.0)
    return ReachTrace(boxes, volumes, samp_volumes, errors, method)


def check_containment(trace: ReachTrace, sys: LinearSystem, controller: Network,
                      x0_samples: np.ndarray) -> int:
    """Number of (step, sample) containment violations; zero means sound."""
    states = simulate_trajectories(sys, controller, x0_samples, len(trace.boxes) - 1)
    bad = 0
    for k, box in enumerate(trace.boxes):
        pts = states[k]
        bad += int(np.sum(np.any((pts < box.lo) | (pts > box.hi), axis=1)))
    return bad


# --- built-in benchmark systems ---------------------------------------------------


def double_integrator(dt: float = 0.2) -> LinearSystem:
    """2D discrete double integrator (position, velocity)."""
    a = np.array([[1.0, dt], [0.0, 1.0]])
    b = np.array([[0.5 * dt * dt], [dt]])
    return LinearSystem(a, b)


def synthetic_stable_system(dim: int, n_inputs: int = 2, seed: int = 7) -> LinearSystem:
    """Random marginally-stable system: spectral radius scaled to 0.95."""
    rng = np.random.default_rng(seed)
    a = rng.normal(0.0, 1.0, size=(dim, dim))
    a *= 0.95 / max(np.abs(np.linalg.eigvals(a)))
    b = rng.normal(0.0, 1.0 / np.sqrt(dim), size=(dim, n_inputs))
    return LinearSystem(a, b)


def stabilizing_gain(sys: LinearSystem, horizon: int = 200) -> np.ndarray:
    """LQR-style state-feedback gain via fixed-point Riccati iteration.

    Identity state and input costs; used to generate imitation targets for
    controller training.
    """
    d, m = sys.state_dim, sys.input_dim
    q = np.eye(d)
    r = np.eye(m)
    p = np.eye(d)
    for _ in range(horizon):
        btp = sys.b.T @ p
        k = np.linalg.solve(r + btp @ sys.b, btp @ sys.a)
        acl = sys.a - sys.b @ k
        p_next = q + k.T @ r @ k + acl.T @ p @ acl
        if np.allclose(p_next, p, rtol=1e-10, atol=1e-12):
            p = p_next
            break
        p = p_next
    btp = sys.b.T @ p
    return np.linalg.solve(r + btp @ sys.b, btp @ sys.a)


# --- system file I/O ---------------------------------------------------------------


@dataclass
class ReachProblem:
    system: LinearSystem
    x0_box: B.BoxBounds
    horizon: int


def load_system(path) -> ReachProblem:
    """Read a reachability problem from JSON: A, B, x0_lo, x0_hi, horizon."""
    with open(path) as f:
        try:
            doc = json.load(f)
        except json.JSONDecodeError as e:
            raise ValueError(f"invalid system JSON at byte {e.pos}: {e.msg}") from None
    try:
        sys = LinearSystem(np.array(doc["A"], dtype=np.float64),
                           np.array(doc["B"], dtype=np.float64))
        box = B.BoxBounds(np.array(doc["x0_lo"], dtype=np.float64),
                          np.array(doc["x0_hi"], dtype=np.float64))
        horizon = int(doc["horizon"])
    except KeyError as e:
        raise ValueError(f"system file missing field {e}") from None
    return ReachProblem(sys, box, horizon)


def save_system(path, problem: ReachProblem) -> None:
    doc = {"A": problem.system.a.tolist(), "B": problem.system.b.tolist(),
           "x0_lo": problem.x0_box.lo.tolist(), "x0_hi": problem.x0_box.hi.tolist(),
           "horizon": problem.horizon}
    with open(path, "w") as f:
        json.dump(doc, f, indent=2)
        f.write("\n")


def write_trace_csv(path, trace: ReachTrace) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["step", "box_lo", "box_hi", "volume", "sampled_volume", "error"])
        for k, box in enumerate(trace.boxes):
            w.writerow([k,
                        ";".join(repr(v) for v in box.lo),
                        ";".join(repr(v) for v in box.hi),
                        repr(trace.volumes[k]),
                        repr(trace.sampled_volumes[k]),
                        repr(trace.errors[k])])
