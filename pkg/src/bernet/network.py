"""Network container: layer stack, forward pass, stored-domain bookkeeping,
initialization, and the JSON model format.

A network is a flat sequence of affine, conv2d, and Bernstein-activation
layers.  Each activation neuron owns a learnable coefficient vector plus the
input bounds recorded the last time refresh_domain_bounds ran; the forward
pass clamps pre-activations to those bounds before evaluating, because the
polynomials are only trained and bounded there.

Networks are plain mutable objects: training mutates them in place and needs
exclusive access; inference and certification treat them as read-only.
"""

from __future__ import annotations

import base64
import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import bounds as B
from .bernstein import MIN_DOMAIN_WIDTH, de_casteljau


class ModelFormatError(ValueError):
    """Raised when a serialized model cannot be parsed."""


class UnsupportedVersionError(ModelFormatError):
    """Raised when a model file declares an unknown format version."""


FORMAT_VERSION = 1


# --- architecture specs ----------------------------------------------------


@dataclass(frozen=True)
class AffineSpec:
    out_features: int


@dataclass(frozen=True)
class Conv2dSpec:
    out_channels: int
    kernel_size: int
    stride: int = 1
    padding: int = 0


@dataclass(frozen=True)
class BernSpec:
    order: int


LayerSpec = AffineSpec | Conv2dSpec | BernSpec


# --- parameterized layers ---------------------------------------------------


@dataclass
class AffineLayer:
    weight: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)

    @property
    def out_width(self) -> int:
        return self.weight.shape[0]


@dataclass
class Conv2dLayer:
    kernel: np.ndarray  # (out_c, in_c, kh, kw)
    bias: np.ndarray  # (out_c,)
    stride: int
    padding: int
    in_shape: tuple[int, int, int]
    out_shape: tuple[int, int, int]

    @property
    def out_width(self) -> int:
        c, h, w = self.out_shape
        return c * h * w


@dataclass
class BernLayer:
    coeffs: np.ndarray  # (neurons, order + 1)
    stored_lo: np.ndarray  # (neurons,)
    stored_hi: np.ndarray  # (neurons,)

    @property
    def order(self) -> int:
        return self.coeffs.shape[1] - 1

    @property
    def out_width(self) -> int:
        return self.coeffs.shape[0]


Layer = AffineLayer | Conv2dLayer | BernLayer


@dataclass
class Network:
    layers: list[Layer]
    input_lo: np.ndarray
    input_hi: np.ndarray
    input_shape: tuple[int, int, int] | None = None

    def __post_init__(self) -> None:
        self.input_lo = np.asarray(self.input_lo, dtype=np.float64)
        self.input_hi = np.asarray(self.input_hi, dtype=np.float64)
        if not (np.all(np.isfinite(self.input_lo)) and np.all(np.isfinite(self.input_hi))):
            raise ValueError("input domain must be finite")
        if np.any(self.input_lo > self.input_hi):
            raise ValueError("input domain lower bounds exceed upper bounds")

    @property
    def input_domain(self) -> B.BoxBounds:
        return B.BoxBounds(self.input_lo, self.input_hi)

    @property
    def in_width(self) -> int:
        return self.input_lo.size

    @property
    def out_width(self) -> int:
        return self.layers[-1].out_width if self.layers else self.in_width

    def n_params(self) -> int:
        return sum(arr.size for _, _, arr in self.parameters())

    def parameters(self):
        """Yield (layer_index, name, array) for every learnable tensor."""
        for i, layer in enumerate(self.layers):
            if isinstance(layer, AffineLayer):
                yield i, "weight", layer.weight
                yield i, "bias", layer.bias
            elif isinstance(layer, Conv2dLayer):
                yield i, "kernel", layer.kernel
                yield i, "bias", layer.bias
            else:
                yield i, "coeffs", layer.coeffs

    def forward(self, x: np.ndarray) -> np.ndarray:
        """Logits for a single input (d,) or a batch (B, d)."""
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        h = np.atleast_2d(x)
        if h.shape[1] != self.in_width:
            raise ValueError(f"input width {h.shape[1]}, network expects {self.in_width}")
        for layer in self.layers:
            h = layer_forward(layer, h)
        return h[0] if single else h

    def refresh_domain_bounds(self) -> "Network":
        """Propagate the input domain forward, re-recording activation domains.

        Affine/conv layers map boxes exactly; each Bernstein layer stores the
        incoming box (floored to a minimal width) as its domain and emits its
        coefficient range.  Runs once per training step and once after
        training so certification never sees stale bounds.
        """
        lo, hi = self.input_lo.copy(), self.input_hi.copy()
        for layer in self.layers:
            if isinstance(layer, AffineLayer):
                lo, hi = B.affine_interval(layer.weight, layer.bias, lo, hi)
            elif isinstance(layer, Conv2dLayer):
                lo, hi = B.conv_interval(layer.kernel, layer.bias, layer.stride,
                                         layer.padding, layer.in_shape, lo, hi)
            else:
                width = hi - lo
                narrow = width < MIN_DOMAIN_WIDTH
                if np.any(narrow):
                    mid = 0.5 * (lo + hi)
                    half = 0.5 * MIN_DOMAIN_WIDTH
                    lo = np.where(narrow, mid - half, lo)
                    hi = np.where(narrow, mid + half, hi)
                layer.stored_lo = lo
                layer.stored_hi = hi
                lo = layer.coeffs.min(axis=1)
                hi = layer.coeffs.max(axis=1)
        return self


def layer_forward(layer: Layer, h: np.ndarray) -> np.ndarray:
    if isinstance(layer, AffineLayer):
        return h @ layer.weight.T + layer.bias
    if isinstance(layer, Conv2dLayer):
        return B.conv_forward(h, layer.kernel, layer.bias, layer.stride,
                              layer.padding, layer.in_shape)
    return B.bern_point_eval(layer.coeffs, layer.stored_lo, layer.stored_hi, h)


# --- construction ------------------------------------------------------------


def init_network(arch: list[LayerSpec], input_domain, seed: int = 0,
                 input_shape: tuple[int, int, int] | None = None) -> Network:
    """Build and initialize a network; deterministic for a fixed seed.

    Affine and conv weights are zero-mean normal with std 1/sqrt(fan_in) and
    zero biases.  Bernstein coefficients are normal with variance 1/m, m
    being the layer's neuron count.  Stored activation domains are set by one
    refresh pass over the input domain.
    """
    if isinstance(input_domain, B.BoxBounds):
        in_lo, in_hi = input_domain.lo, input_domain.hi
    else:
        in_lo, in_hi = (np.asarray(v, dtype=np.float64) for v in input_domain)
    rng = np.random.default_rng(seed)
    layers: list[Layer] = []
    width = in_lo.size
    shape = tuple(input_shape) if input_shape is not None else None
    if shape is not None and math.prod(shape) != width:
        raise ValueError(f"input_shape {shape} does not match domain size {width}")
    prev_kind: type | None = None
    for spec in arch:
        if isinstance(spec, AffineSpec):
            if spec.out_features < 1:
                raise ValueError("affine layer needs at least one output")
            w = rng.normal(0.0, 1.0 / math.sqrt(width), size=(spec.out_features, width))
            layers.append(AffineLayer(w, np.zeros(spec.out_features)))
            width = spec.out_features
            shape = None
            prev_kind = AffineLayer
        elif isinstance(spec, Conv2dSpec):
            if shape is None:
                raise ValueError("conv2d layer requires a known (c, h, w) input shape")
            c, h, wd = shape
            k = spec.kernel_size
            fan_in = c * k * k
            kernel = rng.normal(0.0, 1.0 / math.sqrt(fan_in),
                                size=(spec.out_channels, c, k, k))
            _, _, (oh, ow) = B.conv_patch_indices(shape, (k, k), spec.stride, spec.padding)
            out_shape = (spec.out_channels, oh, ow)
            layers.append(Conv2dLayer(kernel, np.zeros(spec.out_channels),
                                      spec.stride, spec.padding, shape, out_shape))
            shape = out_shape
            width = math.prod(out_shape)
            prev_kind = Conv2dLayer
        elif isinstance(spec, BernSpec):
            if spec.order < 1:
                raise ValueError("Bernstein activation order must be >= 1")
            if prev_kind not in (AffineLayer, Conv2dLayer):
                raise ValueError("Bernstein activation must follow an affine or conv layer")
            coeffs = rng.normal(0.0, 1.0 / math.sqrt(width), size=(width, spec.order + 1))
            layers.append(BernLayer(coeffs, np.zeros(width), np.ones(width)))
            prev_kind = BernLayer
        else:
            raise TypeError(f"unknown layer spec {spec!r}")
    net = Network(layers, in_lo, in_hi,
                  tuple(input_shape) if input_shape is not None else None)
    net.refresh_domain_bounds()
    return net


def fc_arch(hidden: list[int], order: int, n_outputs: int) -> list[LayerSpec]:
    """Fully connected stack: activation after every layer except the last."""
    arch: list[LayerSpec] = []
    for h in hidden:
        arch.append(AffineSpec(h))
        arch.append(BernSpec(order))
    arch.append(AffineSpec(n_outputs))
    return arch


# --- serialization -----------------------------------------------------------


def _encode_array(arr: np.ndarray) -> dict:
    a = np.ascontiguousarray(arr, dtype="<f8")
    return {"shape": list(a.shape),
            "data": base64.b64encode(a.tobytes()).decode("ascii")}


def _decode_array(obj, what: str) -> np.ndarray:
    try:
        shape = tuple(int(s) for s in obj["shape"])
        raw = base64.b64decode(obj["data"].encode("ascii"), validate=True)
    except (KeyError, TypeError, AttributeError, ValueError) as e:
        raise ModelFormatError(f"malformed array field for {what}: {e}") from None
    expected = 8 * math.prod(shape) if shape else 8
    if len(raw) != expected:
        raise ModelFormatError(
            f"array payload for {what} has {len(raw)} bytes, expected {expected}"
        )
    return np.frombuffer(raw, dtype="<f8").reshape(shape).astype(np.float64)


def to_json_dict(net: Network) -> dict:
    layers = []
    for layer in net.layers:
        if isinstance(layer, AffineLayer):
            layers.append({"kind": "affine",
                           "weight": _encode_array(layer.weight),
                           "bias": _encode_array(layer.bias)})
        elif isinstance(layer, Conv2dLayer):
            layers.append({"kind": "conv2d",
                           "kernel": _encode_array(layer.kernel),
                           "bias": _encode_array(layer.bias),
                           "stride": layer.stride,
                           "padding": layer.padding,
                           "in_shape": list(layer.in_shape),
                           "out_shape": list(layer.out_shape)})
        else:
            layers.append({"kind": "bern",
                           "order": layer.order,
                           "coeffs": _encode_array(layer.coeffs),
                           "stored_lo": _encode_array(layer.stored_lo),
                           "stored_hi": _encode_array(layer.stored_hi)})
    return {"format_version": FORMAT_VERSION,
            "input_lo": _encode_array(net.input_lo),
            "input_hi": _encode_array(net.input_hi),
            "input_shape": list(net.input_shape) if net.input_shape else None,
            "layers": layers}


def from_json_dict(doc: dict) -> Network:
    if not isinstance(doc, dict):
        raise ModelFormatError("model document must be a JSON object")
    version = doc.get("format_version")
    if version != FORMAT_VERSION:
        raise UnsupportedVersionError(
            f"unsupported model format version {version!r}, expected {FORMAT_VERSION}"
        )
    try:
        raw_layers = doc["layers"]
    except KeyError:
        raise ModelFormatError("missing 'layers' field") from None
    layers: list[Layer] = []
    for i, rl in enumerate(raw_layers):
        kind = rl.get("kind")
        if kind == "affine":
            layers.append(AffineLayer(_decode_array(rl["weight"], f"layer {i} weight"),
                                      _decode_array(rl["bias"], f"layer {i} bias")))
        elif kind == "conv2d":
            layers.append(Conv2dLayer(
                _decode_array(rl["kernel"], f"layer {i} kernel"),
                _decode_array(rl["bias"], f"layer {i} bias"),
                int(rl["stride"]), int(rl["padding"]),
                tuple(rl["in_shape"]), tuple(rl["out_shape"])))
        elif kind == "bern":
            layers.append(BernLayer(
                _decode_array(rl["coeffs"], f"layer {i} coeffs"),
                _decode_array(rl["stored_lo"], f"layer {i} stored_lo"),
                _decode_array(rl["stored_hi"], f"layer {i} stored_hi")))
        else:
            raise ModelFormatError(f"layer {i} has unknown kind {kind!r}")
    shape = doc.get("input_shape")
    return Network(layers,
                   _decode_array(doc["input_lo"], "input_lo"),
                   _decode_array(doc["input_hi"], "input_hi"),
                   tuple(shape) if shape else None)


def serialize(net: Network) -> bytes:
    return json.dumps(to_json_dict(net)).encode("utf-8")


def deserialize(data: bytes) -> Network:
    try:
        doc = json.loads(data.decode("utf-8"))
    except UnicodeDecodeError as e:
        raise ModelFormatError(f"model is not UTF-8 at byte {e.start}") from None
    except json.JSONDecodeError as e:
        raise ModelFormatError(f"invalid JSON at byte {e.pos}: {e.msg}") from None
    return from_json_dict(doc)


def save_model(net: Network, path) -> None:
    with open(path, "wb") as f:
        f.write(serialize(net))


def load_model(path) -> Network:
    with open(path, "rb") as f:
        return deserialize(f.read())
