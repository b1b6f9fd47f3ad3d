"""Toy fully connected networks, the layerwise output-distortion bound and
empirical distortion measurements.

Two matrix measures appear here and are easy to mix up:

* ``induced_l1``: max absolute column sum, the operator norm compatible with
  the vector L1 norm. Used for the per-layer coefficients and for tau.
* ``entrywise_l1``: sum of absolute entries, the parameter distortion.
"""
from __future__ import annotations

import enum
import json
import math
import os
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from coinfer.errors import DomainError, EmptyInputError, SchemaError, ShapeError
from coinfer.quantizers import QuantKind, QuantScheme, clip_magnitude, quantize

# Encoder widths of the reference autoencoder; the decoder mirrors them and
# 784-pixel inputs/outputs close both ends, which gives 16 weight layers.
FCDNN16_ENCODER = (64, 128, 256, 512, 256, 128, 64, 32)
FCDNN16_IO = 784


class Activation(str, enum.Enum):
    RELU = "relu"
    LEAKY_RELU = "leaky-relu"
    TANH = "tanh"
    IDENTITY = "identity"


@dataclass(frozen=True)
class DnnModel:
    """``layers[l]`` has shape (out, in); the activation follows every layer but the last."""

    layers: tuple[np.ndarray, ...]
    activation: Activation = Activation.RELU
    leaky_slope: float = 0.01

    def __post_init__(self) -> None:
        if len(self.layers) == 0:
            raise ShapeError("a model needs at least one layer")
        mats = []
        for i, w in enumerate(self.layers):
            w = np.array(w, dtype=np.float64)
            if w.ndim != 2 or 0 in w.shape:
                raise ShapeError(f"layer {i} must be a nonempty matrix, got shape {w.shape}")
            if not np.all(np.isfinite(w)):
                raise DomainError(f"layer {i} contains non-finite entries")
            if mats and w.shape[1] != mats[-1].shape[0]:
                raise ShapeError(
                    f"layer {i} expects {w.shape[1]} inputs but layer {i - 1} emits {mats[-1].shape[0]}")
            w.setflags(write=False)
            mats.append(w)
        object.__setattr__(self, "layers", tuple(mats))
        object.__setattr__(self, "activation", Activation(self.activation))
        if not 0 <= self.leaky_slope <= 1:
            # slopes outside [0, 1] break the 1-Lipschitz requirement
            raise DomainError(f"leaky slope must lie in [0, 1], got {self.leaky_slope}")

    @property
    def depth(self) -> int:
        return len(self.layers)

    @property
    def input_dim(self) -> int:
        return self.layers[0].shape[1]

    @property
    def output_dim(self) -> int:
        return self.layers[-1].shape[0]

    @property
    def n_params(self) -> int:
        return sum(w.size for w in self.layers)

    @property
    def dims(self) -> list[int]:
        return [self.input_dim] + [w.shape[0] for w in self.layers]

    def sigma(self, z: np.ndarray) -> np.ndarray:
        a = self.activation
        if a is Activation.RELU:
            return np.maximum(z, 0.0)
        if a is Activation.LEAKY_RELU:
            return np.where(z >= 0, z, self.leaky_slope * z)
        if a is Activation.TANH:
            return np.tanh(z)
        return z

    def with_layers(self, layers: Sequence[np.ndarray]) -> "DnnModel":
        return DnnModel(tuple(layers), self.activation, self.leaky_slope)

    def same_structure(self, other: "DnnModel") -> bool:
        return (self.depth == other.depth
                and all(a.shape == b.shape for a, b in zip(self.layers, other.layers))
                and self.activation is other.activation
                and self.leaky_slope == other.leaky_slope)


def forward(model: DnnModel, x) -> np.ndarray:
    """Evaluate the network on one input vector or a batch (rows are inputs)."""
    h = np.asarray(x, dtype=np.float64)
    if h.shape[-1] != model.input_dim:
        raise ShapeError(f"input has {h.shape[-1]} features, model expects {model.input_dim}")
    last = model.depth - 1
    for i, w in enumerate(model.layers):
        h = h @ w.T
        if i < last:
            h = model.sigma(h)
    return h


def induced_l1(w: np.ndarray) -> float:
    """Operator norm induced by the vector L1 norm (max absolute column sum)."""
    return float(np.abs(w).sum(axis=0).max())


def entrywise_l1(w: np.ndarray) -> float:
    return float(np.abs(w).sum())


def layer_taus(model: DnnModel, quantized: DnnModel) -> list[float]:
    """The tightest admissible per-layer error bounds, ``||W - W_hat||`` (induced)."""
    _check_pair(model, quantized)
    return [induced_l1(w - q) for w, q in zip(model.layers, quantized.layers)]


@dataclass(frozen=True)
class BoundReport:
    bound: float
    per_layer_terms: tuple[float, ...]
    coefficients: tuple[float, ...]
    weighted_param_distortion: float
    param_distortion: float
    measured: float | None = None

    def to_dict(self) -> dict:
        d = {
            "bound": self.bound,
            "per_layer_terms": list(self.per_layer_terms),
            "coefficients": list(self.coefficients),
            "weighted_param_distortion": self.weighted_param_distortion,
            "param_distortion": self.param_distortion,
        }
        if self.measured is not None:
            d["measured"] = self.measured
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def _check_pair(model: DnnModel, quantized: DnnModel) -> None:
    if not model.same_structure(quantized):
        raise ShapeError("original and quantized models differ in structure")


def prop1_bound(model: DnnModel, quantized: DnnModel, taus: Sequence[float] | None = None,
                measured: float | None = None) -> BoundReport:
    """Worst-case output L1 distortion over inputs with ``||x||_1 <= 1``.

    Layer l contributes ``A_l * ||W_l - W_hat_l||`` where ``A_l`` multiplies the
    clean norms of the layers below and ``||W_k|| + tau_k`` of those above.
    ``taus`` defaults to the exact per-layer error norms.
    """
    _check_pair(model, quantized)
    errs = [induced_l1(w - q) for w, q in zip(model.layers, quantized.layers)]
    if taus is None:
        taus = errs
    taus = [float(t) for t in taus]
    if len(taus) != model.depth:
        raise ShapeError(f"need {model.depth} taus, got {len(taus)}")
    for i, (t, e) in enumerate(zip(taus, errs)):
        if not t >= e * (1 - 1e-12):
            raise DomainError(f"tau[{i}] = {t} is below the layer error norm {e}")
    norms = [induced_l1(w) for w in model.layers]
    coeffs = []
    for l in range(model.depth):
        below = math.prod(norms[:l])
        above = math.prod(n + t for n, t in zip(norms[l + 1:], taus[l + 1:]))
        coeffs.append(below * above)
    terms = tuple(a * e for a, e in zip(coeffs, errs))
    entry = sum(entrywise_l1(w - q) for w, q in zip(model.layers, quantized.layers))
    weighted = sum(a * entrywise_l1(w - q) for a, w, q in zip(coeffs, model.layers, quantized.layers))
    return BoundReport(float(sum(terms)), terms, tuple(coeffs), float(weighted), float(entry), measured)


def _as_batch(inputs, dim: int) -> np.ndarray:
    x = np.asarray(inputs, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[0] == 0:
        raise EmptyInputError("need at least one input vector")
    if x.shape[1] != dim:
        raise ShapeError(f"inputs have {x.shape[1]} features, model expects {dim}")
    return x


def output_distortion(model: DnnModel, quantized: DnnModel, inputs) -> float:
    """Largest ``||f(x, W) - f(x, W_hat)||_1`` over the given inputs."""
    _check_pair(model, quantized)
    x = _as_batch(inputs, model.input_dim)
    diff = forward(model, x) - forward(quantized, x)
    return float(np.abs(diff).sum(axis=1).max())


def coefficient_h_from_models(model: DnnModel, inputs, perturbed: Sequence[DnnModel]) -> float:
    """Max ratio of output L1 change to entrywise parameter L1 change."""
    x = _as_batch(inputs, model.input_dim)
    base = forward(model, x)
    best = None
    for p in perturbed:
        _check_pair(model, p)
        dw = sum(entrywise_l1(w - q) for w, q in zip(model.layers, p.layers))
        if dw == 0:
            continue
        ratio = float(np.abs(forward(p, x) - base).sum(axis=1).max()) / dw
        best = ratio if best is None else max(best, ratio)
    if best is None:
        raise DomainError("every perturbation had zero norm; H is undefined")
    return best


def estimate_coefficient_h(model: DnnModel, inputs, perturbation_scales: Sequence[float],
                           samples_per_scale: int = 4, seed: int = 0) -> float:
    """Data-driven constant ``H`` with ``||f(x,W) - f(x,W')||_1 <= H ||W - W'||_1``.

    Each scale ``s`` draws ``samples_per_scale`` dense perturbations with
    entries uniform on ``[-s, s]``; the estimate is the worst ratio seen.
    """
    scales = [float(s) for s in perturbation_scales]
    if not scales:
        raise EmptyInputError("need at least one perturbation scale")
    if any(not s > 0 for s in scales):
        raise DomainError("perturbation scales must be positive")
    rng = np.random.default_rng(seed)
    perturbed = []
    for s in scales:
        for _ in range(samples_per_scale):
            perturbed.append(model.with_layers(
                [w + rng.uniform(-s, s, size=w.shape) for w in model.layers]))
    return coefficient_h_from_models(model, inputs, perturbed)


def quantize_model(model: DnnModel, kind: QuantKind | str, bit_width: int,
                   theta_max: Sequence[float] | None = None) -> DnnModel:
    """Quantize every layer; the clip magnitude defaults to each layer's own percentile."""
    if theta_max is None:
        theta_max = [clip_magnitude(w) for w in model.layers]
    return model.with_layers(
        [quantize(w, QuantScheme(QuantKind(kind), bit_width, t)) for w, t in zip(model.layers, theta_max)])


def normalized_inputs(n: int, dim: int, rng: np.random.Generator) -> np.ndarray:
    """Random inputs scaled onto the L1 unit sphere."""
    x = rng.standard_normal((n, dim))
    return x / np.abs(x).sum(axis=1, keepdims=True)


def random_model(dims: Sequence[int], rng: np.random.Generator,
                 activation: Activation | str = Activation.RELU,
                 lam: float | None = None) -> DnnModel:
    """Weights with exponential magnitudes and random signs.

    With ``lam=None`` each layer uses rate ``sqrt(fan_in)``, which gives
    ``E[w**2] = 2 / fan_in`` and keeps activations of a deep ReLU stack at a
    stable scale.
    """
    dims = [int(d) for d in dims]
    if len(dims) < 2 or min(dims) < 1:
        raise ShapeError(f"need at least two positive dimensions, got {dims}")
    layers = []
    for n_in, n_out in zip(dims[:-1], dims[1:]):
        rate = math.sqrt(n_in) if lam is None else lam
        mag = rng.exponential(1.0 / rate, size=(n_out, n_in))
        layers.append(np.where(rng.random((n_out, n_in)) < 0.5, -mag, mag))
    return DnnModel(tuple(layers), Activation(activation))


def fcdnn16_dims() -> list[int]:
    enc = list(FCDNN16_ENCODER)
    return [FCDNN16_IO] + enc + enc[-2::-1] + [FCDNN16_IO]


# --- model files: JSON manifest plus a raw little-endian float32 blob ---

def save_model(model: DnnModel, manifest_path: str) -> str:
    """Write ``<name>.json`` and ``<name>.f32`` side by side; returns the blob path."""
    base, _ = os.path.splitext(manifest_path)
    blob_path = base + ".f32"
    blob = np.concatenate([w.astype("<f4").ravel() for w in model.layers])
    with open(blob_path, "wb") as fh:
        fh.write(blob.tobytes())
    manifest = {
        "activation": model.activation.value,
        "leaky_slope": model.leaky_slope,
        "layers": [list(w.shape) for w in model.layers],
        "weights": os.path.basename(blob_path),
    }
    with open(manifest_path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return blob_path


def model_from_manifest(manifest: dict, blob: bytes) -> DnnModel:
    problems = []
    shapes = manifest.get("layers")
    if not isinstance(shapes, list) or not shapes:
        problems.append("layers: expected a nonempty list of [rows, cols]")
    elif not all(isinstance(s, list) and len(s) == 2 and all(isinstance(d, int) and d > 0 for d in s)
                 for s in shapes):
        problems.append("layers: every entry must be [rows, cols] with positive integers")
    act = manifest.get("activation", "relu")
    try:
        act = Activation(act)
    except ValueError:
        problems.append(f"activation: unknown value {act!r}")
    if problems:
        raise SchemaError(problems)
    need = sum(r * c for r, c in shapes) * 4
    if len(blob) != need:
        raise SchemaError([f"weights: blob holds {len(blob)} bytes, layer shapes need {need}"])
    flat = np.frombuffer(blob, dtype="<f4").astype(np.float64)
    layers, at = [], 0
    for r, c in shapes:
        layers.append(flat[at:at + r * c].reshape(r, c))
        at += r * c
    return DnnModel(tuple(layers), act, float(manifest.get("leaky_slope", 0.01)))


def load_model(manifest_path: str) -> DnnModel:
    with open(manifest_path, encoding="utf-8") as fh:
        manifest = json.load(fh)
    blob_name = manifest.get("weights")
    if not isinstance(blob_name, str):
        raise SchemaError(["weights: expected the name of a .f32 file"])
    blob_path = os.path.join(os.path.dirname(os.path.abspath(manifest_path)), blob_name)
    with open(blob_path, "rb") as fh:
        blob = fh.read()
    return model_from_manifest(manifest, blob)


@dataclass(frozen=True)
class VerifyRow:
    bit_width: int
    scheme: str
    measured: float
    prop1_bound: float
    surrogate_h_bound: float

    @property
    def holds(self) -> bool:
        return self.measured <= self.prop1_bound * (1 + 1e-9)


@dataclass
class VerifyConfig:
    bit_widths: Sequence[int] = (2, 3, 4, 5, 6, 7, 8)
    schemes: Sequence[str] = ("uniform",)
    n_inputs: int = 32
    seed: int = 0


def verify_prop1(model: DnnModel, config: VerifyConfig) -> list[VerifyRow]:
    """Measure distortion against the bound for each (scheme, bit width).

    ``H`` is estimated from the quantization perturbations themselves, so the
    surrogate column holds on these rows by construction.
    """
    rng = np.random.default_rng(config.seed)
    x = normalized_inputs(config.n_inputs, model.input_dim, rng)
    rows = []
    for scheme in config.schemes:
        kind = QuantKind(scheme)
        qs = [quantize_model(model, kind, b) for b in config.bit_widths]
        try:
            h = coefficient_h_from_models(model, x, qs)
        except DomainError:
            h = 0.0  # quantization was lossless at every width
        for b, q in zip(config.bit_widths, qs):
            rep = prop1_bound(model, q)
            measured = output_distortion(model, q, x)
            rows.append(VerifyRow(int(b), kind.value, measured, rep.bound, h * rep.param_distortion))
    return rows
