"""
Layer 0: Dense Network Core

This module is the numerical substrate for every network the TD3 learner owns
(actor, twin critics and their three targets). It implements:

- DenseNet: fully connected layers, ReLU on hidden layers and one of three
  output squashes (identity, tanh, scaled_tanh)
- Analytic backpropagation returning a GradientSet (parameter AND input
  gradients, the latter feeds the actor update through the critic)
- Adam with bias correction
- Polyak (soft) blending and target cloning
- A versioned checkpoint container ("ckpt-v1")

All math runs in float64.

Checkpoint layout ("ckpt-v1"):
    A numpy .npz (zip) archive readable with np.load. It holds one 0-d unicode
    array "<prefix>header" with a JSON object
        {"version": "ckpt-v1", "layer_sizes": [...], "output_activation": str,
         "adam": {"beta1", "beta2", "eps", "step"}}
    followed by float64 arrays, in layer order i = 0..L-1:
        <prefix>W<i>, <prefix>b<i>      parameters
        <prefix>mW<i>, <prefix>vW<i>    Adam moments of W
        <prefix>mb<i>, <prefix>vb<i>    Adam moments of b
    and, for scaled_tanh nets only, <prefix>output_low / <prefix>output_high.
    Single-network files use an empty prefix.
"""

import json
import zipfile
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np

CHECKPOINT_VERSION = "ckpt-v1"
ARCHIVE_TIMESTAMP = (1980, 1, 1, 0, 0, 0)

OUTPUT_ACTIVATIONS = ("identity", "tanh", "scaled_tanh")

# Adam constants (overridable per network)
DEFAULT_ADAM_BETA1 = 0.9
DEFAULT_ADAM_BETA2 = 0.999
DEFAULT_ADAM_EPS = 1e-8


class ShapeError(ValueError):
    """Raised when an array does not match the width a network expects."""


class NonFiniteError(FloatingPointError):
    """Raised when a gradient or loss contains NaN/Inf."""


class CheckpointError(ValueError):
    """Raised when a checkpoint cannot be read back faithfully."""


class ConfigError(ValueError):
    """Raised for invalid hyperparameters, env specs, scenarios or config files."""


@dataclass
class GradientSet:
    """
    Gradients of a scalar loss with respect to a DenseNet.

    weights/biases are congruent with the source network's parameters;
    input holds dLoss/dInput with the same leading shape as the input that
    was passed to backward().
    """
    weights: List[np.ndarray]
    biases: List[np.ndarray]
    input: Optional[np.ndarray] = None

    def is_zero(self) -> bool:
        return all(not np.any(g) for g in self.weights) and all(not np.any(g) for g in self.biases)

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(g)) for g in self.weights + self.biases)


class DenseNet:
    """
    Feed-forward network: ReLU hidden layers, configurable output squash.

    Weights are stored as (fan_in, fan_out) so a batch X of shape (N, fan_in)
    maps through X @ W + b.
    """

    def __init__(
        self,
        layer_sizes: Sequence[int],
        output_activation: str = "identity",
        output_low: Optional[Sequence[float]] = None,
        output_high: Optional[Sequence[float]] = None,
        rng: Optional[np.random.Generator] = None,
        adam_beta1: float = DEFAULT_ADAM_BETA1,
        adam_beta2: float = DEFAULT_ADAM_BETA2,
        adam_eps: float = DEFAULT_ADAM_EPS,
    ):
        """
        Build a network with uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) parameters.

        Args:
            layer_sizes: input width, hidden widths..., output width
            output_activation: "identity", "tanh" or "scaled_tanh"
            output_low: per-output lower bound (scaled_tanh only)
            output_high: per-output upper bound (scaled_tanh only)
            rng: generator used for initialization (default: fresh, unseeded)
            adam_beta1, adam_beta2, adam_eps: Adam constants
        """
        sizes = [int(s) for s in layer_sizes]
        if len(sizes) < 2 or any(s < 1 for s in sizes):
            raise ShapeError(f"layer_sizes must hold >= 2 positive widths, got {list(layer_sizes)}")
        if output_activation not in OUTPUT_ACTIVATIONS:
            raise ValueError(f"Unknown output activation '{output_activation}', expected one of {OUTPUT_ACTIVATIONS}")

        self.layer_sizes = sizes
        self.output_activation = output_activation
        self.output_low = None
        self.output_high = None
        if output_activation == "scaled_tanh":
            if output_low is None or output_high is None:
                raise ValueError("scaled_tanh output needs output_low and output_high")
            self.output_low = np.asarray(output_low, dtype=np.float64).reshape(-1)
            self.output_high = np.asarray(output_high, dtype=np.float64).reshape(-1)
            if self.output_low.shape != (sizes[-1],) or self.output_high.shape != (sizes[-1],):
                raise ShapeError(f"output bounds must have width {sizes[-1]}")
            if np.any(self.output_high < self.output_low):
                raise ValueError("output_high must be >= output_low elementwise")

        rng = rng if rng is not None else np.random.default_rng()
        self.weights: List[np.ndarray] = []
        self.biases: List[np.ndarray] = []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            bound = 1.0 / np.sqrt(fan_in)
            self.weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
            self.biases.append(rng.uniform(-bound, bound, size=fan_out))

        self.adam_beta1 = float(adam_beta1)
        self.adam_beta2 = float(adam_beta2)
        self.adam_eps = float(adam_eps)
        self.reset_optimizer()

    # ------------------------------------------------------------------
    # Shape helpers
    # ------------------------------------------------------------------

    @property
    def input_width(self) -> int:
        return self.layer_sizes[0]

    @property
    def output_width(self) -> int:
        return self.layer_sizes[-1]

    @property
    def num_layers(self) -> int:
        return len(self.weights)

    def parameters(self) -> List[np.ndarray]:
        """Parameters in layer order: W0, b0, W1, b1, ..."""
        params = []
        for w, b in zip(self.weights, self.biases):
            params.extend([w, b])
        return params

    def reset_optimizer(self):
        """Zero the Adam moments and step counter."""
        self.adam_step_count = 0
        self.m_weights = [np.zeros_like(w) for w in self.weights]
        self.v_weights = [np.zeros_like(w) for w in self.weights]
        self.m_biases = [np.zeros_like(b) for b in self.biases]
        self.v_biases = [np.zeros_like(b) for b in self.biases]

    def is_congruent(self, other: "DenseNet") -> bool:
        return self.layer_sizes == other.layer_sizes

    def _as_batch(self, x, width: int, what: str) -> np.ndarray:
        arr = np.asarray(x, dtype=np.float64)
        if arr.ndim == 1:
            arr = arr[None, :]
        if arr.ndim != 2 or arr.shape[1] != width:
            raise ShapeError(f"{what} must have width {width}, got shape {np.shape(x)}")
        return arr

    # ------------------------------------------------------------------
    # Forward / backward
    # ------------------------------------------------------------------

    def _squash(self, z: np.ndarray) -> np.ndarray:
        if self.output_activation == "identity":
            return z
        t = np.tanh(z)
        if self.output_activation == "tanh":
            return t
        return self.output_low + (self.output_high - self.output_low) * (t + 1.0) * 0.5

    def _squash_grad(self, z: np.ndarray) -> np.ndarray:
        if self.output_activation == "identity":
            return np.ones_like(z)
        t = np.tanh(z)
        if self.output_activation == "tanh":
            return 1.0 - t * t
        return (self.output_high - self.output_low) * 0.5 * (1.0 - t * t)

    def forward_trace(self, x):
        """
        Run the network and keep every intermediate.

        Args:
            x: input vector (in,) or batch (N, in)

        Returns:
            tuple: (pre_activations, activations) where activations[0] is the
                   batched input and activations[-1] the squashed output
        """
        a = self._as_batch(x, self.input_width, "input")
        pre_activations = []
        activations = [a]
        last = self.num_layers - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = a @ w + b
            pre_activations.append(z)
            a = self._squash(z) if i == last else np.maximum(z, 0.0)
            activations.append(a)
        return pre_activations, activations

    def forward(self, x) -> np.ndarray:
        """
        Evaluate the network.

        Args:
            x: input vector (in,) or batch (N, in)

        Returns:
            np.ndarray: (out,) for a vector input, (N, out) for a batch
        """
        _, activations = self.forward_trace(x)
        out = activations[-1]
        return out[0] if np.ndim(x) == 1 else out

    def backward(self, x, output_grad) -> GradientSet:
        """
        Backpropagate dLoss/dOutput through the network.

        For a batch the parameter gradients are summed over rows, so callers
        scale output_grad by 1/N to differentiate a mean loss.

        Args:
            x: input vector or batch (forward pass is recomputed)
            output_grad: dLoss/dOutput, same leading shape as x

        Returns:
            GradientSet: parameter gradients plus dLoss/dInput
        """
        pre_activations, activations = self.forward_trace(x)
        delta = self._as_batch(output_grad, self.output_width, "output_grad")
        if delta.shape[0] != activations[0].shape[0]:
            raise ShapeError(
                f"output_grad has {delta.shape[0]} rows but input has {activations[0].shape[0]}"
            )

        grad_w = [None] * self.num_layers
        grad_b = [None] * self.num_layers
        delta = delta * self._squash_grad(pre_activations[-1])
        for i in range(self.num_layers - 1, -1, -1):
            grad_w[i] = activations[i].T @ delta
            grad_b[i] = delta.sum(axis=0)
            delta = delta @ self.weights[i].T
            if i > 0:
                delta = delta * (pre_activations[i - 1] > 0.0)

        d_input = delta[0] if np.ndim(x) == 1 else delta
        return GradientSet(weights=grad_w, biases=grad_b, input=d_input)

    # ------------------------------------------------------------------
    # Optimization
    # ------------------------------------------------------------------

    def _check_congruent_grads(self, grads: GradientSet):
        if len(grads.weights) != self.num_layers or len(grads.biases) != self.num_layers:
            raise ShapeError("GradientSet layer count does not match network")
        for i in range(self.num_layers):
            if grads.weights[i].shape != self.weights[i].shape or grads.biases[i].shape != self.biases[i].shape:
                raise ShapeError(f"GradientSet layer {i} is not congruent with network")

    def adam_step(self, grads: GradientSet, learning_rate: float):
        """
        Apply one bias-corrected Adam update in place.

        Args:
            grads: gradients congruent with this network
            learning_rate: positive step size

        Raises:
            NonFiniteError: if any gradient is NaN/Inf (network left untouched)
        """
        if not learning_rate > 0:
            raise ValueError(f"learning_rate must be positive, got {learning_rate}")
        self._check_congruent_grads(grads)
        if not grads.all_finite():
            raise NonFiniteError(f"Non-finite gradient at Adam step {self.adam_step_count + 1}")

        # All-zero gradients: moments decay, parameters stay put
        move = not grads.is_zero()
        self.adam_step_count += 1
        t = self.adam_step_count
        b1, b2, eps = self.adam_beta1, self.adam_beta2, self.adam_eps
        correction1 = 1.0 - b1 ** t
        correction2 = 1.0 - b2 ** t

        groups = (
            (self.weights, self.m_weights, self.v_weights, grads.weights),
            (self.biases, self.m_biases, self.v_biases, grads.biases),
        )
        for params, ms, vs, gs in groups:
            for p, m, v, g in zip(params, ms, vs, gs):
                m *= b1
                m += (1.0 - b1) * g
                v *= b2
                v += (1.0 - b2) * g * g
                if move:
                    p -= learning_rate * (m / correction1) / (np.sqrt(v / correction2) + eps)

    def soft_update_from(self, source: "DenseNet", tau: float):
        """Blend parameters in place: p' <- tau * p + (1 - tau) * p'."""
        if not self.is_congruent(source):
            raise ShapeError(f"soft_update between {self.layer_sizes} and {source.layer_sizes}")
        if not 0.0 <= tau <= 1.0:
            raise ValueError(f"tau must lie in [0, 1], got {tau}")
        if tau == 0.0:
            return
        for dst, src in zip(self.parameters(), source.parameters()):
            if tau == 1.0:
                dst[...] = src
            else:
                dst[...] = tau * src + (1.0 - tau) * dst

    def clone(self) -> "DenseNet":
        """Parameter-identical copy with a fresh optimizer state."""
        twin = DenseNet.__new__(DenseNet)
        twin.layer_sizes = list(self.layer_sizes)
        twin.output_activation = self.output_activation
        twin.output_low = None if self.output_low is None else self.output_low.copy()
        twin.output_high = None if self.output_high is None else self.output_high.copy()
        twin.weights = [w.copy() for w in self.weights]
        twin.biases = [b.copy() for b in self.biases]
        twin.adam_beta1 = self.adam_beta1
        twin.adam_beta2 = self.adam_beta2
        twin.adam_eps = self.adam_eps
        twin.reset_optimizer()
        return twin

    # ------------------------------------------------------------------
    # Serialization
    # ------------------------------------------------------------------

    def header(self) -> dict:
        return {
            "version": CHECKPOINT_VERSION,
            "layer_sizes": list(self.layer_sizes),
            "output_activation": self.output_activation,
            "adam": {
                "beta1": self.adam_beta1,
                "beta2": self.adam_beta2,
                "eps": self.adam_eps,
                "step": self.adam_step_count,
            },
        }

    def to_arrays(self, prefix: str = "") -> dict:
        """Flatten header, parameters and optimizer state into named arrays."""
        arrays = {f"{prefix}header": np.array(json.dumps(self.header()))}
        for i in range(self.num_layers):
            arrays[f"{prefix}W{i}"] = self.weights[i]
            arrays[f"{prefix}b{i}"] = self.biases[i]
            arrays[f"{prefix}mW{i}"] = self.m_weights[i]
            arrays[f"{prefix}vW{i}"] = self.v_weights[i]
            arrays[f"{prefix}mb{i}"] = self.m_biases[i]
            arrays[f"{prefix}vb{i}"] = self.v_biases[i]
        if self.output_activation == "scaled_tanh":
            arrays[f"{prefix}output_low"] = self.output_low
            arrays[f"{prefix}output_high"] = self.output_high
        return arrays

    @classmethod
    def from_arrays(cls, arrays, prefix: str = "") -> "DenseNet":
        """
        Rebuild a network from arrays produced by to_arrays().

        Raises:
            CheckpointError: missing arrays, wrong version or inconsistent shapes
        """
        try:
            header = json.loads(str(arrays[f"{prefix}header"][()]))
        except (KeyError, ValueError, TypeError) as e:
            raise CheckpointError(f"Missing or unreadable network header '{prefix}header': {e}")

        version = header.get("version")
        if version != CHECKPOINT_VERSION:
            raise CheckpointError(f"Unsupported network checkpoint version {version!r}, expected {CHECKPOINT_VERSION!r}")

        try:
            net = cls.__new__(cls)
            net.layer_sizes = [int(s) for s in header["layer_sizes"]]
            net.output_activation = header["output_activation"]
            adam = header["adam"]
            net.adam_beta1 = float(adam["beta1"])
            net.adam_beta2 = float(adam["beta2"])
            net.adam_eps = float(adam["eps"])
            net.adam_step_count = int(adam["step"])
            n = len(net.layer_sizes) - 1
            load = lambda key: np.array(arrays[f"{prefix}{key}"], dtype=np.float64)
            net.weights = [load(f"W{i}") for i in range(n)]
            net.biases = [load(f"b{i}") for i in range(n)]
            net.m_weights = [load(f"mW{i}") for i in range(n)]
            net.v_weights = [load(f"vW{i}") for i in range(n)]
            net.m_biases = [load(f"mb{i}") for i in range(n)]
            net.v_biases = [load(f"vb{i}") for i in range(n)]
            net.output_low = None
            net.output_high = None
            if net.output_activation == "scaled_tanh":
                net.output_low = load("output_low")
                net.output_high = load("output_high")
        except (KeyError, ValueError, TypeError, EOFError, OSError, zipfile.BadZipFile) as e:
            raise CheckpointError(f"Corrupt network arrays under prefix '{prefix}': {e}")

        if net.output_activation not in OUTPUT_ACTIVATIONS:
            raise CheckpointError(f"Unknown output activation {net.output_activation!r} under prefix '{prefix}'")
        if net.output_activation == "scaled_tanh":
            width = (net.layer_sizes[-1],)
            if net.output_low.shape != width or net.output_high.shape != width:
                raise CheckpointError(
                    f"Output bounds shapes {net.output_low.shape}/{net.output_high.shape} != {width}"
                )
        for i, (fan_in, fan_out) in enumerate(zip(net.layer_sizes[:-1], net.layer_sizes[1:])):
            expected_w = (fan_in, fan_out)
            for arr in (net.weights[i], net.m_weights[i], net.v_weights[i]):
                if arr.shape != expected_w:
                    raise CheckpointError(f"Layer {i} weight shape {arr.shape} != {expected_w}")
            for arr in (net.biases[i], net.m_biases[i], net.v_biases[i]):
                if arr.shape != (fan_out,):
                    raise CheckpointError(f"Layer {i} bias shape {arr.shape} != {(fan_out,)}")
        return net


# ======================================================================
# Functional API
# ======================================================================

def forward(net: DenseNet, x) -> np.ndarray:
    return net.forward(x)


def backward(net: DenseNet, x, output_grad) -> GradientSet:
    return net.backward(x, output_grad)


def adam_step(net: DenseNet, grads: GradientSet, learning_rate: float) -> DenseNet:
    net.adam_step(grads, learning_rate)
    return net


def soft_update(target: DenseNet, source: DenseNet, tau: float) -> DenseNet:
    """Polyak-blend source into target in place and return target."""
    target.soft_update_from(source, tau)
    return target


def clone_into_target(source: DenseNet) -> DenseNet:
    return source.clone()


def write_archive(path, arrays: dict) -> None:
    """
    Write named arrays as an .npz archive at exactly `path`.

    Entries carry a fixed timestamp, so equal arrays give equal bytes.
    """
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as archive:
        for name, arr in arrays.items():
            info = zipfile.ZipInfo(f"{name}.npy", date_time=ARCHIVE_TIMESTAMP)
            with archive.open(info, "w", force_zip64=True) as f:
                np.lib.format.write_array(f, np.asanyarray(arr), allow_pickle=False)


def save_network(net: DenseNet, path) -> None:
    """Write a single network as a ckpt-v1 archive at exactly `path`."""
    write_archive(path, net.to_arrays())


def load_network(path) -> DenseNet:
    """
    Read a network written by save_network().

    Raises:
        CheckpointError: unreadable, truncated or wrong-version file
    """
    try:
        with np.load(path, allow_pickle=False) as data:
            arrays = {key: data[key] for key in data.files}
    except (OSError, ValueError, EOFError, zipfile.BadZipFile) as e:
        raise CheckpointError(f"Cannot read network checkpoint {path}: {e}")
    return DenseNet.from_arrays(arrays)
