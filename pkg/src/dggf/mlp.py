"""Fully connected scalar-output networks and their on-disk format."""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad

MAGIC = b"DGGF"
FORMAT_VERSION = 1


class ModelFileError(ValueError):
    """Base class for unreadable model files."""


class TruncatedModelError(ModelFileError):
    pass


class BadMagicError(ModelFileError):
    pass


class VersionMismatchError(ModelFileError):
    pass


@dataclass
class DerivativeBundle:
    """Value, input gradient and Hessian diagonal of a network output.

    For a single point ``grad`` and ``hess_diag`` have shape ``(n,)``; for a
    batch the coordinate axis comes first, ``(n, B)``.
    """

    value: float | np.ndarray
    grad: np.ndarray
    hess_diag: np.ndarray

    def __post_init__(self):
        if len(self.grad) != len(self.hess_diag):
            raise ValueError("grad and hess_diag must cover the same coordinates")

    @property
    def laplacian(self):
        return sum(self.hess_diag[i] for i in range(len(self.hess_diag)))


@dataclass
class Mlp:
    layer_sizes: tuple[int, ...]
    activation: str
    weights: list = field(repr=False)
    biases: list = field(repr=False)

    def __post_init__(self):
        self.layer_sizes = tuple(int(s) for s in self.layer_sizes)
        _check_layer_sizes(self.layer_sizes)
        if self.layer_sizes[-1] != 1:
            raise ValueError("networks are scalar valued: last layer size must be 1")
        self._act = ad.get_activation(self.activation)
        if len(self.weights) != len(self.layer_sizes) - 1 or len(self.biases) != len(self.weights):
            raise ValueError("parameter list does not match layer_sizes")
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            expect = (self.layer_sizes[l + 1], self.layer_sizes[l])
            if tuple(w.shape) != expect or tuple(b.shape) != (expect[0],):
                raise ValueError(f"layer {l}: parameter shapes {w.shape}, {b.shape} != {expect}")

    @property
    def input_dim(self) -> int:
        return self.layer_sizes[0]

    @property
    def n_params(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def params(self) -> list:
        """Parameters in storage order: W0, b0, W1, b1, ..."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def with_params(self, params) -> "Mlp":
        params = list(params)
        return Mlp(self.layer_sizes, self.activation, params[0::2], params[1::2])

    def copy(self) -> "Mlp":
        return self.with_params([np.array(p, dtype=np.float64) for p in self.params()])

    def traced(self) -> "Mlp":
        """Copy whose parameters are fresh leaf nodes of a reverse-mode graph."""
        return self.with_params([ad.Var(p) for p in self.params()])

    def _check_x(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.input_dim:
            raise ValueError(f"input dimension {x.shape[-1]} != network input {self.input_dim}")
        return x

    def __call__(self, x):
        """Batched forward pass; ``x`` is (B, n) -> (B,), or (n,) -> float."""
        x = self._check_x(x)
        if x.ndim == 1:
            return float(ad.mlp_forward(self.weights, self.biases, self._act, x[None])[0])
        return ad.mlp_forward(self.weights, self.biases, self._act, x)

    def derivatives(self, x, coords=None):
        """Batched value/grad/Hessian-diagonal along ``coords`` (default: all)."""
        x = self._check_x(x)
        if coords is None:
            coords = range(self.input_dim)
        single = x.ndim == 1
        v, g, h = ad.taylor_forward(self.weights, self.biases, self._act, np.atleast_2d(x), coords)
        if single:
            return DerivativeBundle(float(ad._val(v)[0]), ad._val(g)[:, 0], ad._val(h)[:, 0])
        return DerivativeBundle(v, g, h)


def _check_layer_sizes(layer_sizes):
    if len(layer_sizes) < 2:
        raise ValueError("layer_sizes needs at least input and output sizes")
    if any(s <= 0 for s in layer_sizes):
        raise ValueError(f"layer sizes must be positive, got {layer_sizes}")


def init_mlp(layer_sizes, activation: str = "tanh", seed: int = 0) -> Mlp:
    """Scaled-uniform (Glorot) weights, zero biases; deterministic in ``seed``."""
    layer_sizes = tuple(int(s) for s in layer_sizes)
    _check_layer_sizes(layer_sizes)
    ad.get_activation(activation)
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return Mlp(layer_sizes, activation, weights, biases)


def forward(net: Mlp, x) -> float:
    return net(x)


def eval_with_derivatives(net: Mlp, x, coords=None) -> DerivativeBundle:
    """Exact value, gradient and Hessian diagonal of ``net`` at ``x``."""
    return net.derivatives(x, coords)


def param_bytes(net: Mlp) -> bytes:
    return b"".join(np.ascontiguousarray(p, dtype="<f8").tobytes() for p in net.params())


def param_digest(net: Mlp) -> str:
    return hashlib.sha256(param_bytes(net)).hexdigest()


def save_model(net: Mlp, metadata: dict | None = None) -> bytes:
    header = {
        "layer_sizes": list(net.layer_sizes),
        "activation": net.activation,
        "metadata": metadata or {},
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    return MAGIC + bytes([FORMAT_VERSION]) + struct.pack("<I", len(blob)) + blob + param_bytes(net)


def load_model(data: bytes) -> tuple[Mlp, dict]:
    if len(data) < 4:
        raise TruncatedModelError("file shorter than magic")
    if data[:4] != MAGIC:
        raise BadMagicError(f"bad magic {data[:4]!r}")
    if len(data) < 9:
        raise TruncatedModelError("file ends inside the fixed header")
    version = data[4]
    if version != FORMAT_VERSION:
        raise VersionMismatchError(f"model format version {version}, expected {FORMAT_VERSION}")
    (n,) = struct.unpack("<I", data[5:9])
    if len(data) < 9 + n:
        raise TruncatedModelError("file ends inside the metadata block")
    try:
        header = json.loads(data[9 : 9 + n].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ModelFileError(f"unreadable metadata block: {exc}") from None
    sizes = tuple(header["layer_sizes"])
    payload = data[9 + n :]
    shapes = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        shapes += [(fan_out, fan_in), (fan_out,)]
    expected = 8 * sum(int(np.prod(s)) for s in shapes)
    if len(payload) != expected:
        raise TruncatedModelError(f"parameter payload has {len(payload)} bytes, expected {expected}")
    flat = np.frombuffer(payload, dtype="<f8").astype(np.float64)
    params, off = [], 0
    for s in shapes:
        size = int(np.prod(s))
        params.append(flat[off : off + size].reshape(s).copy())
        off += size
    net = Mlp(sizes, header["activation"], params[0::2], params[1::2])
    return net, header["metadata"]


def write_model(path, net: Mlp, metadata: dict | None = None) -> None:
    with open(path, "wb") as fh:
        fh.write(save_model(net, metadata))


def read_model(path) -> tuple[Mlp, dict]:
    with open(path, "rb") as fh:
        return load_model(fh.read())
