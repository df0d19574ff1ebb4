"""Feed-forward networks with per-layer activations and a checksummed checkpoint format.

The same class instantiates every network in the framework: the physics
surrogate (sine activations), the denoiser and the baseline regressor (tanh,
dropout), and the residual-density networks of the regularizers.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .errors import CheckpointError, ConfigurationError

CHECKPOINT_MAGIC = "pgdnet-checkpoint"
CHECKPOINT_VERSION = 1

_ACTIVATIONS = ("sine", "tanh", "identity")


def n_params_for(layer_sizes: Sequence[int]) -> int:
    return sum(a * b + b for a, b in zip(layer_sizes[:-1], layer_sizes[1:]))


@dataclass
class Mlp:
    """Fully connected network with a flat parameter vector.

    ``activations`` has one entry per layer (applied after that layer's
    affine map); the last entry is usually ``identity``. ``params`` stores,
    layer by layer, the row-major weight matrix followed by the bias vector.
    ``input_norm`` is an affine (shift, scale) pair per input; scales must be
    strictly positive. ``output_norm`` maps the raw head output to physical
    units.
    """

    layer_sizes: tuple[int, ...]
    activations: tuple[str, ...]
    dropout_rate: float
    params: np.ndarray
    input_shift: np.ndarray
    input_scale: np.ndarray
    output_shift: float = 0.0
    output_scale: float = 1.0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.layer_sizes = tuple(int(s) for s in self.layer_sizes)
        self.activations = tuple(self.activations)
        if len(self.layer_sizes) < 2:
            raise ConfigurationError("network needs at least input and output sizes")
        if any(s <= 0 for s in self.layer_sizes):
            raise ConfigurationError("layer sizes must be positive")
        if len(self.activations) != len(self.layer_sizes) - 1:
            raise ConfigurationError(
                f"expected {len(self.layer_sizes) - 1} activations, "
                f"got {len(self.activations)}"
            )
        for a in self.activations:
            if a not in _ACTIVATIONS:
                raise ConfigurationError(f"unknown activation '{a}'")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigurationError("dropout_rate must be in [0, 1)")
        self.params = np.asarray(self.params, dtype=np.float64)
        if self.params.shape != (n_params_for(self.layer_sizes),):
            raise ConfigurationError(
                f"params length {self.params.size} != "
                f"{n_params_for(self.layer_sizes)} required by layer sizes"
            )
        self.input_shift = np.asarray(self.input_shift, dtype=np.float64)
        self.input_scale = np.asarray(self.input_scale, dtype=np.float64)
        d = self.layer_sizes[0]
        if self.input_shift.shape != (d,) or self.input_scale.shape != (d,):
            raise ConfigurationError("input_norm must have one (shift, scale) per input")
        if np.any(self.input_scale <= 0):
            raise ConfigurationError("input_norm scales must be strictly positive")

    # -- construction --------------------------------------------------------

    @staticmethod
    def create(
        layer_sizes: Sequence[int],
        activations: Sequence[str] | str = "tanh",
        dropout_rate: float = 0.0,
        seed: int = 0,
        input_norm: tuple[np.ndarray, np.ndarray] | None = None,
        output_norm: tuple[float, float] = (0.0, 1.0),
        sine_frequency: float = 30.0,
    ) -> "Mlp":
        """Initialize a network.

        Tanh layers use Glorot-uniform weights. Sine layers follow the usual
        recipe for sine networks with the base frequency w0 folded into the
        weights: the first layer draws from U(-w0/n_in, w0/n_in), later sine
        layers from U(-sqrt(6/n_in), sqrt(6/n_in)). w0 = 30 is the classic
        image-fitting default; smooth PDE surrogates train better around 3-10.
        """
        layer_sizes = tuple(int(s) for s in layer_sizes)
        if isinstance(activations, str):
            activations = [activations] * (len(layer_sizes) - 2) + ["identity"]
            if len(layer_sizes) == 2:
                activations = ["identity"]
        activations = tuple(activations)
        rng = np.random.default_rng(seed)
        chunks = []
        for li, (nin, nout) in enumerate(zip(layer_sizes[:-1], layer_sizes[1:])):
            act = activations[li]
            if act == "sine":
                bound = sine_frequency / nin if li == 0 else np.sqrt(6.0 / nin)
            else:
                bound = np.sqrt(6.0 / (nin + nout))
            W = rng.uniform(-bound, bound, size=(nin, nout))
            b = rng.uniform(-1.0, 1.0, size=nout) / np.sqrt(nin)
            chunks.append(W.ravel())
            chunks.append(b)
        params = np.concatenate(chunks)
        if input_norm is None:
            shift = np.zeros(layer_sizes[0])
            scale = np.ones(layer_sizes[0])
        else:
            shift = np.asarray(input_norm[0], dtype=np.float64)
            scale = np.asarray(input_norm[1], dtype=np.float64)
        return Mlp(
            layer_sizes=layer_sizes,
            activations=activations,
            dropout_rate=dropout_rate,
            params=params,
            input_shift=shift,
            input_scale=scale,
            output_shift=float(output_norm[0]),
            output_scale=float(output_norm[1]),
        )

    @property
    def n_inputs(self) -> int:
        return self.layer_sizes[0]

    def layer_slices(self):
        """Yield (weight slice, bias slice, n_in, n_out) per layer."""
        off = 0
        for nin, nout in zip(self.layer_sizes[:-1], self.layer_sizes[1:]):
            wsl = slice(off, off + nin * nout)
            off += nin * nout
            bsl = slice(off, off + nout)
            off += nout
            yield wsl, bsl, nin, nout

    # -- forward passes --------------------------------------------------------

    def forward(
        self,
        x: np.ndarray,
        params=None,
        mode: str = "eval",
        rng: np.random.Generator | None = None,
    ):
        """Plain matrix forward pass: x is (n, d_in), returns (n, d_out).

        ``params`` may be a numpy vector or a tape Var; in train mode dropout
        masks are drawn from ``rng`` with keep probability 1 - dropout_rate
        and survivors scaled by its inverse.
        """
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.layer_sizes[0]:
            raise ConfigurationError(
                f"input shape {x.shape} incompatible with {self.layer_sizes[0]} inputs"
            )
        h = (x - self.input_shift) / self.input_scale
        return self._run_layers(h, params, mode, rng)

    def forward_cols(
        self,
        cols: Sequence,
        params=None,
        mode: str = "eval",
        rng: np.random.Generator | None = None,
    ):
        """Generic forward over input columns (arrays, Vars, or Dual2).

        Returns the squeezed (n,) output payload for single-output heads,
        else the (n, d_out) payload.
        """
        if len(cols) != self.layer_sizes[0]:
            raise ConfigurationError(
                f"{len(cols)} input columns incompatible with "
                f"{self.layer_sizes[0]} network inputs"
            )
        normed = [
            (c - self.input_shift[i]) * (1.0 / self.input_scale[i])
            for i, c in enumerate(cols)
        ]
        h = ad.concat_cols(normed)
        out = self._run_layers(h, params, mode, rng)
        if self.layer_sizes[-1] == 1:
            return out.reshape(-1)
        return out

    def _run_layers(self, h, params, mode, rng):
        if params is None:
            params = self.params
        if mode not in ("train", "eval"):
            raise ConfigurationError(f"unknown forward mode '{mode}'")
        use_dropout = mode == "train" and self.dropout_rate > 0.0
        if use_dropout and rng is None:
            raise ConfigurationError("train-mode dropout requires an rng")
        keep = 1.0 - self.dropout_rate
        n_layers = len(self.layer_sizes) - 1
        for li, (wsl, bsl, nin, nout) in enumerate(self.layer_slices()):
            W = params[wsl].reshape(nin, nout)
            b = params[bsl]
            h = h @ W + b
            act = self.activations[li]
            if act == "sine":
                h = ad.sin(h)
            elif act == "tanh":
                h = ad.tanh(h)
            if use_dropout and li < n_layers - 1:
                n_rows = ad._value(h.val if isinstance(h, ad.Dual2) else h).shape[0]
                mask = (rng.random((n_rows, nout)) < keep) / keep
                h = h * mask
        if self.output_scale != 1.0 or self.output_shift != 0.0:
            h = h * self.output_scale + self.output_shift
        return h

    def predict(self, x: np.ndarray) -> np.ndarray:
        """Deterministic eval-mode forward, squeezed to (n,) for scalar heads."""
        out = self.forward(x)
        return out[:, 0] if self.layer_sizes[-1] == 1 else out

    def content_hash(self) -> str:
        h = hashlib.sha256()
        h.update(repr(self.layer_sizes).encode())
        h.update(repr(self.activations).encode())
        h.update(self.params.tobytes())
        return h.hexdigest()


# -- checkpoint format ---------------------------------------------------------
#
# Versioned, line-oriented text so checkpoints diff cleanly:
#
#   pgdnet-checkpoint v1
#   layer_sizes=1,24,24,1
#   activations=sine,sine,identity
#   dropout_rate=<repr>
#   input_shift=<hex of float64 LE>
#   input_scale=<hex>
#   output_norm=<repr>,<repr>
#   meta=<single-line json>
#   params=<hex of float64 LE>
#   checksum=<sha256 over all preceding lines>


def _hex(a: np.ndarray) -> str:
    return np.asarray(a, dtype="<f8").tobytes().hex()


def _unhex(s: str) -> np.ndarray:
    return np.frombuffer(bytes.fromhex(s), dtype="<f8").copy()


def save_checkpoint(net: Mlp, path, meta: dict | None = None) -> None:
    meta = dict(net.meta if meta is None else meta)
    lines = [
        f"{CHECKPOINT_MAGIC} v{CHECKPOINT_VERSION}",
        "layer_sizes=" + ",".join(str(s) for s in net.layer_sizes),
        "activations=" + ",".join(net.activations),
        f"dropout_rate={net.dropout_rate!r}",
        "input_shift=" + _hex(net.input_shift),
        "input_scale=" + _hex(net.input_scale),
        f"output_norm={net.output_shift!r},{net.output_scale!r}",
        "meta=" + json.dumps(meta, sort_keys=True),
        "params=" + _hex(net.params),
    ]
    body = "\n".join(lines)
    digest = hashlib.sha256(body.encode("utf-8")).hexdigest()
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(body + "\nchecksum=" + digest + "\n")


def load_checkpoint(path) -> Mlp:
    try:
        with open(path, encoding="utf-8") as f:
            text = f.read()
    except OSError as e:
        raise CheckpointError(f"cannot read checkpoint: {e}") from e
    lines = text.strip("\n").split("\n")
    if not lines or not lines[0].startswith(CHECKPOINT_MAGIC):
        raise CheckpointError("not a network checkpoint file")
    version = lines[0].removeprefix(CHECKPOINT_MAGIC).strip()
    if version != f"v{CHECKPOINT_VERSION}":
        raise CheckpointError(
            f"checkpoint version {version} unsupported; "
            f"this build reads v{CHECKPOINT_VERSION}"
        )
    if not lines[-1].startswith("checksum="):
        raise CheckpointError("checkpoint truncated: checksum line missing")
    body = "\n".join(lines[:-1])
    stated = lines[-1].split("=", 1)[1]
    actual = hashlib.sha256(body.encode("utf-8")).hexdigest()
    if stated != actual:
        raise CheckpointError("checkpoint corrupt: checksum mismatch")
    fields = {}
    for ln in lines[1:-1]:
        key, _, value = ln.partition("=")
        fields[key] = value
    try:
        out_shift, out_scale = (float(v) for v in fields["output_norm"].split(","))
        return Mlp(
            layer_sizes=tuple(int(s) for s in fields["layer_sizes"].split(",")),
            activations=tuple(fields["activations"].split(",")),
            dropout_rate=float(fields["dropout_rate"]),
            params=_unhex(fields["params"]),
            input_shift=_unhex(fields["input_shift"]),
            input_scale=_unhex(fields["input_scale"]),
            output_shift=out_shift,
            output_scale=out_scale,
            meta=json.loads(fields["meta"]),
        )
    except (KeyError, ValueError) as e:
        raise CheckpointError(f"checkpoint field malformed: {e}") from e
