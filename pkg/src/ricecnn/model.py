"""The Simple CNN architecture: layer specs, weight store, freeze policies,
head replacement, weight-file persistence and activation export.

The canonical network takes a 224x224x3 image through five valid 3x3
convolutions interleaved with four 2x2 max-pools (16/32/64/64/64 filters),
then flatten -> dropout(0.3) -> dense(100, relu) -> dense(num_classes,
softmax). That ladder yields a 222x222x16 first conv map, a 10x10x64 last
conv map, and 738,449 trainable parameters for the 9-class head.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field, replace

import numpy as np

from .rng import RngState
from .tensor import (
    ShapeError,
    Tensor,
    conv2d_valid,
    cross_entropy,
    dense,
    dropout,
    flatten,
    maxpool2d,
    relu,
    softmax,
)

INPUT_SHAPE = (224, 224, 3)
DEFAULT_DROPOUT = 0.3


@dataclass(frozen=True)
class LayerSpec:
    kind: str  # conv | pool | flatten | dense | dropout
    name: str
    filters: int = 0       # conv
    kernel: int = 0        # conv
    units: int = 0         # dense
    rate: float = 0.0      # dropout
    activation: str = "none"  # none | relu | softmax


@dataclass(frozen=True)
class ArchitectureSpec:
    input_shape: tuple[int, int, int]
    layers: tuple[LayerSpec, ...]

    @property
    def num_classes(self) -> int:
        head = self.head_layer()
        return head.units

    def head_layer(self) -> LayerSpec:
        for layer in reversed(self.layers):
            if layer.kind == "dense":
                return layer
        raise ShapeError("architecture has no dense head")

    def parameterized_layers(self) -> list[LayerSpec]:
        return [l for l in self.layers if l.kind in ("conv", "dense")]

    def to_dict(self) -> dict:
        return {
            "input_shape": list(self.input_shape),
            "layers": [
                {k: v for k, v in vars(l).items()} for l in self.layers
            ],
        }

    @staticmethod
    def from_dict(d: dict) -> "ArchitectureSpec":
        layers = tuple(LayerSpec(**entry) for entry in d["layers"])
        return ArchitectureSpec(tuple(d["input_shape"]), layers)


def infer_shapes(spec: ArchitectureSpec) -> list[tuple[int, ...]]:
    """Output shape after each layer, starting from the spec input shape.
    Raises ShapeError if any layer cannot accept its input."""
    shape: tuple[int, ...] = spec.input_shape
    out: list[tuple[int, ...]] = []
    for layer in spec.layers:
        if layer.kind == "conv":
            h, w, _ = shape
            if layer.kernel > h or layer.kernel > w:
                raise ShapeError(f"{layer.name}: kernel exceeds input {h}x{w}")
            shape = (h - layer.kernel + 1, w - layer.kernel + 1, layer.filters)
        elif layer.kind == "pool":
            h, w, c = shape
            if h < 2 or w < 2:
                raise ShapeError(f"{layer.name}: input {h}x{w} smaller than pool window")
            shape = (h // 2, w // 2, c)
        elif layer.kind == "flatten":
            shape = (int(np.prod(shape)),)
        elif layer.kind == "dense":
            if len(shape) != 1:
                raise ShapeError(f"{layer.name}: dense needs a flat input, got {shape}")
            shape = (layer.units,)
        elif layer.kind == "dropout":
            pass
        else:
            raise ShapeError(f"unknown layer kind {layer.kind!r}")
        out.append(shape)
    return out


@dataclass
class WeightEntry:
    name: str          # "<layer>.weight" or "<layer>.bias"
    layer: str
    kind: str          # conv | dense
    tensor: Tensor

    @property
    def trainable(self) -> bool:
        return self.tensor.trainable


class WeightStore:
    """Ordered, named parameter tensors with per-tensor trainability flags."""

    def __init__(self, entries: list[WeightEntry]):
        self.entries = entries
        self._by_name = {e.name: e for e in entries}
        if len(self._by_name) != len(entries):
            raise ValueError("duplicate parameter names in weight store")

    def __iter__(self):
        return iter(self.entries)

    def __contains__(self, name: str) -> bool:
        return name in self._by_name

    def get(self, name: str) -> Tensor:
        return self._by_name[name].tensor

    def names(self) -> list[str]:
        return [e.name for e in self.entries]

    def tensors(self) -> dict[str, Tensor]:
        return {e.name: e.tensor for e in self.entries}

    def head_layer_name(self) -> str:
        for e in reversed(self.entries):
            if e.kind == "dense":
                return e.layer
        raise ShapeError("weight store has no dense head")

    def total_parameters(self) -> int:
        return sum(e.tensor.size for e in self.entries)

    def clone(self) -> "WeightStore":
        return WeightStore([
            WeightEntry(e.name, e.layer, e.kind, e.tensor.detached()) for e in self.entries
        ])

    def zero_grads(self) -> None:
        for e in self.entries:
            e.tensor.zero_grad()


def _he_uniform(rng: RngState, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, shape)


def _init_layer(layer: LayerSpec, in_shape: tuple[int, ...], rng: RngState) -> list[WeightEntry]:
    stream = rng.derive(f"init/{layer.name}")
    if layer.kind == "conv":
        c = in_shape[2]
        k = layer.kernel
        wshape = (k, k, c, layer.filters)
        w = _he_uniform(stream, wshape, fan_in=k * k * c)
        b = np.zeros(layer.filters)
    else:  # dense
        n = in_shape[0]
        w = _he_uniform(stream, (n, layer.units), fan_in=n)
        b = np.zeros(layer.units)
    return [
        WeightEntry(f"{layer.name}.weight", layer.name, layer.kind,
                    Tensor(w, trainable=True, name=f"{layer.name}.weight")),
        WeightEntry(f"{layer.name}.bias", layer.name, layer.kind,
                    Tensor(b, trainable=True, name=f"{layer.name}.bias")),
    ]


def init_weights(spec: ArchitectureSpec, rng: RngState) -> WeightStore:
    """Fresh weights for every parameterized layer: He-uniform weights, zero
    biases, everything trainable. Each layer draws from its own named
    substream, so layer inits are independent of one another."""
    shapes = infer_shapes(spec)
    entries: list[WeightEntry] = []
    in_shape = spec.input_shape
    for layer, out_shape in zip(spec.layers, shapes):
        if layer.kind in ("conv", "dense"):
            entries.extend(_init_layer(layer, in_shape, rng))
        in_shape = out_shape
    return WeightStore(entries)


def simple_cnn_spec(num_classes: int, dropout_rate: float = DEFAULT_DROPOUT,
                    input_shape: tuple[int, int, int] = INPUT_SHAPE) -> ArchitectureSpec:
    if num_classes < 2:
        raise ValueError(f"need at least 2 classes, got {num_classes}")
    layers = []
    for i, filters in enumerate((16, 32, 64, 64, 64), start=1):
        layers.append(LayerSpec("conv", f"conv{i}", filters=filters, kernel=3,
                                activation="relu"))
        if i < 5:
            layers.append(LayerSpec("pool", f"pool{i}"))
    layers.append(LayerSpec("flatten", "flatten"))
    layers.append(LayerSpec("dropout", "dropout", rate=dropout_rate))
    layers.append(LayerSpec("dense", "fc1", units=100, activation="relu"))
    layers.append(LayerSpec("dense", "head", units=num_classes, activation="softmax"))
    return ArchitectureSpec(input_shape, tuple(layers))


def build_simple_cnn(num_classes: int, rng: RngState,
                     dropout_rate: float = DEFAULT_DROPOUT,
                     input_shape: tuple[int, int, int] = INPUT_SHAPE,
                     ) -> tuple[ArchitectureSpec, WeightStore]:
    spec = simple_cnn_spec(num_classes, dropout_rate, input_shape)
    return spec, init_weights(spec, rng)


def forward(spec: ArchitectureSpec, weights: WeightStore, image: Tensor | np.ndarray,
            mode: str = "infer", rng: RngState | None = None,
            capture: dict[str, np.ndarray] | None = None) -> Tensor:
    """Run the network, returning class probabilities (softmax output).

    mode "train" activates dropout (requires rng); "infer" is deterministic.
    When `capture` is given, the post-activation output of every conv layer
    is stored there under the layer name.
    """
    if mode not in ("train", "infer"):
        raise ValueError(f"mode must be 'train' or 'infer', got {mode!r}")
    x = image if isinstance(image, Tensor) else Tensor(image)
    if x.shape != spec.input_shape:
        raise ShapeError(f"image shape {x.shape} does not match spec input {spec.input_shape}")
    training = mode == "train"
    for layer in spec.layers:
        if layer.kind == "conv":
            x = conv2d_valid(x, weights.get(f"{layer.name}.weight"),
                             weights.get(f"{layer.name}.bias"))
            if layer.activation == "relu":
                x = relu(x)
            if capture is not None:
                capture[layer.name] = x.data.copy()
        elif layer.kind == "pool":
            x = maxpool2d(x)
        elif layer.kind == "flatten":
            x = flatten(x)
        elif layer.kind == "dropout":
            x = dropout(x, layer.rate, rng, training)
        elif layer.kind == "dense":
            x = dense(x, weights.get(f"{layer.name}.weight"),
                      weights.get(f"{layer.name}.bias"))
            if layer.activation == "relu":
                x = relu(x)
            elif layer.activation == "softmax":
                x = softmax(x)
    return x


def loss_for_sample(spec: ArchitectureSpec, weights: WeightStore, image, label: int,
                    rng: RngState | None = None, mode: str = "train") -> tuple[Tensor, Tensor]:
    """(cross-entropy loss, probability vector) for one labeled image."""
    probs = forward(spec, weights, image, mode=mode, rng=rng)
    target = np.zeros(probs.size)
    target[label] = 1.0
    return cross_entropy(probs, target), probs


def replace_head(spec: ArchitectureSpec, weights: WeightStore, new_num_classes: int,
                 rng: RngState) -> tuple[ArchitectureSpec, WeightStore]:
    """Swap the final dense layer for a freshly initialized one with
    `new_num_classes` outputs. Every non-head tensor is carried over
    bit-identically; the head is reinitialized even if the size is unchanged.
    """
    head = spec.head_layer()
    new_layers = tuple(
        replace(l, units=new_num_classes) if l.name == head.name else l
        for l in spec.layers
    )
    new_spec = ArchitectureSpec(spec.input_shape, new_layers)
    shapes = infer_shapes(new_spec)
    entries: list[WeightEntry] = []
    in_shape = new_spec.input_shape
    for layer, out_shape in zip(new_spec.layers, shapes):
        if layer.kind in ("conv", "dense"):
            if layer.name == head.name:
                entries.extend(_init_layer(layer, in_shape, rng))
            else:
                for suffix in ("weight", "bias"):
                    old = weights.get(f"{layer.name}.{suffix}")
                    entries.append(WeightEntry(
                        f"{layer.name}.{suffix}", layer.name, layer.kind,
                        Tensor(old.data.copy(), trainable=old.trainable,
                               name=f"{layer.name}.{suffix}")))
        in_shape = out_shape
    return new_spec, WeightStore(entries)


REGIMES = ("baseline", "transfer", "fine_tune", "two_stage_stage1", "two_stage_stage2")
_DONOR_REGIMES = ("transfer", "fine_tune", "two_stage_stage2")


def apply_freeze_policy(weights: WeightStore, regime: str,
                        donor: WeightStore | None = None) -> WeightStore:
    """Set per-tensor trainability (and donor-derived initial values) for a
    training regime.

    baseline / two_stage_stage1: everything trainable, values untouched.
    transfer: conv tensors copied from donor and frozen; dense trainable.
    fine_tune: conv tensors copied from donor; everything trainable.
    two_stage_stage2: all non-head tensors copied from donor; all trainable.
    """
    if regime not in REGIMES:
        raise ValueError(f"unknown regime {regime!r}")
    needs_donor = regime in _DONOR_REGIMES
    if needs_donor and donor is None:
        raise ValueError(f"regime {regime!r} requires donor weights")
    if not needs_donor and donor is not None:
        raise ValueError(f"regime {regime!r} does not take donor weights")

    head_layer = weights.head_layer_name()
    out: list[WeightEntry] = []
    for e in weights:
        data = e.tensor.data.copy()
        trainable = True
        if regime == "transfer":
            if e.kind == "conv":
                data = _donor_data(donor, e)
                trainable = False
        elif regime == "fine_tune":
            if e.kind == "conv":
                data = _donor_data(donor, e)
        elif regime == "two_stage_stage2":
            if e.layer != head_layer:
                data = _donor_data(donor, e)
        out.append(WeightEntry(e.name, e.layer, e.kind,
                               Tensor(data, trainable=trainable, name=e.name)))
    return WeightStore(out)


def _donor_data(donor: WeightStore, e: WeightEntry) -> np.ndarray:
    if e.name not in donor:
        raise ShapeError(f"donor weights missing tensor {e.name!r}")
    d = donor.get(e.name)
    if d.shape != e.tensor.shape:
        raise ShapeError(
            f"donor tensor {e.name!r} has shape {d.shape}, expected {e.tensor.shape}")
    return d.data.copy()


# ---------------------------------------------------------------------------
# weight-file persistence
#
# layout: magic, u32 version, u32 manifest length, manifest JSON (architecture
# plus per-tensor name/kind/shape/trainable), raw little-endian float32 tensor
# data in manifest order, sha256 of everything before the digest.

_MAGIC = b"RCNNWTS\x00"
_VERSION = 1


class WeightFormatError(ValueError):
    """Weight file is corrupt, truncated, or has an unsupported version."""


def save_weights(weights: WeightStore, path, spec: ArchitectureSpec | None = None) -> None:
    manifest = {
        "tensors": [
            {
                "name": e.name,
                "layer": e.layer,
                "kind": e.kind,
                "shape": list(e.tensor.shape),
                "trainable": e.trainable,
            }
            for e in weights
        ],
    }
    if spec is not None:
        manifest["architecture"] = spec.to_dict()
    mblob = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts = [_MAGIC, struct.pack("<II", _VERSION, len(mblob)), mblob]
    for e in weights:
        parts.append(np.ascontiguousarray(e.tensor.data, dtype="<f4").tobytes())
    body = b"".join(parts)
    with open(path, "wb") as fh:
        fh.write(body)
        fh.write(hashlib.sha256(body).digest())


def load_weights(path, spec: ArchitectureSpec | None = None
                 ) -> tuple[WeightStore, ArchitectureSpec | None]:
    """Read a weight file back into a WeightStore.

    Returns the store and the architecture embedded in the file (None for
    files saved without one). If `spec` is given, every tensor shape is
    checked against the spec's inference; a mismatch names the offending
    tensor.
    """
    blob = open(path, "rb").read()
    if len(blob) < len(_MAGIC) + 8 + 32:
        raise WeightFormatError(f"{path}: truncated file")
    if blob[: len(_MAGIC)] != _MAGIC:
        raise WeightFormatError(f"{path}: bad magic, not a weight file")
    body, digest = blob[:-32], blob[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise WeightFormatError(f"{path}: checksum failure")
    version, mlen = struct.unpack_from("<II", body, len(_MAGIC))
    if version != _VERSION:
        raise WeightFormatError(f"{path}: unsupported format version {version}")
    mstart = len(_MAGIC) + 8
    if mstart + mlen > len(body):
        raise WeightFormatError(f"{path}: truncated manifest")
    try:
        manifest = json.loads(body[mstart : mstart + mlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise WeightFormatError(f"{path}: unreadable manifest") from exc

    entries: list[WeightEntry] = []
    offset = mstart + mlen
    for t in manifest["tensors"]:
        shape = tuple(t["shape"])
        count = int(np.prod(shape)) if shape else 1
        end = offset + 4 * count
        if end > len(body):
            raise WeightFormatError(f"{path}: truncated tensor data for {t['name']!r}")
        data = np.frombuffer(body[offset:end], dtype="<f4").reshape(shape).astype(np.float64)
        entries.append(WeightEntry(
            t["name"], t["layer"], t["kind"],
            Tensor(data, trainable=bool(t["trainable"]), name=t["name"])))
        offset = end
    if offset != len(body):
        raise WeightFormatError(f"{path}: trailing bytes after tensor data")
    store = WeightStore(entries)

    arch = None
    if "architecture" in manifest:
        arch = ArchitectureSpec.from_dict(manifest["architecture"])
    if spec is not None:
        _check_against_spec(store, spec, path)
    return store, arch


def _check_against_spec(store: WeightStore, spec: ArchitectureSpec, path) -> None:
    expected = init_shapes(spec)
    names = store.names()
    if names != [n for n, _ in expected]:
        raise WeightFormatError(
            f"{path}: tensor names {names} do not match the architecture")
    for name, shape in expected:
        got = store.get(name).shape
        if got != shape:
            raise ShapeError(
                f"{path}: tensor {name!r} has shape {got}, spec expects {shape}")


def init_shapes(spec: ArchitectureSpec) -> list[tuple[str, tuple[int, ...]]]:
    """(name, shape) of every parameter tensor the spec implies, in order."""
    shapes = infer_shapes(spec)
    out: list[tuple[str, tuple[int, ...]]] = []
    in_shape = spec.input_shape
    for layer, out_shape in zip(spec.layers, shapes):
        if layer.kind == "conv":
            out.append((f"{layer.name}.weight",
                        (layer.kernel, layer.kernel, in_shape[2], layer.filters)))
            out.append((f"{layer.name}.bias", (layer.filters,)))
        elif layer.kind == "dense":
            out.append((f"{layer.name}.weight", (in_shape[0], layer.units)))
            out.append((f"{layer.name}.bias", (layer.units,)))
        in_shape = out_shape
    return out


# ---------------------------------------------------------------------------
# activation export

LAYER_SELECTORS = ("first_conv", "last_conv")


@dataclass
class ActivationDump:
    selector: str
    layer_name: str
    maps: np.ndarray           # (H, W, channels), post-activation
    normalized: np.ndarray     # (channels, H, W) uint8, each map scaled alone
    ranges: list[tuple[float, float]] = field(default_factory=list)

    @property
    def channel_count(self) -> int:
        return self.maps.shape[2]

    def composite(self) -> np.ndarray:
        """Normalized maps tiled into a near-square grid, row-major."""
        n = self.channel_count
        cols = int(np.ceil(np.sqrt(n)))
        rows = int(np.ceil(n / cols))
        h, w = self.maps.shape[:2]
        grid = np.zeros((rows * h, cols * w), dtype=np.uint8)
        for i in range(n):
            r, c = divmod(i, cols)
            grid[r * h : (r + 1) * h, c * w : (c + 1) * w] = self.normalized[i]
        return grid


def export_activations(spec: ArchitectureSpec, weights: WeightStore, image,
                       layer_selector: str) -> ActivationDump:
    """Per-channel 2-D maps of the first or last convolution layer (after
    ReLU), each independently normalized to [0, 255]. A constant map (e.g.
    from a zero input) renders all-black."""
    if layer_selector not in LAYER_SELECTORS:
        raise ValueError(
            f"unknown layer selector {layer_selector!r} (expected one of {LAYER_SELECTORS})")
    conv_names = [l.name for l in spec.layers if l.kind == "conv"]
    if not conv_names:
        raise ShapeError("architecture has no convolution layers")
    target = conv_names[0] if layer_selector == "first_conv" else conv_names[-1]
    capture: dict[str, np.ndarray] = {}
    forward(spec, weights, image, mode="infer", capture=capture)
    maps = capture[target]
    n = maps.shape[2]
    normalized = np.zeros((n, maps.shape[0], maps.shape[1]), dtype=np.uint8)
    ranges: list[tuple[float, float]] = []
    for i in range(n):
        m = maps[:, :, i]
        lo, hi = float(m.min()), float(m.max())
        ranges.append((lo, hi))
        if hi > lo:
            normalized[i] = np.rint((m - lo) / (hi - lo) * 255.0).astype(np.uint8)
    return ActivationDump(layer_selector, target, maps, normalized, ranges)


def write_activation_dump(dump: ActivationDump, out_dir) -> list[str]:
    """Write one PGM per channel, a tiled composite PGM, and a JSON sidecar
    with the per-map normalization ranges. Returns the file names written."""
    from pathlib import Path

    from .netpbm import write_pgm

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written: list[str] = []
    for i in range(dump.channel_count):
        name = f"{dump.selector}_ch{i:02d}.pgm"
        write_pgm(out / name, dump.normalized[i])
        written.append(name)
    comp = f"{dump.selector}_composite.pgm"
    write_pgm(out / comp, dump.composite())
    written.append(comp)
    sidecar = {
        "selector": dump.selector,
        "layer": dump.layer_name,
        "map_shape": list(dump.maps.shape[:2]),
        "channels": [
            {"index": i, "min": dump.ranges[i][0], "max": dump.ranges[i][1]}
            for i in range(dump.channel_count)
        ],
    }
    meta = f"{dump.selector}_maps.json"
    (out / meta).write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n")
    written.append(meta)
    return written
