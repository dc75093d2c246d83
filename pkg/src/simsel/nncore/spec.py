"""Network and training specifications.

A NetworkSpec is an ordered stack of layer specs over a fixed input shape
``(channels, length)``. Supported layer kinds:

    dense(units)               needs a flat feature vector
    conv1d(channels, kernel)   valid padding, stride 1
    relu
    dropout(rate)              rate in [0, 1)
    adaptive_max_pool(out_len) pools any length down/up to out_len bins
    flatten                    (channels, length) -> features
    softmax_head               dense layer to n_classes, must be last

Specs are dumb containers; shape composition is validated by
:func:`infer_shapes`, which `build_network` calls.
"""

from dataclasses import dataclass, field

from ..errors import InvariantError


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    units: int = 0
    channels: int = 0
    kernel: int = 0
    rate: float = 0.0
    out_len: int = 0

    def to_dict(self) -> dict:
        d = {"kind": self.kind}
        for name in ("units", "channels", "kernel", "out_len"):
            v = getattr(self, name)
            if v:
                d[name] = v
        if self.rate:
            d["rate"] = self.rate
        return d


def dense(units: int) -> LayerSpec:
    return LayerSpec("dense", units=units)


def conv1d(channels: int, kernel: int) -> LayerSpec:
    return LayerSpec("conv1d", channels=channels, kernel=kernel)


def relu() -> LayerSpec:
    return LayerSpec("relu")


def dropout(rate: float) -> LayerSpec:
    return LayerSpec("dropout", rate=rate)


def adaptive_max_pool(out_len: int) -> LayerSpec:
    return LayerSpec("adaptive_max_pool", out_len=out_len)


def flatten() -> LayerSpec:
    return LayerSpec("flatten")


def softmax_head() -> LayerSpec:
    return LayerSpec("softmax_head")


@dataclass(frozen=True)
class NetworkSpec:
    layers: tuple
    input_shape: tuple  # (channels, length)
    n_classes: int

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        object.__setattr__(self, "input_shape", tuple(int(v) for v in self.input_shape))

    def to_dict(self) -> dict:
        return {
            "layers": [l.to_dict() for l in self.layers],
            "input_shape": list(self.input_shape),
            "n_classes": self.n_classes,
        }

    @staticmethod
    def from_dict(d: dict) -> "NetworkSpec":
        layers = tuple(LayerSpec(**ld) for ld in d["layers"])
        return NetworkSpec(layers, tuple(d["input_shape"]), int(d["n_classes"]))


@dataclass(frozen=True)
class TrainConfig:
    optimizer: str = "adam"  # sgd | adam
    learning_rate: float = 0.01
    epochs: int = 20
    batch_size: int = 16
    seed: int = 0
    l2_penalty: float = 0.0

    def __post_init__(self):
        if self.optimizer not in ("sgd", "adam"):
            raise InvariantError(f"unknown optimizer {self.optimizer!r}")
        if self.learning_rate <= 0:
            raise InvariantError("learning_rate must be positive")
        if self.epochs < 0:
            raise InvariantError("epochs must be >= 0")
        if self.batch_size < 1:
            raise InvariantError("batch_size must be >= 1")
        if self.l2_penalty < 0:
            raise InvariantError("l2_penalty must be non-negative")


def infer_shapes(spec: NetworkSpec) -> list:
    """Shape after each layer; raises naming the first offending layer.

    Shapes are ``(channels, length)`` tuples before flatten and
    ``(features,)`` after. Enforces exactly one softmax_head, at the end.
    """
    c, l = spec.input_shape
    if c < 1 or l < 1:
        raise InvariantError(f"input shape {spec.input_shape} must be positive")
    if spec.n_classes < 2:
        raise InvariantError("n_classes must be >= 2")
    shape: tuple = (c, l)
    shapes = []
    head_seen = False
    for i, layer in enumerate(spec.layers):
        if head_seen:
            raise InvariantError(f"layer {i}: softmax_head must be the final layer")
        k = layer.kind
        if k == "dense":
            if len(shape) != 1:
                raise InvariantError(f"layer {i}: dense needs a flat input, got {shape}")
            if layer.units < 1:
                raise InvariantError(f"layer {i}: dense units must be positive")
            shape = (layer.units,)
        elif k == "conv1d":
            if len(shape) != 2:
                raise InvariantError(f"layer {i}: conv1d needs (channels, length), got {shape}")
            if layer.channels < 1 or layer.kernel < 1:
                raise InvariantError(f"layer {i}: conv1d channels/kernel must be positive")
            out_len = shape[1] - layer.kernel + 1
            if out_len < 1:
                raise InvariantError(
                    f"layer {i}: conv1d kernel {layer.kernel} exceeds input length {shape[1]}"
                )
            shape = (layer.channels, out_len)
        elif k == "relu":
            pass
        elif k == "dropout":
            if not 0.0 <= layer.rate < 1.0:
                raise InvariantError(f"layer {i}: dropout rate must be in [0, 1)")
        elif k == "adaptive_max_pool":
            if len(shape) != 2:
                raise InvariantError(f"layer {i}: pooling needs (channels, length), got {shape}")
            if layer.out_len < 1:
                raise InvariantError(f"layer {i}: pool out_len must be positive")
            shape = (shape[0], layer.out_len)
        elif k == "flatten":
            if len(shape) != 2:
                raise InvariantError(f"layer {i}: flatten needs (channels, length), got {shape}")
            shape = (shape[0] * shape[1],)
        elif k == "softmax_head":
            if len(shape) != 1:
                raise InvariantError(f"layer {i}: softmax_head needs a flat input, got {shape}")
            shape = (spec.n_classes,)
            head_seen = True
        else:
            raise InvariantError(f"layer {i}: unknown kind {k!r}")
        shapes.append(shape)
    if not head_seen:
        raise InvariantError("spec has no softmax_head classification layer")
    return shapes
