"""Bit-exact network serialization.

Format: one JSON header line (spec, parameter count), then the flat
parameter vector as raw little-endian float64 bytes.
"""

import json

import numpy as np

from ..errors import DataError
from .network import Network, build_network
from .spec import NetworkSpec

_MAGIC = "simsel-net-v1"


def save_network(net: Network, path):
    header = {
        "format": _MAGIC,
        "spec": net.spec.to_dict(),
        "n_params": net.n_params,
    }
    with open(path, "wb") as f:
        f.write(json.dumps(header, sort_keys=True).encode("utf-8"))
        f.write(b"\n")
        f.write(net.flat_params().astype("<f8").tobytes())


def load_network(path) -> Network:
    with open(path, "rb") as f:
        raw = f.read()
    nl = raw.find(b"\n")
    if nl < 0:
        raise DataError(f"{path}: missing header line")
    try:
        header = json.loads(raw[:nl].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise DataError(f"{path}: bad header: {e}") from e
    if header.get("format") != _MAGIC:
        raise DataError(f"{path}: unknown format {header.get('format')!r}")
    spec = NetworkSpec.from_dict(header["spec"])
    net = build_network(spec, seed=0)
    blob = raw[nl + 1 :]
    expect = header["n_params"]
    params = np.frombuffer(blob, dtype="<f8")
    if params.size != expect or net.n_params != expect:
        raise DataError(
            f"{path}: expected {expect} parameters, file has {params.size}, "
            f"spec needs {net.n_params}"
        )
    net.set_flat_params(params.astype(np.float64))
    return net
