"""Binary model checkpoints.

On-disk layout (all integers little-endian):

    bytes 0..7    magic ``REDSCKPT``
    bytes 8..11   format version (u32)
    bytes 12..15  header length in bytes (u32)
    header        UTF-8 JSON: {"architecture": ..., "seed": ...,
                  "arrays": [{"name": ..., "shape": [...]}, ...]}
    payload       the arrays' float64 data, little-endian, C order,
                  concatenated in header order

Array order is the model's declared parameter order: encoder layer
weight/bias pairs outermost-first, then decoder pairs, then (if present)
the self-expressive coefficient matrix.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .autodiff import parameter
from .errors import FormatError
from .model import Architecture, ModelParams, init_params

CHECKPOINT_MAGIC = b"REDSCKPT"
CHECKPOINT_VERSION = 1


def _named_arrays(params: ModelParams):
    named = []
    for role, pairs in (("encoder", params.encoder), ("decoder", params.decoder)):
        for i, (weight, bias) in enumerate(pairs):
            named.append((f"{role}_{i}_weight", weight.data))
            named.append((f"{role}_{i}_bias", bias.data))
    if params.coefficients is not None:
        named.append(("coefficients", params.coefficients.data))
    return named


def save_checkpoint(path, arch: Architecture, params: ModelParams, seed: int) -> None:
    arrays = _named_arrays(params)
    header = json.dumps(
        {
            "architecture": arch.to_dict(),
            "seed": int(seed),
            "arrays": [{"name": name, "shape": list(data.shape)} for name, data in arrays],
        },
        sort_keys=True,
    ).encode()
    with open(path, "wb") as handle:
        handle.write(CHECKPOINT_MAGIC)
        handle.write(struct.pack("<II", CHECKPOINT_VERSION, len(header)))
        handle.write(header)
        for _, data in arrays:
            handle.write(np.ascontiguousarray(data, dtype="<f8").tobytes())


def load_checkpoint(path):
    """Read a checkpoint; returns (architecture, params, seed)."""
    blob = open(path, "rb").read()
    if len(blob) < 16 or blob[:8] != CHECKPOINT_MAGIC:
        raise FormatError(
            f"{path}: bad magic {blob[:8]!r}; expected {CHECKPOINT_MAGIC!r}"
        )
    version, header_len = struct.unpack("<II", blob[8:16])
    if version != CHECKPOINT_VERSION:
        raise FormatError(
            f"{path}: unsupported checkpoint version {version}; this build reads "
            f"version {CHECKPOINT_VERSION}"
        )
    if len(blob) < 16 + header_len:
        raise FormatError(f"{path}: truncated header; need {header_len} bytes")
    try:
        header = json.loads(blob[16 : 16 + header_len])
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: unreadable checkpoint header: {exc}") from exc

    arch = Architecture.from_dict(header["architecture"])
    declared = header["arrays"]
    payload = blob[16 + header_len :]
    expected_bytes = sum(int(np.prod(entry["shape"])) * 8 for entry in declared)
    if len(payload) != expected_bytes:
        raise FormatError(
            f"{path}: payload holds {len(payload)} bytes but the header declares "
            f"{expected_bytes} bytes"
        )

    arrays, offset = {}, 0
    for entry in declared:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape))
        data = np.frombuffer(payload, dtype="<f8", count=count, offset=offset)
        arrays[entry["name"]] = data.reshape(shape).copy()
        offset += count * 8

    n_samples = arrays["coefficients"].shape[0] if "coefficients" in arrays else None
    reference = init_params(arch, n_samples=n_samples, seed=0)
    params = ModelParams(encoder=[], decoder=[], coefficients=None)
    for role, ref_pairs, out_pairs in (
        ("encoder", reference.encoder, params.encoder),
        ("decoder", reference.decoder, params.decoder),
    ):
        for i, (ref_weight, ref_bias) in enumerate(ref_pairs):
            pair = []
            for kind, ref in (("weight", ref_weight), ("bias", ref_bias)):
                name = f"{role}_{i}_{kind}"
                if name not in arrays:
                    raise FormatError(f"{path}: checkpoint is missing array {name}")
                if arrays[name].shape != ref.data.shape:
                    raise FormatError(
                        f"{path}: array {name} has shape {arrays[name].shape} but the "
                        f"declared architecture requires {ref.data.shape}"
                    )
                pair.append(parameter(arrays[name]))
            out_pairs.append(tuple(pair))
    if n_samples is not None:
        params.coefficients = parameter(arrays["coefficients"])
    return arch, params, int(header["seed"])
