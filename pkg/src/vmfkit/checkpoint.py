"""Versioned text checkpoints for networks, loss heads and mixtures.

Layout::

    {"format": "vmfkit-ckpt", "version": 1, ...header...}
    <base64 of little-endian float64 tensors, declaration order, 76 chars/line>
    crc32 <8 hex digits of the CRC-32 of the raw payload bytes>

The header is canonical JSON (sorted keys), so equal parameters always
serialize to equal bytes.
"""

from __future__ import annotations

import base64
import binascii
import json
import os
import tempfile
import zlib

import numpy as np

from .errors import CorruptPayloadError, VersionError
from .losses import VmfmlHead
from .mixture import VmfMixture
from .network import (
    DenseNetwork,
    Layer,
    SoftmaxCenterObjective,
    SoftmaxObjective,
    VmfmlObjective,
)

FORMAT = "vmfkit-ckpt"
VERSION = 1
_LINE = 76


def _encode(header: dict, tensors: list[tuple[str, np.ndarray]]) -> bytes:
    header = dict(header, format=FORMAT, version=VERSION,
                  tensors=[[name, list(arr.shape)] for name, arr in tensors])
    payload = b"".join(np.ascontiguousarray(arr, dtype="<f8").tobytes() for _, arr in tensors)
    b64 = base64.b64encode(payload).decode("ascii")
    lines = [json.dumps(header, sort_keys=True, separators=(",", ":"))]
    lines += [b64[i:i + _LINE] for i in range(0, len(b64), _LINE)]
    lines.append(f"crc32 {zlib.crc32(payload) & 0xFFFFFFFF:08x}")
    return ("\n".join(lines) + "\n").encode("ascii")


def _decode(blob: bytes) -> tuple[dict, dict]:
    try:
        text = blob.decode("ascii")
    except UnicodeDecodeError as exc:
        raise CorruptPayloadError("checkpoint is not ASCII text") from exc
    lines = text.split("\n")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise CorruptPayloadError("unreadable checkpoint header") from exc
    if not isinstance(header, dict) or header.get("format") != FORMAT:
        raise CorruptPayloadError("not a vmfkit checkpoint")
    version = header.get("version")
    if not isinstance(version, int) or version > VERSION or version < 1:
        raise VersionError(f"unsupported checkpoint version {version!r} (this build reads {VERSION})")
    if len(lines) < 3 or lines[-1] != "" or not lines[-2].startswith("crc32 "):
        raise CorruptPayloadError("checkpoint is truncated (missing checksum trailer)")
    try:
        payload = base64.b64decode("".join(lines[1:-2]), validate=True)
        expected = int(lines[-2][6:], 16)
    except (binascii.Error, ValueError) as exc:
        raise CorruptPayloadError("malformed checkpoint payload") from exc
    if zlib.crc32(payload) & 0xFFFFFFFF != expected:
        raise CorruptPayloadError("checkpoint checksum mismatch")
    tensors = {}
    offset = 0
    for name, shape in header["tensors"]:
        count = int(np.prod(shape, dtype=np.int64))
        end = offset + 8 * count
        if end > len(payload):
            raise CorruptPayloadError("payload shorter than declared tensors")
        tensors[name] = np.frombuffer(payload[offset:end], dtype="<f8").astype(float).reshape(shape)
        offset = end
    if offset != len(payload):
        raise CorruptPayloadError("payload longer than declared tensors")
    return header, tensors


def _head_spec(head) -> tuple[dict, list]:
    if isinstance(head, VmfmlObjective):
        head = head.head
    if isinstance(head, VmfmlHead):
        spec = {"type": "vmfml", "kappa_policy": head.kappa_policy,
                "lr_multiplier": head.lr_multiplier, "margin": head.margin}
        return spec, [("head.weight", head.weights), ("head.kappa", np.array([head.kappa]))]
    if isinstance(head, SoftmaxCenterObjective):
        spec = {"type": "softmax+center", "lam": head.lam, "center_lr": head.center_lr}
        return spec, [("softmax.weight", head.weights), ("softmax.bias", head.biases),
                      ("center.centers", head.centers)]
    if isinstance(head, SoftmaxObjective):
        return {"type": "softmax"}, [("softmax.weight", head.weights), ("softmax.bias", head.biases)]
    raise TypeError(f"cannot checkpoint head of type {type(head).__name__}")


def save_checkpoint(net: DenseNetwork, head) -> bytes:
    """Serialize a network and its loss head (VmfmlHead or a softmax objective)."""
    head_spec, head_tensors = _head_spec(head)
    header = {
        "kind": "network",
        "dims": {"input_dim": net.input_dim, "feature_dim": net.feature_dim,
                 "n_classes": int(head_tensors[0][1].shape[0])},
        "layers": [{"in": l.in_dim, "out": l.out_dim, "activation": l.activation} for l in net.layers],
        "head": head_spec,
        "kappa_policy": head_spec.get("kappa_policy"),
    }
    return _encode(header, list(net.parameters()) + head_tensors)


def load_checkpoint(blob: bytes):
    """Inverse of ``save_checkpoint``: returns ``(net, head)``."""
    header, t = _decode(blob)
    if header.get("kind") != "network":
        raise CorruptPayloadError(f"expected a network checkpoint, got kind {header.get('kind')!r}")
    try:
        layers = []
        for i, spec in enumerate(header["layers"]):
            layers.append(Layer(t[f"layer{i}.weight"], t[f"layer{i}.bias"], spec["activation"],
                                t.get(f"layer{i}.alpha")))
        net = DenseNetwork(layers, header["dims"]["input_dim"])
        hs = header["head"]
        if hs["type"] == "vmfml":
            head = VmfmlHead(t["head.weight"], float(t["head.kappa"][0]), hs["kappa_policy"],
                             hs["lr_multiplier"], hs["margin"])
        elif hs["type"] == "softmax+center":
            head = SoftmaxCenterObjective(t["softmax.weight"], t["softmax.bias"], t["center.centers"],
                                          hs["lam"], hs["center_lr"])
        elif hs["type"] == "softmax":
            head = SoftmaxObjective(t["softmax.weight"], t["softmax.bias"])
        else:
            raise CorruptPayloadError(f"unknown head type {hs['type']!r}")
    except KeyError as exc:
        raise CorruptPayloadError(f"checkpoint missing field {exc}") from exc
    return net, head


def save_mixture(m: VmfMixture) -> bytes:
    header = {"kind": "mixture", "dims": {"d": m.dim, "n_components": m.n_components}}
    return _encode(header, [("mixture.weights", m.weights), ("mixture.mus", m.mus),
                            ("mixture.kappas", m.kappas)])


def load_mixture(blob: bytes) -> VmfMixture:
    header, t = _decode(blob)
    if header.get("kind") != "mixture":
        raise CorruptPayloadError(f"expected a mixture checkpoint, got kind {header.get('kind')!r}")
    return VmfMixture.from_arrays(t["mixture.mus"], t["mixture.kappas"], t["mixture.weights"])


def atomic_write(path, data: bytes | str) -> None:
    """Write via a temporary file in the same directory, then rename into place."""
    path = os.fspath(path)
    if isinstance(data, str):
        data = data.encode("utf-8")
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
