"""Versioned binary serialization of trained models.

Byte layout (all integers little-endian):

    magic      b"GCKPT"
    version    u16            (currently 1)
    kind       u8             (1=mlp, 2=cnn, 3=logreg, 4=knn)
    desc_len   u32
    descriptor desc_len bytes of canonical JSON (sorted keys, no spaces):
               architecture, class names, input size, metadata, knn labels
    n_params   u16
    parameters n_params blocks of:
                   dtype u8 (1=f32, 2=f64), ndim u8, ndim x u32 dims,
                   raw row-major element bytes
    crc        u32 CRC32 of every preceding byte

Saving the same model twice yields identical bytes; any single-byte payload
corruption fails the CRC on load.
"""

import json
import struct
import zlib

import numpy as np

from .classical import KnnModel, LogRegModel
from .errors import CheckpointError
from .network import CnnModel, MlpModel, network_from_descriptor
from .tensor import DTYPE_32, DTYPE_64

MAGIC = b"GCKPT"
VERSION = 1
KIND_CODES = {"mlp": 1, "cnn": 2, "logreg": 3, "knn": 4}
KIND_NAMES = {v: k for k, v in KIND_CODES.items()}
DTYPE_CODES = {np.dtype(np.float32): 1, np.dtype(np.float64): 2}
DTYPE_FROM_CODE = {1: np.dtype("<f4"), 2: np.dtype("<f8")}


def _descriptor_for(model, metadata):
    desc = {
        "class_names": list(model.class_names),
        "input_size": int(model.input_size),
        "metadata": metadata or {},
    }
    if model.kind in ("mlp", "cnn"):
        desc["arch"] = model.arch
    elif model.kind == "logreg":
        desc["n_features"] = model.n_features
        desc["classes"] = model.classes
        desc["feature_mode"] = model.feature_mode
    elif model.kind == "knn":
        desc["k"] = model.k
        desc["classes"] = model.classes
        desc["feature_mode"] = model.feature_mode
        desc["labels"] = [int(l) for l in model.labels]
    return desc


def save(model, path, metadata=None):
    body = bytearray()
    body += MAGIC
    body += struct.pack("<H", VERSION)
    body += struct.pack("<B", KIND_CODES[model.kind])
    desc_json = json.dumps(_descriptor_for(model, metadata),
                           sort_keys=True, separators=(",", ":")).encode("utf-8")
    body += struct.pack("<I", len(desc_json))
    body += desc_json
    params = model.param_tensors()
    body += struct.pack("<H", len(params))
    for p in params:
        code = DTYPE_CODES[np.dtype(p.dtype)]
        body += struct.pack("<BB", code, p.ndim)
        body += struct.pack(f"<{p.ndim}I", *p.shape)
        body += np.ascontiguousarray(p, dtype=DTYPE_FROM_CODE[code]).tobytes()
    body += struct.pack("<I", zlib.crc32(bytes(body)))
    with open(path, "wb") as fh:
        fh.write(bytes(body))


class _Reader:
    def __init__(self, blob, path):
        self.blob = blob
        self.off = 0
        self.path = path

    def take(self, n, what):
        if self.off + n > len(self.blob):
            raise CheckpointError(f"{self.path}: truncated while reading {what}")
        out = self.blob[self.off:self.off + n]
        self.off += n
        return out

    def unpack(self, fmt, what):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def load(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    r = _Reader(blob, path)
    if r.take(len(MAGIC), "magic") != MAGIC:
        raise CheckpointError(f"{path}: bad magic, not a gradecore checkpoint")
    (version,) = r.unpack("<H", "version")
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version} "
                              f"(this reader understands version {VERSION})")
    if len(blob) < 4:
        raise CheckpointError(f"{path}: truncated checkpoint")
    (stored_crc,) = struct.unpack("<I", blob[-4:])
    if zlib.crc32(blob[:-4]) != stored_crc:
        raise CheckpointError(f"{path}: CRC mismatch, file is corrupt")

    (kind_code,) = r.unpack("<B", "model kind")
    kind = KIND_NAMES.get(kind_code)
    if kind is None:
        raise CheckpointError(f"{path}: unknown model kind code {kind_code}")
    (desc_len,) = r.unpack("<I", "descriptor length")
    try:
        desc = json.loads(r.take(desc_len, "descriptor").decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: unreadable descriptor: {exc}") from exc
    (n_params,) = r.unpack("<H", "parameter count")
    params = []
    for i in range(n_params):
        code, ndim = r.unpack("<BB", f"parameter {i} header")
        if code not in DTYPE_FROM_CODE:
            raise CheckpointError(f"{path}: unknown dtype code {code}")
        dims = r.unpack(f"<{ndim}I", f"parameter {i} shape")
        dt = DTYPE_FROM_CODE[code]
        nbytes = int(np.prod(dims)) * dt.itemsize
        raw = r.take(nbytes, f"parameter {i} data")
        params.append(np.frombuffer(raw, dtype=dt).reshape(dims).copy())
    return _rebuild(kind, desc, params)


def _rebuild(kind, desc, params):
    class_names = desc["class_names"]
    input_size = desc["input_size"]
    if kind in ("mlp", "cnn"):
        dtype = DTYPE_64 if params and params[0].dtype.itemsize == 8 else DTYPE_32
        net = network_from_descriptor(desc["arch"], dtype)
        net.load_values(params)
        cls = MlpModel if kind == "mlp" else CnnModel
        return cls(net, desc["arch"], class_names, input_size)
    if kind == "logreg":
        model = LogRegModel(desc["n_features"], desc["classes"], desc["feature_mode"],
                            class_names, params[0].dtype, input_size=input_size)
        model.w[...] = params[0]
        model.b[...] = params[1]
        return model
    # knn
    return KnnModel(params[0], np.asarray(desc["labels"], dtype=np.int64),
                    k=desc["k"], classes=desc["classes"],
                    feature_mode=desc["feature_mode"], class_names=class_names,
                    input_size=input_size)
