"""PWOA binary envelope for models, masks, ADMM state and optimizer state.

Layout::

    b"PWOA" | u32 LE version | u64 LE manifest length | manifest (UTF-8 JSON) | payload

The manifest lists ``sections`` in payload order, each with ``name``,
``dtype`` (``f64`` little-endian or ``u8``), ``shape`` and ``nbytes``.
Sections flagged ``optional`` may be skipped by readers that do not know
them. See FORMATS.md.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
import warnings
from pathlib import Path
from typing import Union

import numpy as np

from .admm import AdmmState, PruneMask
from .errors import FormatError, IntegrityError, PwoaError
from .nn import SGD, Layer, NetworkModel

MAGIC = b"PWOA"
FORMAT_VERSION = 1
DTYPES = {"f64": np.dtype("<f8"), "u8": np.dtype("u1")}
KINDS = ("model", "mask", "admm_state", "optimizer")

Savable = Union[NetworkModel, PruneMask, AdmmState, SGD]


def _section(name, arr, dtype):
    arr = np.ascontiguousarray(arr, dtype=DTYPES[dtype])
    return {"name": name, "dtype": dtype, "shape": list(arr.shape), "nbytes": arr.nbytes}, arr.tobytes()


def _encode(obj: Savable):
    secs = []
    if isinstance(obj, NetworkModel):
        kind = "model"
        meta = {"activations": [l.activation for l in obj.layers]}
        for i, l in enumerate(obj.layers):
            secs += [_section(f"layer{i}.weight", l.weight, "f64"), _section(f"layer{i}.bias", l.bias, "f64")]
    elif isinstance(obj, PruneMask):
        kind = "mask"
        meta = {"popcounts": obj.popcounts}
        secs = [_section(f"layer{i}.mask", m, "u8") for i, m in enumerate(obj.masks)]
    elif isinstance(obj, AdmmState):
        kind = "admm_state"
        meta = {"rho": [float(r) for r in obj.rho], "admm_iter": int(obj.admm_iter)}
        for i, (t, u) in enumerate(zip(obj.theta_prime, obj.duals)):
            secs += [_section(f"layer{i}.theta_prime", t, "f64"), _section(f"layer{i}.dual", u, "f64")]
    elif isinstance(obj, SGD):
        kind = "optimizer"
        meta = {"momentum": obj.momentum, "weight_decay": obj.weight_decay}
        for i, (bw, bb) in enumerate(zip(obj.buf_w, obj.buf_b)):
            secs += [_section(f"layer{i}.buf_weight", bw, "f64"), _section(f"layer{i}.buf_bias", bb, "f64")]
    else:
        raise TypeError(f"cannot serialize {type(obj).__name__}")
    manifest = {"kind": kind, "meta": meta, "sections": [s for s, _ in secs]}
    return manifest, b"".join(blob for _, blob in secs)


def to_bytes(obj: Savable) -> bytes:
    manifest, payload = _encode(obj)
    text = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return MAGIC + struct.pack("<IQ", FORMAT_VERSION, len(text)) + text + payload


def save(obj: Savable, path) -> None:
    """Write atomically (temp file in the same directory, then rename)."""
    path = Path(path)
    blob = to_bytes(obj)
    try:
        fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=f".{path.name}.")
        with os.fdopen(fd, "wb") as fh:
            fh.write(blob)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except OSError as exc:
        raise PwoaError(f"cannot write {path}: {exc}") from exc


def _parse(blob: bytes, source: str):
    if blob[:4] != MAGIC:
        raise FormatError(f"{source}: bad magic", offset=0, section="header")
    if len(blob) < 16:
        raise FormatError(f"{source}: truncated header", offset=len(blob), section="header")
    version, mlen = struct.unpack("<IQ", blob[4:16])
    if len(blob) < 16 + mlen:
        raise FormatError(f"{source}: truncated manifest", offset=len(blob), section="manifest")
    try:
        manifest = json.loads(blob[16:16 + mlen].decode("utf-8"))
        kind = manifest["kind"]
        sections = manifest["sections"]
        meta = manifest.get("meta", {})
    except (ValueError, KeyError, TypeError) as exc:
        raise FormatError(f"{source}: bad manifest ({exc})", offset=16, section="manifest") from None
    if kind not in KINDS:
        raise FormatError(f"{source}: unknown kind {kind!r}", section="manifest")
    arrays = {}
    offset = 16 + mlen
    for sec in sections:
        name = sec.get("name", "?")
        try:
            dtype = DTYPES[sec["dtype"]]
            shape = tuple(int(s) for s in sec["shape"])
            nbytes = int(sec["nbytes"])
        except (KeyError, TypeError, ValueError):
            if sec.get("optional") and "nbytes" in sec:
                offset += int(sec["nbytes"])
                warnings.warn(f"{source}: skipping unreadable optional section {name!r}")
                continue
            raise FormatError(f"{source}: section {name!r} has a bad descriptor", section=name) from None
        if int(np.prod(shape, dtype=np.int64)) * dtype.itemsize != nbytes:
            raise FormatError(f"{source}: section {name!r} shape does not match its length", section=name)
        if offset + nbytes > len(blob):
            raise FormatError(f"{source}: truncated payload in section {name!r}", offset=len(blob), section=name)
        arrays[name] = (np.frombuffer(blob, dtype=dtype, count=nbytes // dtype.itemsize, offset=offset)
                        .reshape(shape).copy(), bool(sec.get("optional", False)))
        offset += nbytes
    if offset != len(blob):
        raise FormatError(f"{source}: {len(blob) - offset} trailing bytes", offset=offset, section="payload")
    return version, kind, meta, arrays


def _take(arrays, name, source):
    if name not in arrays:
        raise FormatError(f"{source}: missing section {name!r}", section=name)
    return arrays.pop(name)[0]


def _n_layers(arrays, suffix):
    return sum(1 for k in arrays if k.startswith("layer") and k.endswith(suffix))


def from_bytes(blob: bytes, source: str = "<bytes>") -> Savable:
    version, kind, meta, arrays = _parse(blob, source)
    if kind == "model":
        acts = meta.get("activations", [])
        layers = []
        for i, act in enumerate(acts):
            layers.append(Layer(_take(arrays, f"layer{i}.weight", source), _take(arrays, f"layer{i}.bias", source), act))
        try:
            obj: Savable = NetworkModel(layers)
        except PwoaError as exc:
            raise FormatError(f"{source}: {exc}", section="model") from None
    elif kind == "mask":
        n = len(meta.get("popcounts", []))
        masks = tuple(_take(arrays, f"layer{i}.mask", source) for i in range(n))
        for i, (m, pc) in enumerate(zip(masks, meta["popcounts"])):
            if np.any(m > 1):
                raise IntegrityError(f"{source}: layer {i} mask holds values other than 0/1", section=f"layer{i}.mask")
            if int(m.sum()) != pc:
                raise IntegrityError(f"{source}: layer {i} popcount {int(m.sum())} != manifest {pc}",
                                     section=f"layer{i}.mask")
        obj = PruneMask(masks)
    elif kind == "admm_state":
        rho = [float(r) for r in meta.get("rho", [])]
        obj = AdmmState([_take(arrays, f"layer{i}.theta_prime", source) for i in range(len(rho))],
                        [_take(arrays, f"layer{i}.dual", source) for i in range(len(rho))],
                        rho, int(meta.get("admm_iter", 0)))
    else:
        n = _n_layers(arrays, ".buf_weight")
        opt = SGD.__new__(SGD)
        opt.momentum = float(meta["momentum"])
        opt.weight_decay = float(meta["weight_decay"])
        opt.buf_w = [_take(arrays, f"layer{i}.buf_weight", source) for i in range(n)]
        opt.buf_b = [_take(arrays, f"layer{i}.buf_bias", source) for i in range(n)]
        obj = opt
    for name, (_, optional) in arrays.items():
        if not optional:
            if version > FORMAT_VERSION:
                raise FormatError(f"{source}: version {version} is too new (section {name!r})", section=name)
            raise FormatError(f"{source}: unexpected section {name!r}", section=name)
        warnings.warn(f"{source}: ignoring unknown optional section {name!r}")
    if version > FORMAT_VERSION:
        warnings.warn(f"{source}: format version {version} is newer than {FORMAT_VERSION}; loaded known sections")
    return obj


def load(path, expect: type | None = None) -> Savable:
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as exc:
        raise PwoaError(f"cannot read {path}: {exc}") from exc
    obj = from_bytes(blob, str(path))
    if expect is not None and not isinstance(obj, expect):
        raise FormatError(f"{path}: holds a {type(obj).__name__}, expected {expect.__name__}", section="manifest")
    return obj


def load_model(path) -> NetworkModel:
    return load(path, NetworkModel)  # type: ignore[return-value]


def load_mask(path, model: NetworkModel | None = None) -> PruneMask:
    mask = load(path, PruneMask)
    if model is not None:
        mask.check(model)  # type: ignore[union-attr]
    return mask  # type: ignore[return-value]
