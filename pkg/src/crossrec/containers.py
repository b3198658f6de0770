"""Binary containers for embedding tables and transfer parameters.

Every container opens with an 8-byte magic and a little-endian u32 version;
payload floats are row-major little-endian float32. Parameter files get a JSON
sidecar (same path + ".json") recording hyperparameters and seeds when the
caller supplies them.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .adapter import AdapterParams
from .baseline import MappingParams
from .mf import EmbeddingTable
from .nets import FeedForward

MAGIC_EMBEDDING = b"XRECEMB\x00"
MAGIC_ADAPTER = b"XRECADP\x00"
MAGIC_MAPPING = b"XRECMAP\x00"
FORMAT_VERSION = 1

_ACTIVATION_CODES = {"softplus": 0, "linear": 1}
_ACTIVATION_NAMES = {v: k for k, v in _ACTIVATION_CODES.items()}


def _write_str(fh, s):
    raw = s.encode("utf-8")
    fh.write(struct.pack("<H", len(raw)))
    fh.write(raw)


def _read_str(fh):
    (n,) = struct.unpack("<H", fh.read(2))
    return fh.read(n).decode("utf-8")


def _write_array(fh, arr):
    arr32 = np.ascontiguousarray(arr, dtype="<f4")
    fh.write(struct.pack("<B", arr32.ndim))
    fh.write(struct.pack(f"<{arr32.ndim}I", *arr32.shape))
    fh.write(arr32.tobytes())


def _read_array(fh):
    (ndim,) = struct.unpack("<B", fh.read(1))
    shape = struct.unpack(f"<{ndim}I", fh.read(4 * ndim))
    count = int(np.prod(shape)) if ndim else 1
    data = np.frombuffer(fh.read(4 * count), dtype="<f4").reshape(shape)
    return data.astype(np.float64)


def _check_header(fh, magic, path):
    got = fh.read(len(magic))
    if got != magic:
        raise ValueError(f"{path}: bad magic {got!r}, expected {magic!r}")
    (version,) = struct.unpack("<I", fh.read(4))
    if version != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported container version {version}")


def _write_sidecar(path, meta):
    if meta is not None:
        Path(str(path) + ".json").write_text(
            json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )


def read_sidecar(path):
    side = Path(str(path) + ".json")
    if not side.exists():
        return None
    return json.loads(side.read_text(encoding="utf-8"))


def save_embedding_table(path, table, meta=None):
    with open(path, "wb") as fh:
        fh.write(MAGIC_EMBEDDING)
        fh.write(struct.pack("<I", FORMAT_VERSION))
        fh.write(struct.pack("<B", 1 if table.frozen else 0))
        _write_str(fh, table.domain_id)
        fh.write(struct.pack("<QQI", table.num_users, table.num_items, table.dim))
        fh.write(np.ascontiguousarray(table.user_embeddings, dtype="<f4").tobytes())
        fh.write(np.ascontiguousarray(table.item_embeddings, dtype="<f4").tobytes())
    _write_sidecar(path, meta)


def load_embedding_table(path):
    with open(path, "rb") as fh:
        _check_header(fh, MAGIC_EMBEDDING, path)
        (flags,) = struct.unpack("<B", fh.read(1))
        domain_id = _read_str(fh)
        num_users, num_items, dim = struct.unpack("<QQI", fh.read(20))
        users = np.frombuffer(fh.read(4 * num_users * dim), dtype="<f4")
        items = np.frombuffer(fh.read(4 * num_items * dim), dtype="<f4")
    table = EmbeddingTable(
        domain_id,
        users.astype(np.float64).reshape(num_users, dim),
        items.astype(np.float64).reshape(num_items, dim),
    )
    if flags & 1:
        table.freeze()
    return table


def save_adapter(path, params, meta=None):
    blocks = params.blocks()
    with open(path, "wb") as fh:
        fh.write(MAGIC_ADAPTER)
        fh.write(struct.pack("<I", FORMAT_VERSION))
        _write_str(fh, params.domain_x)
        _write_str(fh, params.domain_y)
        fh.write(struct.pack("<d", params.tau))
        fh.write(struct.pack("<3d", *params.lambdas))
        fh.write(struct.pack("<B", 0 if params.scale_mode == "full" else 1))
        act = params.priors[params.domain_x].activation
        fh.write(struct.pack("<B", _ACTIVATION_CODES[act]))
        fh.write(struct.pack("<II", params.dim, params.hidden))
        fh.write(struct.pack("<I", len(blocks)))
        for name, arr in blocks:
            _write_str(fh, name)
            _write_array(fh, arr)
    _write_sidecar(path, meta)


def _net_from_blocks(blocks, role, dim, hidden, activation):
    net = FeedForward(dim, hidden, dim, rng=None, activation=activation)
    net.w1 = blocks[f"{role}.w1"]
    net.b1 = blocks[f"{role}.b1"]
    net.w2 = blocks[f"{role}.w2"]
    net.b2 = blocks[f"{role}.b2"]
    return net


def load_adapter(path):
    with open(path, "rb") as fh:
        _check_header(fh, MAGIC_ADAPTER, path)
        domain_x = _read_str(fh)
        domain_y = _read_str(fh)
        (tau,) = struct.unpack("<d", fh.read(8))
        lambdas = struct.unpack("<3d", fh.read(24))
        (mode_code,) = struct.unpack("<B", fh.read(1))
        (act_code,) = struct.unpack("<B", fh.read(1))
        dim, hidden = struct.unpack("<II", fh.read(8))
        (n_blocks,) = struct.unpack("<I", fh.read(4))
        blocks = {}
        for _ in range(n_blocks):
            name = _read_str(fh)
            blocks[name] = _read_array(fh)
    activation = _ACTIVATION_NAMES[act_code]
    priors = {
        domain_x: _net_from_blocks(blocks, "prior_x", dim, hidden, activation),
        domain_y: _net_from_blocks(blocks, "prior_y", dim, hidden, activation),
    }
    decoders = {
        domain_x: _net_from_blocks(blocks, "decoder_x", dim, hidden, activation),
        domain_y: _net_from_blocks(blocks, "decoder_y", dim, hidden, activation),
    }
    return AdapterParams(
        domain_x, domain_y, dim, hidden, priors, decoders,
        blocks["scale.alpha1"], blocks["scale.beta1"],
        blocks["scale.alpha2"], blocks["scale.beta2"],
        tau, lambdas, "full" if mode_code == 0 else "diagonal",
    )


def save_mapping(path, params, meta=None):
    with open(path, "wb") as fh:
        fh.write(MAGIC_MAPPING)
        fh.write(struct.pack("<I", FORMAT_VERSION))
        _write_str(fh, params.domain_src)
        _write_str(fh, params.domain_tgt)
        net = params.net
        fh.write(struct.pack("<B", _ACTIVATION_CODES[net.activation]))
        fh.write(struct.pack("<II", net.dim_in, net.hidden))
        blocks = params.blocks()
        fh.write(struct.pack("<I", len(blocks)))
        for name, arr in blocks:
            _write_str(fh, name)
            _write_array(fh, arr)
    _write_sidecar(path, meta)


def load_mapping(path):
    with open(path, "rb") as fh:
        _check_header(fh, MAGIC_MAPPING, path)
        src = _read_str(fh)
        tgt = _read_str(fh)
        (act_code,) = struct.unpack("<B", fh.read(1))
        dim, hidden = struct.unpack("<II", fh.read(8))
        (n_blocks,) = struct.unpack("<I", fh.read(4))
        blocks = {}
        for _ in range(n_blocks):
            name = _read_str(fh)
            blocks[name] = _read_array(fh)
    net = FeedForward(dim, hidden, dim, rng=None, activation=_ACTIVATION_NAMES[act_code])
    net.w1 = blocks["w1"]
    net.b1 = blocks["b1"]
    net.w2 = blocks["w2"]
    net.b2 = blocks["b2"]
    return MappingParams(src, tgt, net)
