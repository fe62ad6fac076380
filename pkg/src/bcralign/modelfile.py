"""The "BCR1" binary model container.

Layout (all integers little-endian)::

    magic    4 bytes  b"BCR1"
    version  u32
    count    u32      number of sections
    table    count x (u32 name length, name utf-8, u64 offset, u64 length)
    payloads

``meta`` holds JSON (model settings, node tree, per-node stats). Every other
section is a list of named arrays, each stored as ``u32 name length, name,
u8 dtype (0 = <f8, 1 = <i4), u32 ndim, ndim x u32 dims, raw data``. Node
``i`` owns the sections ``node{i}/spdm``, ``node{i}/forest``,
``node{i}/regressor`` and, for branching nodes, ``node{i}/gate``.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .cascade import BcrModel, BcrNode
from .errors import BadMagicError, ModelFileError, TruncatedSectionError, VersionMismatchError
from .features import FeatureForest, RegressionTree
from .linalg import LinearSvm, RidgeRegressor
from .spdm import SpdmModel

MAGIC = b"BCR1"
VERSION = 1

_DTYPES = {0: np.dtype("<f8"), 1: np.dtype("<i4")}
_CODES = {"f": 0, "i": 1}

# ---------------------------------------------------------------- array blocks


def _pack_arrays(arrays: dict) -> bytes:
    out = bytearray()
    for name, arr in arrays.items():
        a = np.asarray(arr)
        code = _CODES["f"] if a.dtype.kind == "f" else _CODES["i"]
        a = np.ascontiguousarray(a, dtype=_DTYPES[code])
        key = name.encode()
        out += struct.pack("<I", len(key)) + key
        out += struct.pack("<BI", code, a.ndim)
        out += struct.pack(f"<{a.ndim}I", *a.shape)
        out += a.tobytes()
    return bytes(out)


def _unpack_arrays(buf: bytes, section: str) -> dict:
    arrays, pos = {}, 0

    def take(n):
        nonlocal pos
        if pos + n > len(buf):
            raise TruncatedSectionError(section)
        chunk = buf[pos:pos + n]
        pos += n
        return chunk

    while pos < len(buf):
        (klen,) = struct.unpack("<I", take(4))
        name = take(klen).decode()
        code, ndim = struct.unpack("<BI", take(5))
        if code not in _DTYPES:
            raise ModelFileError(f"section {section!r}: unknown dtype code {code}")
        shape = struct.unpack(f"<{ndim}I", take(4 * ndim))
        dt = _DTYPES[code]
        count = int(np.prod(shape, dtype=np.int64))
        data = np.frombuffer(take(count * dt.itemsize), dtype=dt).reshape(shape)
        arrays[name] = data.astype(dt.newbyteorder("="))
    return arrays


# ---------------------------------------------------------------- per-part encoding


def _spdm_arrays(node: BcrNode) -> dict:
    out = {"mean_shape": node.mean_shape}
    m = node.spdm
    if m is not None:
        out.update(mu_s=m.mu_s, B_s=m.B_s, mu_v=m.mu_v, B_v=m.B_v, C=m.C,
                   shape_param_scale=m.shape_param_scale, n_shape_modes=np.array([m.n_shape_modes]))
    return out


def _spdm_from(a: dict):
    if "mu_s" not in a:
        return a["mean_shape"], None
    spdm = SpdmModel(a["mu_s"], a["B_s"], a["mu_v"], a["B_v"], a["C"], a["shape_param_scale"],
                     int(a["n_shape_modes"][0]))
    return a["mean_shape"], spdm


def _forest_arrays(forest: FeatureForest) -> dict:
    trees = forest.trees
    if not trees:
        return {"landmark": np.zeros(0, np.int32), "depth": np.zeros(0, np.int32),
                "n_nodes": np.zeros(0, np.int32), "offsets": np.zeros((0, 4)), "threshold": np.zeros(0),
                "left": np.zeros(0, np.int32), "right": np.zeros(0, np.int32), "leaf_id": np.zeros(0, np.int32)}
    return {
        "landmark": np.array([t.landmark for t in trees], dtype=np.int32),
        "depth": np.array([t.depth for t in trees], dtype=np.int32),
        "n_nodes": np.array([t.n_nodes for t in trees], dtype=np.int32),
        "offsets": np.concatenate([t.offsets.reshape(-1, 4) for t in trees]),
        "threshold": np.concatenate([t.threshold for t in trees]),
        "left": np.concatenate([t.left for t in trees]),
        "right": np.concatenate([t.right for t in trees]),
        "leaf_id": np.concatenate([t.leaf_id for t in trees]),
    }


def _forest_from(a: dict) -> FeatureForest:
    trees, start = [], 0
    for lm, depth, k in zip(a["landmark"], a["depth"], a["n_nodes"]):
        sl = slice(start, start + int(k))
        trees.append(RegressionTree(int(lm), a["offsets"][sl].copy(), a["threshold"][sl].copy(),
                                    a["left"][sl].copy(), a["right"][sl].copy(), a["leaf_id"][sl].copy(),
                                    int(depth)))
        start += int(k)
    return FeatureForest.from_trees(trees)


# ---------------------------------------------------------------- container


def model_to_bytes(model: BcrModel) -> bytes:
    nodes = model.nodes()
    index = {id(n): i for i, n in enumerate(nodes)}
    meta = {
        "levels": model.levels,
        "n_landmarks": model.n_landmarks,
        "target_mode": model.target_mode,
        "config": model.config,
        "nodes": [
            {"level": n.level, "children": [index[id(c)] for c in n.children], "stats": n.stats}
            for n in nodes
        ],
    }
    sections = [("meta", json.dumps(meta, sort_keys=True).encode()),
                ("reference", _pack_arrays({"reference_shape": model.reference_shape}))]
    for i, n in enumerate(nodes):
        sections.append((f"node{i}/spdm", _pack_arrays(_spdm_arrays(n))))
        sections.append((f"node{i}/forest", _pack_arrays(_forest_arrays(n.forest))))
        sections.append((f"node{i}/regressor", _pack_arrays(
            {"weights": n.regressor.weights, "lam": np.array([n.regressor.lam])})))
        if n.gate is not None:
            sections.append((f"node{i}/gate", _pack_arrays(
                {"weights": n.gate.weights, "bias": np.array([n.gate.bias]), "cost": np.array([n.gate.cost])})))

    table_size = sum(4 + len(name.encode()) + 16 for name, _ in sections)
    offset = 12 + table_size
    head = bytearray(MAGIC + struct.pack("<II", VERSION, len(sections)))
    for name, payload in sections:
        key = name.encode()
        head += struct.pack("<I", len(key)) + key + struct.pack("<QQ", offset, len(payload))
        offset += len(payload)
    return bytes(head) + b"".join(p for _, p in sections)


def read_sections(data: bytes) -> dict:
    """Section name -> payload bytes, validating the header and table."""
    if len(data) < 4 or data[:4] != MAGIC:
        raise BadMagicError(f"not a BCR1 model file (magic {data[:4]!r})")
    if len(data) < 12:
        raise TruncatedSectionError("header")
    version, count = struct.unpack("<II", data[4:12])
    if version != VERSION:
        raise VersionMismatchError(f"model file version {version}; this build reads version {VERSION}")
    pos, entries = 12, []
    for _ in range(count):
        if pos + 4 > len(data):
            raise TruncatedSectionError("table")
        (klen,) = struct.unpack("<I", data[pos:pos + 4])
        if pos + 4 + klen + 16 > len(data):
            raise TruncatedSectionError("table")
        name = data[pos + 4:pos + 4 + klen].decode()
        off, length = struct.unpack("<QQ", data[pos + 4 + klen:pos + 20 + klen])
        entries.append((name, off, length))
        pos += 20 + klen
    out = {}
    for name, off, length in entries:
        if off + length > len(data):
            raise TruncatedSectionError(name)
        out[name] = data[off:off + length]
    return out


def model_from_bytes(data: bytes) -> BcrModel:
    sec = read_sections(data)

    def need(name):
        if name not in sec:
            raise ModelFileError(f"missing section {name!r}")
        return sec[name]

    try:
        meta = json.loads(need("meta").decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ModelFileError(f"unreadable meta section: {exc}") from exc
    reference = _unpack_arrays(need("reference"), "reference")["reference_shape"]
    nodes = []
    for i, info in enumerate(meta["nodes"]):
        mean_shape, spdm = _spdm_from(_unpack_arrays(need(f"node{i}/spdm"), f"node{i}/spdm"))
        forest = _forest_from(_unpack_arrays(need(f"node{i}/forest"), f"node{i}/forest"))
        r = _unpack_arrays(need(f"node{i}/regressor"), f"node{i}/regressor")
        regressor = RidgeRegressor(r["weights"], float(r["lam"][0]))
        gate = None
        if f"node{i}/gate" in sec:
            g = _unpack_arrays(sec[f"node{i}/gate"], f"node{i}/gate")
            gate = LinearSvm(g["weights"], float(g["bias"][0]), float(g["cost"][0]))
        nodes.append(BcrNode(info["level"], mean_shape, spdm, forest, regressor, gate, (), info["stats"]))
    for node, info in zip(nodes, meta["nodes"]):
        node.children = tuple(nodes[c] for c in info["children"])
    config = dict(meta["config"])
    if "radii" in config:
        config["radii"] = tuple(config["radii"])
    return BcrModel(nodes[0], meta["levels"], meta["n_landmarks"], meta["target_mode"], reference, config)


def save_model(model: BcrModel, path) -> None:
    Path(path).write_bytes(model_to_bytes(model))


def load_model(path) -> BcrModel:
    return model_from_bytes(Path(path).read_bytes())
