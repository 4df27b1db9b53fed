"""BNNPRIOR checkpoint files and on-disk ensembles.

Checkpoint layout::

    8 bytes   magic b"BNNPRIOR"
    u16 LE    format version
    u32 LE    metadata length L
    L bytes   UTF-8 JSON metadata
    payload   little-endian float64; per component: mu, then V column-major,
              then the explicit diagonal when the component has one

Families: ``lowrank`` (one component), ``mixture`` (K components),
``diag`` (mu then log-std) and ``point`` (a single weight vector).
"""

from __future__ import annotations

import hashlib
import json
import os
import struct

import numpy as np

from .errors import FormatError, InvalidShape
from .family import DiagGaussian, GaussianMixturePrior, LowRankGaussian
from .nn import ArchSpec

MAGIC = b"BNNPRIOR"
VERSION = 1
_HEADER = 14


def _component_meta(c: LowRankGaussian) -> dict:
    return {"rank": c.rank, "jitter_sigma": float(c.jitter_sigma), "has_diag": c.diag is not None}


def _component_arrays(c: LowRankGaussian):
    out = [c.mu, c.factors.ravel(order="F")]
    if c.diag is not None:
        out.append(c.diag)
    return out


def encode_prior(q, metadata: dict | None = None) -> bytes:
    """Serialize a prior (or a point estimate given as a 1-D array) to bytes."""
    meta = dict(metadata or {})
    arch = getattr(q, "arch", None) or meta.pop("arch_spec", None)
    if isinstance(q, np.ndarray):
        meta.update(family="point", n_params=int(q.size))
        arrays = [q.ravel()]
    elif isinstance(q, DiagGaussian):
        meta.update(family="diag", n_params=q.dim)
        arrays = [q.mu, q.log_std]
    elif isinstance(q, LowRankGaussian):
        meta.update(family="lowrank", n_params=q.dim, K=1, components=[_component_meta(q)])
        arrays = _component_arrays(q)
    elif isinstance(q, GaussianMixturePrior):
        meta.update(family="mixture", n_params=q.dim, K=q.K,
                    components=[_component_meta(c) for c in q.components])
        arrays = [a for c in q.components for a in _component_arrays(c)]
    else:
        raise InvalidShape(f"cannot serialize {type(q).__name__}")
    if arch is not None:
        meta["arch"] = arch.to_dict() if isinstance(arch, ArchSpec) else dict(arch)
    blob = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")
    payload = b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for a in arrays)
    return MAGIC + struct.pack("<HI", VERSION, len(blob)) + blob + payload


def _expected_floats(meta) -> int:
    n = int(meta["n_params"])
    fam = meta["family"]
    if fam == "point":
        return n
    if fam == "diag":
        return 2 * n
    return sum(n + n * int(c["rank"]) + (n if c["has_diag"] else 0) for c in meta["components"])


def decode_prior(data: bytes):
    """Inverse of :func:`encode_prior`; returns ``(prior, metadata)``."""
    if len(data) < _HEADER:
        raise FormatError(f"BNNPRIOR header truncated: {len(data)} bytes, need {_HEADER}")
    if data[:8] != MAGIC:
        raise FormatError(f"bad BNNPRIOR magic {data[:8]!r}")
    version, mlen = struct.unpack("<HI", data[8:_HEADER])
    if version != VERSION:
        raise FormatError(f"unsupported BNNPRIOR version {version}")
    if len(data) < _HEADER + mlen:
        raise FormatError(f"BNNPRIOR metadata truncated: expected at least {_HEADER + mlen} bytes, got {len(data)}")
    try:
        meta = json.loads(data[_HEADER:_HEADER + mlen].decode("utf-8"))
        expected = _HEADER + mlen + 8 * _expected_floats(meta)
    except (UnicodeDecodeError, json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"bad BNNPRIOR metadata: {exc}") from exc
    if len(data) != expected:
        raise FormatError(f"BNNPRIOR payload size mismatch: expected {expected} bytes, got {len(data)}")
    flat = np.frombuffer(data[_HEADER + mlen:], dtype="<f8").astype(np.float64)
    arch = ArchSpec.from_dict(meta["arch"]) if "arch" in meta else None
    n = int(meta["n_params"])
    fam = meta["family"]
    if fam == "point":
        return flat.copy(), meta
    if fam == "diag":
        return DiagGaussian(flat[:n].copy(), flat[n:].copy(), arch=arch), meta
    comps, pos = [], 0
    for c in meta["components"]:
        r = int(c["rank"])
        mu = flat[pos:pos + n].copy()
        pos += n
        V = flat[pos:pos + n * r].reshape((n, r), order="F").copy()
        pos += n * r
        diag = None
        if c["has_diag"]:
            diag = flat[pos:pos + n].copy()
            pos += n
        comps.append(LowRankGaussian(mu, V, c["jitter_sigma"], diag=diag, arch=arch))
    if fam == "lowrank":
        return comps[0], meta
    if fam == "mixture":
        return GaussianMixturePrior(tuple(comps)), meta
    raise FormatError(f"unknown prior family {fam!r}")


def save_prior(q, path, metadata: dict | None = None) -> bytes:
    data = encode_prior(q, metadata)
    with open(path, "wb") as fh:
        fh.write(data)
    return data


def load_prior(path):
    with open(path, "rb") as fh:
        return decode_prior(fh.read())


def file_sha256(path) -> str:
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()


def priors_equal(a, b) -> bool:
    """Bit-level equality of two priors' arrays and scalar settings."""
    return encode_prior(a) == encode_prior(b)


# ensembles ---------------------------------------------------------------

def save_ensemble(ens, directory, metadata: dict | None = None) -> None:
    os.makedirs(directory, exist_ok=True)
    files = []
    for i, w in enumerate(ens.members):
        name = f"member_{i:03d}.bnnp"
        save_prior(w, os.path.join(directory, name), {"arch_spec": ens.arch.to_dict()})
        files.append(name)
    manifest = dict(metadata or {})
    manifest.update(arch=ens.arch.to_dict(), averaging=ens.averaging, members=files)
    with open(os.path.join(directory, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_ensemble(directory):
    from .posterior import Ensemble
    try:
        with open(os.path.join(directory, "manifest.json")) as fh:
            manifest = json.load(fh)
    except json.JSONDecodeError as exc:
        raise FormatError(f"bad ensemble manifest: {exc}") from exc
    arch = ArchSpec.from_dict(manifest["arch"])
    members = [load_prior(os.path.join(directory, f))[0] for f in manifest["members"]]
    return Ensemble(arch, members, manifest.get("averaging", "logits")), manifest
