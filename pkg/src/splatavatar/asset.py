"""Avatar asset container.

Layout (little-endian)::

    magic     8 bytes  b"SAVASSET"
    version   u32      currently 1
    count     u32      number of sections
    section * count:
        tag     4 bytes ASCII
        length  u64
        payload length bytes

Sections, in this order:

    HEAD  UTF-8 JSON: model_version, uv_res, id_dim, input_hashes, notes
    RIGH  32-byte SHA-256 of the rig file bytes
    RIG_  the rig in ``rig.save_rig`` format
    BIND  parameter container (``autodiff.checkpoint``) with face_index, bary, valid
    FID_  parameter container with ``f_id`` (H, W, id_dim) float32
    RAWM  parameter container with ``raw`` (H, W, 14) float32 pre-activation static maps
    UNET  UTF-8 JSON: path of the UNet weights file and the SHA-256 of its bytes

Unknown sections are skipped on load, so the format can grow.
"""

from __future__ import annotations

import hashlib
import io
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .autodiff import checkpoint
from .rig import HeadRig, RigError, TexelBinding, bind_texels, rig_from_bytes

MAGIC = b"SAVASSET"
VERSION = 1


class AssetError(ValueError):
    pass


@dataclass
class AvatarAsset:
    f_id: np.ndarray
    raw: np.ndarray
    rig: HeadRig
    binding: TexelBinding
    unet_path: str = ""
    unet_sha256: str = ""
    input_hashes: list = field(default_factory=list)
    model_version: str = "1"
    notes: dict = field(default_factory=dict)

    @property
    def resolution(self) -> tuple[int, int]:
        return self.binding.resolution

    def validate(self) -> None:
        h, w = self.resolution
        if self.raw.shape != (h, w, 14):
            raise AssetError(f"raw maps {self.raw.shape} do not match binding {(h, w)}")
        if self.f_id.shape[:2] != (h, w):
            raise AssetError(f"identity features {self.f_id.shape} do not match binding {(h, w)}")
        if not (np.isfinite(self.raw).all() and np.isfinite(self.f_id).all()):
            raise AssetError("asset maps contain non-finite values")

    def copy(self) -> "AvatarAsset":
        return AvatarAsset(self.f_id.copy(), self.raw.copy(), self.rig, self.binding, self.unet_path,
                           self.unet_sha256, list(self.input_hashes), self.model_version, dict(self.notes))


def file_sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def dumps(asset: AvatarAsset) -> bytes:
    asset.validate()
    rig_bytes = asset.rig.to_bytes()
    head = {
        "model_version": asset.model_version,
        "uv_res": list(asset.resolution),
        "id_dim": int(asset.f_id.shape[-1]),
        "input_hashes": list(asset.input_hashes),
        "notes": asset.notes,
    }
    b = asset.binding
    sections = [
        (b"HEAD", json.dumps(head, sort_keys=True).encode()),
        (b"RIGH", hashlib.sha256(rig_bytes).digest()),
        (b"RIG_", rig_bytes),
        (b"BIND", checkpoint.dumps({
            "face_index": b.face_index.astype(np.int32),
            "bary": b.bary.astype(np.float64),
            "valid": b.valid.astype(np.uint8),
        })),
        (b"FID_", checkpoint.dumps({"f_id": asset.f_id.astype(np.float32)})),
        (b"RAWM", checkpoint.dumps({"raw": asset.raw.astype(np.float32)})),
        (b"UNET", json.dumps({"path": asset.unet_path, "sha256": asset.unet_sha256}, sort_keys=True).encode()),
    ]
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<II", VERSION, len(sections)))
    for tag, payload in sections:
        buf.write(tag)
        buf.write(struct.pack("<Q", len(payload)))
        buf.write(payload)
    return buf.getvalue()


def loads(blob: bytes, check_binding: bool = True) -> AvatarAsset:
    try:
        return _parse(bytes(blob), check_binding)
    except AssetError:
        raise
    except (struct.error, KeyError, ValueError, UnicodeDecodeError) as e:
        raise AssetError(f"corrupt asset: {e}") from None


def _parse(blob: bytes, check_binding: bool) -> AvatarAsset:
    if blob[:8] != MAGIC:
        raise AssetError("not an avatar asset")
    version, count = struct.unpack_from("<II", blob, 8)
    if version != VERSION:
        raise AssetError(f"unsupported asset version {version}")
    pos = 16
    sec = {}
    for _ in range(count):
        tag = blob[pos : pos + 4].decode("ascii")
        (n,) = struct.unpack_from("<Q", blob, pos + 4)
        pos += 12
        sec[tag] = blob[pos : pos + n]
        pos += n
        if pos > len(blob):
            raise AssetError("truncated asset")
    missing = {"HEAD", "RIGH", "RIG_", "BIND", "FID_", "RAWM", "UNET"} - set(sec)
    if missing:
        raise AssetError(f"asset is missing sections {sorted(missing)}")
    if hashlib.sha256(sec["RIG_"]).digest() != sec["RIGH"]:
        raise AssetError("rig hash mismatch")
    head = json.loads(sec["HEAD"].decode())
    try:
        rig = rig_from_bytes(sec["RIG_"])
    except RigError as e:
        raise AssetError(f"bad rig section: {e}") from e
    bd = checkpoint.loads(sec["BIND"])
    binding = TexelBinding(bd["face_index"].astype(np.int32), bd["bary"], bd["valid"].astype(bool))
    if check_binding:
        ref = bind_texels(rig, binding.resolution)
        if not (np.array_equal(ref.face_index, binding.face_index) and np.array_equal(ref.valid, binding.valid)):
            raise AssetError("stored texel binding does not match the rig")
    unet = json.loads(sec["UNET"].decode())
    asset = AvatarAsset(
        checkpoint.loads(sec["FID_"])["f_id"],
        checkpoint.loads(sec["RAWM"])["raw"],
        rig,
        binding,
        unet.get("path", ""),
        unet.get("sha256", ""),
        head.get("input_hashes", []),
        head.get("model_version", "1"),
        head.get("notes", {}),
    )
    asset.validate()
    return asset


def save_asset(asset: AvatarAsset, path) -> None:
    Path(path).write_bytes(dumps(asset))


def load_asset(path) -> AvatarAsset:
    return loads(Path(path).read_bytes())
