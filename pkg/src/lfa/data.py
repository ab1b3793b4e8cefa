"""Patch IO: pixel normalization, manifest files, PNG round-trips, loading.

A dataset on disk is a directory with a tab-separated ``manifest.tsv``
listing image paths (and optional mask paths plus a class tag) relative
to the manifest.  The manifest header records the normalization mapping
so that consumers never have to guess the pixel convention.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import ManifestError, ShapeError
from .synthetic import SyntheticSample

MANIFEST_NAME = "manifest.tsv"
_MANIFEST_MAGIC = "# lfa-manifest v1"
_NORM_LINE = "# normalization: raw_min=0 raw_max=255 mapping=x/127.5-1"


def normalize(raw: np.ndarray) -> np.ndarray:
    """Map raw [0, 255] intensities to float32 in [-1, 1]."""
    try:
        arr = np.asarray(raw, dtype=np.float32)
    except (ValueError, TypeError) as e:
        raise ShapeError(f"raw input is not rectangular: {e}") from e
    return (arr / 127.5) - 1.0


def denormalize(pixels: np.ndarray) -> np.ndarray:
    """Inverse of normalize; rounds to the nearest uint8 level."""
    raw = (np.asarray(pixels, dtype=np.float32) + 1.0) * 127.5
    return np.clip(np.rint(raw), 0, 255).astype(np.uint8)


@dataclass
class ImagePatch:
    pixels: np.ndarray                 # (H, W) float32 in [-1, 1]
    source_id: str
    class_tag: str | None = None
    mask: np.ndarray | None = None     # (H, W) bool when ground truth exists

    def validate(self, patch_size: int | None = None):
        p = self.pixels
        if p.ndim != 2 or p.shape[0] != p.shape[1]:
            raise ShapeError(f"patch '{self.source_id}' is not square: {p.shape}")
        if patch_size is not None and p.shape[0] != patch_size:
            raise ShapeError(
                f"patch '{self.source_id}' has size {p.shape[0]}, expected {patch_size}"
            )
        if not np.isfinite(p).all():
            raise ShapeError(f"patch '{self.source_id}' has non-finite pixels")
        if p.min() < -1.0 or p.max() > 1.0:
            raise ShapeError(f"patch '{self.source_id}' outside [-1, 1]")
        if self.mask is not None and self.mask.shape != p.shape:
            raise ShapeError(f"mask shape {self.mask.shape} != patch shape {p.shape}")


@dataclass
class ManifestEntry:
    image: str                        # path relative to the manifest directory
    mask: str | None = None
    class_tag: str = ""

    @property
    def source_id(self) -> str:
        return Path(self.image).stem


def write_manifest(dirpath: str | os.PathLike, entries: list[ManifestEntry]) -> Path:
    path = Path(dirpath) / MANIFEST_NAME
    seen: set[str] = set()
    lines = [_MANIFEST_MAGIC, _NORM_LINE]
    for e in entries:
        if e.source_id in seen:
            raise ManifestError(f"duplicate source id '{e.source_id}'")
        seen.add(e.source_id)
        lines.append("\t".join([e.image, e.mask or "-", e.class_tag or "-"]))
    path.write_text("\n".join(lines) + "\n")
    return path


def read_manifest(path: str | os.PathLike) -> list[ManifestEntry]:
    path = Path(path)
    if path.is_dir():
        path = path / MANIFEST_NAME
    if not path.exists():
        raise ManifestError(f"manifest not found: {path}")
    lines = path.read_text().splitlines()
    if not lines or lines[0].strip() != _MANIFEST_MAGIC:
        raise ManifestError(f"{path}: missing '{_MANIFEST_MAGIC}' header")
    entries: list[ManifestEntry] = []
    seen: set[str] = set()
    for ln in lines[1:]:
        ln = ln.rstrip("\n")
        if not ln.strip() or ln.startswith("#"):
            continue
        cols = ln.split("\t")
        if len(cols) != 3:
            raise ManifestError(f"{path}: expected 3 tab-separated columns, got {len(cols)}: {ln!r}")
        image, mask, tag = cols
        e = ManifestEntry(image=image,
                          mask=None if mask == "-" else mask,
                          class_tag="" if tag == "-" else tag)
        if e.source_id in seen:
            raise ManifestError(f"{path}: duplicate source id '{e.source_id}'")
        seen.add(e.source_id)
        entries.append(e)
    # zero entries is legal: downstream gets an empty stream
    base = path.parent
    for e in entries:
        if not (base / e.image).exists():
            raise ManifestError(f"{path}: image file missing: {e.image}")
        if e.mask is not None and not (base / e.mask).exists():
            raise ManifestError(f"{path}: mask file missing: {e.mask}")
    return entries


def save_patch_png(pixels: np.ndarray, path: str | os.PathLike):
    Image.fromarray(denormalize(pixels), mode="L").save(path)


def save_mask_png(mask: np.ndarray, path: str | os.PathLike):
    Image.fromarray((mask.astype(np.uint8) * 255), mode="L").save(path)


def load_patch_png(path: str | os.PathLike, patch_size: int | None = None) -> np.ndarray:
    """Load a grayscale PNG as normalized float32, resizing bilinearly if needed."""
    img = Image.open(path).convert("L")
    if patch_size is not None and img.size != (patch_size, patch_size):
        img = img.resize((patch_size, patch_size), Image.BILINEAR)
    return normalize(np.asarray(img, dtype=np.uint8))


def load_mask_png(path: str | os.PathLike, patch_size: int | None = None) -> np.ndarray:
    img = Image.open(path).convert("L")
    if patch_size is not None and img.size != (patch_size, patch_size):
        img = img.resize((patch_size, patch_size), Image.NEAREST)
    return np.asarray(img, dtype=np.uint8) >= 128


def write_dataset(dirpath: str | os.PathLike, samples: list[SyntheticSample]) -> Path:
    """Lay a synthetic sample list out as a PNG dataset with a manifest."""
    base = Path(dirpath)
    (base / "images").mkdir(parents=True, exist_ok=True)
    (base / "masks").mkdir(parents=True, exist_ok=True)
    entries = []
    for s in samples:
        img_rel = f"images/{s.source_id}.png"
        mask_rel = f"masks/{s.source_id}.png"
        save_patch_png(s.pixels, base / img_rel)
        save_mask_png(s.mask, base / mask_rel)
        entries.append(ManifestEntry(image=img_rel, mask=mask_rel, class_tag=s.class_tag))
    return write_manifest(base, entries)


def load_dataset(manifest_path: str | os.PathLike, patch_size: int,
                 shuffle_seed: int | None = None,
                 with_masks: bool = False) -> list[ImagePatch]:
    """Load every manifest entry as a validated ImagePatch.

    Order follows the manifest unless shuffle_seed is given, in which case
    the order is a deterministic permutation drawn from that seed.
    """
    path = Path(manifest_path)
    base = path if path.is_dir() else path.parent
    entries = read_manifest(path)
    patches = []
    for e in entries:
        mask = None
        if with_masks and e.mask is not None:
            mask = load_mask_png(base / e.mask, patch_size)
        p = ImagePatch(pixels=load_patch_png(base / e.image, patch_size),
                       source_id=e.source_id, class_tag=e.class_tag or None, mask=mask)
        p.validate(patch_size)
        patches.append(p)
    if shuffle_seed is not None:
        order = np.random.default_rng(shuffle_seed).permutation(len(patches))
        patches = [patches[i] for i in order]
    return patches


def stack_pixels(patches: list[ImagePatch]) -> np.ndarray:
    if not patches:
        raise ShapeError("empty patch list")
    return np.stack([p.pixels for p in patches]).astype(np.float32)
