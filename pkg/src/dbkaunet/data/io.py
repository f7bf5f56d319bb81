"""Image files and dataset directory layouts.

Supported formats are 8-bit PNG and PGM/PPM (plus 16-bit PNG for
probability maps).  Dataset-native TIFF/GIF/JPEG files must be converted
to PNG first; only the file names are expected to follow each dataset's
convention.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

IMAGE_SUFFIXES = (".png", ".ppm", ".pgm", ".pnm")
LAYOUTS = ("drive", "stare", "chase", "flat")


class DataError(Exception):
    """Base class for data-source failures."""


class MissingMaskError(DataError):
    pass


class UnreadableImageError(DataError):
    pass


class UnknownLayoutError(DataError):
    pass


@dataclass
class FundusSample:
    rgb_image: np.ndarray          # (3, H, W) uint8
    fov_mask: np.ndarray           # (H, W) uint8 in {0, 1}
    vessel_mask: np.ndarray        # (H, W) uint8 in {0, 1}
    source_id: str
    vessel_mask_2nd: np.ndarray | None = None

    def __post_init__(self):
        shape = self.rgb_image.shape[1:]
        for name in ("fov_mask", "vessel_mask", "vessel_mask_2nd"):
            m = getattr(self, name)
            if m is not None and m.shape != shape:
                raise ValueError(f"{name} shape {m.shape} differs from image {shape}")

    @property
    def shape(self) -> tuple[int, int]:
        return self.rgb_image.shape[1:]


def read_image(path) -> np.ndarray:
    """Decode an image file to ``(H, W)`` or ``(H, W, C)`` without rescaling."""
    path = Path(path)
    try:
        with Image.open(path) as im:
            im.load()
            if im.mode in ("P", "PA", "LA", "RGBA", "CMYK", "YCbCr", "1"):
                im = im.convert("RGB" if im.mode not in ("1", "LA") else "L")
            arr = np.array(im)
    except (OSError, UnidentifiedImageError) as exc:
        raise UnreadableImageError(f"cannot read image {path}: {exc}") from exc
    return arr


def read_rgb(path) -> np.ndarray:
    """``(3, H, W)`` uint8; grayscale files are replicated to three channels."""
    arr = read_image(path)
    if arr.dtype != np.uint8:
        raise UnreadableImageError(f"{path}: expected 8-bit data, got {arr.dtype}")
    if arr.ndim == 2:
        arr = np.repeat(arr[..., None], 3, axis=-1)
    return np.ascontiguousarray(arr[..., :3].transpose(2, 0, 1))


def read_mask(path) -> np.ndarray:
    """Binary ``(H, W)`` uint8 mask (nonzero -> 1, any channel)."""
    arr = read_image(path)
    if arr.ndim == 3:
        arr = arr.max(axis=-1)
    return (arr > 0).astype(np.uint8)


def write_image(path, arr: np.ndarray) -> Path:
    """Write ``(H, W)`` gray or ``(3, H, W)``/``(H, W, 3)`` RGB data.

    uint8 goes to PNG/PGM/PPM by suffix; uint16 is only written as PNG.
    """
    path = Path(path)
    arr = np.asarray(arr)
    if arr.ndim == 3 and arr.shape[0] == 3 and arr.shape[-1] != 3:
        arr = arr.transpose(1, 2, 0)
    if arr.dtype == np.uint16:
        if path.suffix.lower() != ".png" or arr.ndim != 2:
            raise ValueError("16-bit output is only supported for grayscale PNG")
        im = Image.fromarray(arr)
    elif arr.dtype == np.uint8:
        im = Image.fromarray(np.ascontiguousarray(arr))
    else:
        raise ValueError(f"unsupported image dtype {arr.dtype}")
    path.parent.mkdir(parents=True, exist_ok=True)
    try:
        im.save(path)
    except OSError as exc:
        raise DataError(f"cannot write image {path}: {exc}") from exc
    return path


def to_uint16(prob: np.ndarray) -> np.ndarray:
    return np.rint(np.clip(prob, 0.0, 1.0) * 65535.0).astype(np.uint16)


def _images_in(directory: Path) -> list[Path]:
    if not directory.is_dir():
        return []
    return sorted(p for p in directory.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)


def _find(directory: Path, stem: str) -> Path | None:
    for suffix in IMAGE_SUFFIXES:
        p = directory / f"{stem}{suffix}"
        if p.exists():
            return p
    return None


def _full_fov(rgb: np.ndarray) -> np.ndarray:
    return np.ones(rgb.shape[1:], dtype=np.uint8)


def estimate_fov(rgb: np.ndarray, level: int = 20) -> np.ndarray:
    """FOV from the red channel for datasets that ship no FOV masks."""
    return (rgb[0] > level).astype(np.uint8)


def _sample(image: Path, vessel: Path | None, fov: Path | None, source_id: str,
            vessel_2nd: Path | None = None, fov_fallback=_full_fov) -> FundusSample:
    if vessel is None:
        raise MissingMaskError(f"no vessel mask found for image {image}")
    rgb = read_rgb(image)
    return FundusSample(
        rgb_image=rgb,
        fov_mask=read_mask(fov) if fov is not None else fov_fallback(rgb),
        vessel_mask=read_mask(vessel),
        source_id=source_id,
        vessel_mask_2nd=read_mask(vessel_2nd) if vessel_2nd is not None else None,
    )


def _load_drive(root: Path) -> list[FundusSample]:
    # images/21_training.png, 1st_manual/21_manual1.png, 2nd_manual/21_manual2.png,
    # mask/21_training_mask.png
    out = []
    for img in _images_in(root / "images"):
        num = img.stem.split("_")[0]
        vessel = _find(root / "1st_manual", f"{num}_manual1")
        second = _find(root / "2nd_manual", f"{num}_manual2")
        fov = _find(root / "mask", f"{img.stem}_mask")
        if fov is None:
            raise MissingMaskError(f"no FOV mask found for image {img}")
        out.append(_sample(img, vessel, fov, img.stem, second))
    return out


def _load_stare(root: Path) -> list[FundusSample]:
    # im0001.ppm with im0001.ah.ppm (first observer) and im0001.vk.ppm (second)
    out = []
    pattern = re.compile(r"^im\d{4}$")
    for img in _images_in(root):
        if not pattern.match(img.stem):
            continue
        vessel = _find(root, f"{img.stem}.ah")
        second = _find(root, f"{img.stem}.vk")
        fov = _find(root, f"{img.stem}.fov")
        out.append(_sample(img, vessel, fov, img.stem, second, fov_fallback=estimate_fov))
    return out


def _load_chase(root: Path) -> list[FundusSample]:
    # Image_01L.png with Image_01L_1stHO.png and Image_01L_2ndHO.png
    out = []
    pattern = re.compile(r"^Image_\d{2}[LR]$")
    for img in _images_in(root):
        if not pattern.match(img.stem):
            continue
        vessel = _find(root, f"{img.stem}_1stHO")
        second = _find(root, f"{img.stem}_2ndHO")
        fov = _find(root, f"{img.stem}_fov")
        out.append(_sample(img, vessel, fov, img.stem, second, fov_fallback=estimate_fov))
    return out


def _load_flat(root: Path) -> list[FundusSample]:
    # images/<id>.png, masks/<id>.png, optional fov/<id>.png
    out = []
    for img in _images_in(root / "images"):
        vessel = _find(root / "masks", img.stem)
        fov = _find(root / "fov", img.stem)
        out.append(_sample(img, vessel, fov, img.stem))
    return out


def load_dataset(dir_path, layout: str = "flat") -> list[FundusSample]:
    """Load every image with its masks from a directory in one of ``LAYOUTS``."""
    root = Path(dir_path)
    loaders = {"drive": _load_drive, "stare": _load_stare, "chase": _load_chase, "flat": _load_flat}
    try:
        loader = loaders[layout]
    except KeyError:
        raise UnknownLayoutError(f"unknown layout {layout!r}; choose from {LAYOUTS}") from None
    if not root.is_dir():
        raise DataError(f"dataset directory {root} does not exist")
    return loader(root)


def save_flat(samples, dir_path, suffix: str = ".png") -> Path:
    """Write samples in the flat layout readable by ``load_dataset(..., "flat")``."""
    root = Path(dir_path)
    for s in samples:
        write_image(root / "images" / f"{s.source_id}{suffix}", s.rgb_image)
        write_image(root / "masks" / f"{s.source_id}{suffix}", s.vessel_mask * np.uint8(255))
        write_image(root / "fov" / f"{s.source_id}{suffix}", s.fov_mask * np.uint8(255))
    return root
