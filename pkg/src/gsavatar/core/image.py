"""Float RGB image buffer with 8-bit PNG at the file boundary.

Data layout is row-major (height, width, 3), values in [0, 1].
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image as PILImage

from gsavatar.core.errors import ValidationError


@dataclass(frozen=True)
class Image:
    data: np.ndarray  # (H, W, 3) float64 in [0, 1]

    def __post_init__(self) -> None:
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim != 3 or arr.shape[2] != 3:
            raise ValidationError(f"image data must be (H, W, 3), got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValidationError("image data must be finite")
        if arr.min() < 0.0 or arr.max() > 1.0:
            raise ValidationError("image values must lie in [0, 1]")
        object.__setattr__(self, "data", arr)

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]


def save_png(image: Image, path: str | Path) -> None:
    arr = np.clip(np.rint(image.data * 255.0), 0, 255).astype(np.uint8)
    PILImage.fromarray(arr, mode="RGB").save(str(path))


def load_png(path: str | Path) -> Image:
    with PILImage.open(str(path)) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
    return Image(arr)


def load_image(path: str | Path) -> Image:
    """Load either an 8-bit PNG or a lossless float .npy buffer."""
    path = Path(path)
    if path.suffix == ".npy":
        return Image(np.load(path))
    return load_png(path)


def save_image(image: Image, path: str | Path) -> None:
    path = Path(path)
    if path.suffix == ".npy":
        np.save(path, image.data)
    else:
        save_png(image, path)


def resize_bilinear(image: Image, width: int, height: int) -> Image:
    if image.width == width and image.height == height:
        return image
    channels = []
    for c in range(3):
        pil = PILImage.fromarray(image.data[:, :, c].astype(np.float32), mode="F")
        resized = pil.resize((width, height), PILImage.BILINEAR)
        channels.append(np.asarray(resized, dtype=np.float64))
    return Image(np.clip(np.stack(channels, axis=2), 0.0, 1.0))


def png_bytes(image: Image) -> bytes:
    import io

    arr = np.clip(np.rint(image.data * 255.0), 0, 255).astype(np.uint8)
    buf = io.BytesIO()
    PILImage.fromarray(arr, mode="RGB").save(buf, format="PNG")
    return buf.getvalue()


def image_from_png_bytes(data: bytes) -> Image:
    import io

    with PILImage.open(io.BytesIO(data)) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
    return Image(arr)
