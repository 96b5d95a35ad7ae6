# flowdcn/data/image.py

"""Binary PPM (P6) writer and reader for samples in [-1, 1]."""

# Standard library imports
from pathlib import Path
from typing import Union

# Third party imports
import numpy as np

# Local imports
from flowdcn.exceptions import ArgumentException
from flowdcn.exceptions import ShapeException


def quantize(img: np.ndarray) -> np.ndarray:
    """Map [-1, 1] to bytes with floor((v + 1) * 127.5 + 0.5), clipped to [0, 255]."""
    scaled = np.floor((np.asarray(img, dtype=np.float64) + 1.0) * 127.5 + 0.5)
    return np.clip(scaled, 0, 255).astype(np.uint8)


def dequantize(data: np.ndarray) -> np.ndarray:
    """Inverse of quantize up to rounding: byte / 127.5 - 1."""
    return data.astype(np.float64) / 127.5 - 1.0


def encode_ppm(img: np.ndarray) -> bytes:
    """
    Encode an [H, W, C] image (C in {1, 3}) as P6 bytes.

    Args:
        img: Image with values in [-1, 1]; grayscale is replicated to RGB

    Returns:
        Header `P6\\n<W> <H>\\n255\\n` followed by row-major RGB bytes
    """
    if img.ndim != 3 or img.shape[2] not in (1, 3):
        raise ShapeException("PPM images must be [H, W, 1] or [H, W, 3]", "img", actual=img.shape)
    data = quantize(img)
    if data.shape[2] == 1:
        data = np.repeat(data, 3, axis=2)
    height, width = data.shape[:2]
    return f"P6\n{width} {height}\n255\n".encode("ascii") + data.tobytes()


def write_image(img: np.ndarray, path: Union[str, Path]) -> None:
    """Write `img` as a binary PPM file."""
    Path(path).write_bytes(encode_ppm(img))


def read_image(path: Union[str, Path]) -> np.ndarray:
    """
    Read a P6 file written by write_image.

    Args:
        path: File path

    Returns:
        uint8 array [H, W, 3]

    Raises:
        ArgumentException: If the file is not an 8-bit binary PPM
    """
    raw = Path(path).read_bytes()
    parts = raw.split(b"\n", 3)
    if len(parts) < 4 or parts[0] != b"P6" or parts[2] != b"255":
        raise ArgumentException(f"{path} is not an 8-bit binary PPM", "path")
    width, height = (int(v) for v in parts[1].split())
    pixels = np.frombuffer(parts[3], dtype=np.uint8)
    if pixels.size != width * height * 3:
        raise ArgumentException(
            f"{path} holds {pixels.size} bytes, expected {width * height * 3}", "path"
        )
    return pixels.reshape(height, width, 3).copy()
