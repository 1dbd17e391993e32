"""Orthonormal analysis transforms (DCT-II, Haar) in 1D and 2D.

Every transform here satisfies ``inverse(forward(x)) == x`` and is an
isometry, so the transpose of the transform matrix is its inverse.
2D transforms act on column-major reshaped vectors, the same convention
the sensing and denoising code uses for images and matrices.
"""

from enum import Enum

import numpy as np
from scipy import fft

SQRT_HALF = np.sqrt(0.5)


class TransformKind(str, Enum):
    DCT = "DCT"
    HAAR = "HAAR"
    IDENTITY = "IDENTITY"


def is_power_of_two(n):
    return n >= 1 and (n & (n - 1)) == 0


def _haar_step(a, length, axis):
    """One analysis level over the leading ``length`` entries of ``axis``."""
    a = np.moveaxis(a, axis, 0)
    head = a[:length]
    even, odd = head[0::2], head[1::2]
    out = a.copy()
    out[: length // 2] = (even + odd) * SQRT_HALF
    out[length // 2 : length] = (even - odd) * SQRT_HALF
    return np.moveaxis(out, 0, axis)


def _ihaar_step(a, length, axis):
    a = np.moveaxis(a, axis, 0)
    approx, detail = a[: length // 2], a[length // 2 : length]
    out = a.copy()
    out[0:length:2] = (approx + detail) * SQRT_HALF
    out[1:length:2] = (approx - detail) * SQRT_HALF
    return np.moveaxis(out, 0, axis)


def haar(x, axis=0):
    """Full-depth orthonormal Haar analysis along one axis."""
    n = x.shape[axis]
    if not is_power_of_two(n):
        raise ValueError(f"Haar transform needs a power-of-two length, got {n}")
    out = np.array(x, dtype=float)
    length = n
    while length > 1:
        out = _haar_step(out, length, axis)
        length //= 2
    return out


def ihaar(c, axis=0):
    n = c.shape[axis]
    if not is_power_of_two(n):
        raise ValueError(f"Haar transform needs a power-of-two length, got {n}")
    out = np.array(c, dtype=float)
    length = 2
    while length <= n:
        out = _ihaar_step(out, length, axis)
        length *= 2
    return out


def haar2(img):
    """Square-pyramid (Mallat) 2D Haar analysis of a 2D array."""
    n1, n2 = img.shape
    if not (is_power_of_two(n1) and is_power_of_two(n2)):
        raise ValueError(f"2D Haar transform needs power-of-two sides, got {img.shape}")
    out = np.array(img, dtype=float)
    l1, l2 = n1, n2
    while l1 > 1 or l2 > 1:
        block = out[:l1, :l2]
        if l1 > 1:
            block = _haar_step(block, l1, 0)
        if l2 > 1:
            block = _haar_step(block, l2, 1)
        out[:l1, :l2] = block
        l1, l2 = max(l1 // 2, 1), max(l2 // 2, 1)
    return out


def ihaar2(coef):
    n1, n2 = coef.shape
    if not (is_power_of_two(n1) and is_power_of_two(n2)):
        raise ValueError(f"2D Haar transform needs power-of-two sides, got {coef.shape}")
    sizes = []
    l1, l2 = n1, n2
    while l1 > 1 or l2 > 1:
        sizes.append((l1, l2))
        l1, l2 = max(l1 // 2, 1), max(l2 // 2, 1)
    out = np.array(coef, dtype=float)
    for l1, l2 in reversed(sizes):
        block = out[:l1, :l2]
        if l2 > 1:
            block = _ihaar_step(block, l2, 1)
        if l1 > 1:
            block = _ihaar_step(block, l1, 0)
        out[:l1, :l2] = block
    return out


def forward(x, kind, shape=None):
    """Apply the orthonormal analysis transform ``O^T`` to a flat vector.

    With ``shape`` given, ``x`` is read as a column-major 2D array and the
    separable 2D transform is used.
    """
    kind = TransformKind(kind)
    x = np.asarray(x, dtype=float)
    if kind is TransformKind.IDENTITY:
        return x.copy()
    if shape is None:
        if kind is TransformKind.DCT:
            return fft.dct(x, type=2, norm="ortho")
        return haar(x)
    img = x.reshape(shape, order="F")
    if kind is TransformKind.DCT:
        coef = fft.dctn(img, type=2, norm="ortho")
    else:
        coef = haar2(img)
    return coef.ravel(order="F")


def inverse(c, kind, shape=None):
    """Apply the synthesis transform ``O`` (inverse of :func:`forward`)."""
    kind = TransformKind(kind)
    c = np.asarray(c, dtype=float)
    if kind is TransformKind.IDENTITY:
        return c.copy()
    if shape is None:
        if kind is TransformKind.DCT:
            return fft.idct(c, type=2, norm="ortho")
        return ihaar(c)
    coef = c.reshape(shape, order="F")
    if kind is TransformKind.DCT:
        img = fft.idctn(coef, type=2, norm="ortho")
    else:
        img = ihaar2(coef)
    return img.ravel(order="F")


def check_supported(kind, n, shape=None):
    """Raise ``ValueError`` if ``kind`` cannot act on vectors of length ``n``."""
    kind = TransformKind(kind)
    if shape is not None:
        if int(np.prod(shape)) != n:
            raise ValueError(f"shape {shape} does not hold {n} entries")
        if kind is TransformKind.HAAR and not all(is_power_of_two(s) for s in shape):
            raise ValueError(f"Haar transform needs power-of-two sides, got {shape}")
    elif kind is TransformKind.HAAR and not is_power_of_two(n):
        raise ValueError(f"Haar transform needs a power-of-two length, got {n}")
