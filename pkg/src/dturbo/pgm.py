"""Minimal 8-bit PGM (P2 ASCII / P5 binary) reader and writer.

Images travel through the package as column-major flattened float vectors;
these helpers convert at the file boundary.
"""

import numpy as np

from .errors import PGMError

_WHITESPACE = b" \t\r\n\v\f"


def _header_tokens(data, count):
    """Read ``count`` whitespace-separated header tokens, skipping comments.

    Returns the tokens and the offset just past the single whitespace byte
    that terminates the last token.
    """
    tokens = []
    pos = 0
    size = len(data)
    while len(tokens) < count:
        while pos < size and data[pos] in _WHITESPACE:
            pos += 1
        if pos < size and data[pos : pos + 1] == b"#":
            while pos < size and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        if pos >= size:
            raise PGMError("truncated header", offset=pos)
        start = pos
        while pos < size and data[pos] not in _WHITESPACE and data[pos : pos + 1] != b"#":
            pos += 1
        tokens.append((data[start:pos], start))
    if pos >= size or data[pos] not in _WHITESPACE:
        raise PGMError("header must end with a whitespace byte", offset=pos)
    return tokens, pos + 1


def _int_token(token, what):
    raw, offset = token
    try:
        value = int(raw)
    except ValueError:
        raise PGMError(f"bad {what} {raw!r}", offset=offset) from None
    if value <= 0:
        raise PGMError(f"{what} must be positive, got {value}", offset=offset)
    return value


def read_pgm(path):
    """Return the image as a ``(rows, cols)`` uint8 array."""
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 2:
        raise PGMError("file too short for a PGM magic number", offset=len(data))
    magic = data[:2]
    if magic not in (b"P2", b"P5"):
        raise PGMError(f"unsupported magic number {magic!r}", offset=0)
    tokens, pos = _header_tokens(data[2:], 3)
    pos += 2
    width = _int_token(tokens[0], "width")
    height = _int_token(tokens[1], "height")
    maxval = _int_token(tokens[2], "maxval")
    if maxval > 255:
        raise PGMError(f"only 8-bit PGM is supported (maxval {maxval})", offset=tokens[2][1] + 2)
    count = width * height

    if magic == b"P5":
        end = pos + count
        if len(data) < end:
            raise PGMError(f"pixel data truncated: expected {count} bytes, found {len(data) - pos}",
                           offset=len(data))
        pixels = np.frombuffer(data, dtype=np.uint8, count=count, offset=pos)
    else:
        fields = data[pos:].split()
        if len(fields) < count:
            raise PGMError(f"pixel data truncated: expected {count} values, found {len(fields)}",
                           offset=len(data))
        try:
            pixels = np.array([int(f) for f in fields[:count]], dtype=np.int64)
        except ValueError:
            raise PGMError("non-integer pixel value", offset=pos) from None
        if pixels.min() < 0 or pixels.max() > maxval:
            raise PGMError("pixel value outside [0, maxval]", offset=pos)
        pixels = pixels.astype(np.uint8)
    return pixels.reshape(height, width).copy()


def write_pgm(path, image, binary=True):
    """Write a 2D array of integers in [0, 255] (values are rounded and clipped)."""
    image = np.asarray(image)
    if image.ndim != 2:
        raise ValueError(f"expected a 2D image, got shape {image.shape}")
    pixels = np.clip(np.rint(image), 0, 255).astype(np.uint8)
    height, width = pixels.shape
    with open(path, "wb") as fh:
        if binary:
            fh.write(b"P5\n%d %d\n255\n" % (width, height))
            fh.write(pixels.tobytes())
        else:
            fh.write(b"P2\n%d %d\n255\n" % (width, height))
            for row in pixels:
                fh.write(b" ".join(b"%d" % v for v in row) + b"\n")


def load_pgm(path):
    """Image as a column-major float vector plus its ``(rows, cols)`` shape."""
    img = read_pgm(path)
    return img.astype(float).ravel(order="F"), img.shape


def save_pgm(path, vector, dims, binary=True):
    img = np.asarray(vector, dtype=float).reshape(dims, order="F")
    write_pgm(path, img, binary=binary)
