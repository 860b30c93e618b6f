"""Visual features: binary appearance codes, HSV color histograms, fusion.

Dense appearance features (ingested from files, never computed by a CNN
here) are binarized by thresholding at zero into packed 64-bit words so
that distance is an XOR-plus-popcount scan. Color is an HSV histogram over
the item ROI. Query/reference distance is a weighted combination of
normalized Hamming distance and L1 histogram distance.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .roi import Box

FEATURE_MAGIC = b"FPSF"
FEATURE_VERSION = 1

DEFAULT_FEATURE_DIM = 1024
DEFAULT_BINS = (8, 4, 4)

# numpy >= 2.0 lowers bitwise_count to the hardware popcount instruction.
HARDWARE_POPCOUNT = hasattr(np, "bitwise_count")

_M1 = np.uint64(0x5555555555555555)
_M2 = np.uint64(0x3333333333333333)
_M4 = np.uint64(0x0F0F0F0F0F0F0F0F)
_H01 = np.uint64(0x0101010101010101)


@dataclass(frozen=True)
class DenseFeature:
    """Dense appearance feature vector, 32-bit floats, fixed length."""

    values: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(
            self, "values", np.asarray(self.values, dtype=np.float32).reshape(-1)
        )

    def __len__(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class BinaryCode:
    """Packed bit vector: bit i lives in word i // 64 at bit position i % 64.

    Unused high bits of the last word are zero, so whole-word XOR/popcount
    never sees padding.
    """

    words: np.ndarray
    length: int

    def __post_init__(self) -> None:
        words = np.asarray(self.words, dtype=np.uint64)
        expected = (self.length + 63) // 64
        if words.shape != (expected,):
            raise ValueError(
                f"code of length {self.length} needs {expected} words, "
                f"got shape {words.shape}"
            )
        object.__setattr__(self, "words", words)

    def to_bits(self) -> np.ndarray:
        """Unpacked boolean view, length ``length``."""
        as_bytes = np.frombuffer(self.words.tobytes(), dtype=np.uint8)
        bits = np.unpackbits(as_bytes, bitorder="little")
        return bits[: self.length].astype(bool)


def pack_bits(bits: np.ndarray) -> BinaryCode:
    """Pack a boolean/0-1 vector into 64-bit words (LSB-first per word)."""
    bits = np.asarray(bits).astype(np.uint8).reshape(-1)
    length = bits.shape[0]
    n_words = (length + 63) // 64
    packed = np.packbits(bits, bitorder="little")
    buf = np.zeros(n_words * 8, dtype=np.uint8)
    buf[: packed.shape[0]] = packed
    words = np.frombuffer(buf.tobytes(), dtype="<u8").astype(np.uint64)
    return BinaryCode(words=words, length=length)


def binarize(feature: DenseFeature) -> BinaryCode:
    """Threshold at zero: bit is 1 iff the value is strictly positive."""
    values = feature.values
    if np.isnan(values).any():
        raise ValueError("feature contains NaN")
    return pack_bits(values > 0)


def _popcount_portable(words: np.ndarray) -> np.ndarray:
    """Branch-free per-word popcount; the mandatory fallback path."""
    x = words.astype(np.uint64, copy=True)
    x -= (x >> np.uint64(1)) & _M1
    x = (x & _M2) + ((x >> np.uint64(2)) & _M2)
    x = (x + (x >> np.uint64(4))) & _M4
    return (x * _H01) >> np.uint64(56)


def _popcount(words: np.ndarray) -> np.ndarray:
    if HARDWARE_POPCOUNT:
        return np.bitwise_count(words)
    return _popcount_portable(words)


def _check_same_length(a: BinaryCode, b: BinaryCode) -> None:
    if a.length != b.length:
        raise ValueError(f"code length mismatch: {a.length} vs {b.length}")


def hamming(a: BinaryCode, b: BinaryCode) -> int:
    """Exact number of differing bits (XOR + popcount)."""
    _check_same_length(a, b)
    return int(_popcount(a.words ^ b.words).sum())


def hamming_portable(a: BinaryCode, b: BinaryCode) -> int:
    """Same contract as :func:`hamming` on the portable popcount path."""
    _check_same_length(a, b)
    return int(_popcount_portable(a.words ^ b.words).sum())


def hamming_scan(query: BinaryCode, codes: np.ndarray) -> np.ndarray:
    """Distances from one query against a stacked (n, words) code matrix."""
    codes = np.asarray(codes, dtype=np.uint64)
    if codes.ndim != 2 or codes.shape[1] != query.words.shape[0]:
        raise ValueError("code matrix does not match query word count")
    return _popcount(codes ^ query.words[None, :]).sum(axis=1).astype(np.int64)


def stack_codes(codes: list[BinaryCode]) -> np.ndarray:
    if not codes:
        return np.zeros((0, 0), dtype=np.uint64)
    length = codes[0].length
    for c in codes:
        if c.length != length:
            raise ValueError("cannot stack codes of differing lengths")
    return np.stack([c.words for c in codes])


def _hsv_arrays(rgb: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Hexcone RGB -> (h degrees [0,360), s [0,1], v [0,1]) on uint8 input."""
    c = rgb.astype(np.float64) / 255.0
    r, g, b = c[..., 0], c[..., 1], c[..., 2]
    mx = np.max(c, axis=-1)
    mn = np.min(c, axis=-1)
    delta = mx - mn

    v = mx
    s = np.where(mx > 0, delta / np.where(mx > 0, mx, 1.0), 0.0)

    h = np.zeros_like(mx)
    safe = np.where(delta > 0, delta, 1.0)
    is_r = (mx == r) & (delta > 0)
    is_g = (mx == g) & (delta > 0) & ~is_r
    is_b = (delta > 0) & ~is_r & ~is_g
    h = np.where(is_r, np.mod((g - b) / safe, 6.0), h)
    h = np.where(is_g, (b - r) / safe + 2.0, h)
    h = np.where(is_b, (r - g) / safe + 4.0, h)
    return h * 60.0, s, v


def rgb_to_hsv(r: int, g: int, b: int) -> tuple[float, float, float]:
    """Standard hexcone conversion of one 8-bit pixel; grayscale maps to h=0, s=0."""
    px = np.array([[r, g, b]], dtype=np.uint8)
    h, s, v = _hsv_arrays(px)
    return float(h[0]), float(s[0]), float(v[0])


@dataclass(frozen=True)
class ColorHistogram:
    """HSV histogram; bin count is H_bins * S_bins * V_bins."""

    bins: np.ndarray
    normalized: bool = False

    def __post_init__(self) -> None:
        bins = np.asarray(self.bins, dtype=np.float64).reshape(-1)
        if (bins < 0).any():
            raise ValueError("histogram bins must be non-negative")
        if self.normalized and abs(float(bins.sum()) - 1.0) > 1e-9:
            raise ValueError("normalized histogram does not sum to 1")
        object.__setattr__(self, "bins", bins)

    def __len__(self) -> int:
        return self.bins.shape[0]


def color_histogram(
    image: np.ndarray,
    roi: Box,
    bins: tuple[int, int, int] = DEFAULT_BINS,
) -> ColorHistogram:
    """Normalized HSV histogram of the ROI pixels.

    Each axis is partitioned uniformly (h/360, s, v); the top edge of each
    axis falls into the last bin. The ROI must lie inside the image and
    cover at least one pixel.
    """
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValueError("image must be an (H, W, 3) RGB raster")
    height, width = image.shape[:2]
    x0, y0 = int(roi.x), int(roi.y)
    w, h = int(roi.w), int(roi.h)
    if w <= 0 or h <= 0:
        raise ValueError(f"degenerate ROI: {roi}")
    if x0 + w > width or y0 + h > height:
        raise ValueError(f"ROI {roi} exceeds image bounds {width}x{height}")

    hb, sb, vb = bins
    crop = np.asarray(image[y0 : y0 + h, x0 : x0 + w], dtype=np.uint8)
    hue, sat, val = _hsv_arrays(crop)
    hi = np.clip((hue / 360.0 * hb).astype(np.int64), 0, hb - 1)
    si = np.clip((sat * sb).astype(np.int64), 0, sb - 1)
    vi = np.clip((val * vb).astype(np.int64), 0, vb - 1)
    flat = (hi * sb + si) * vb + vi
    counts = np.bincount(flat.reshape(-1), minlength=hb * sb * vb).astype(np.float64)
    return ColorHistogram(bins=counts / crop.shape[0] / crop.shape[1], normalized=True)


@dataclass(frozen=True)
class DistanceWeights:
    """Appearance weight in [0,1]; color weight is its complement."""

    appearance_weight: float = 0.7

    def __post_init__(self) -> None:
        if not 0.0 <= self.appearance_weight <= 1.0:
            raise ValueError(
                f"appearance weight out of [0,1]: {self.appearance_weight}"
            )

    @property
    def color_weight(self) -> float:
        return 1.0 - self.appearance_weight


def combined_distance(
    q_code: BinaryCode,
    q_hist: ColorHistogram,
    r_code: BinaryCode,
    r_hist: ColorHistogram,
    weights: DistanceWeights = DistanceWeights(),
) -> float:
    """Weighted fusion in [0,1]: normalized Hamming plus L1/2 color distance."""
    _check_same_length(q_code, r_code)
    if len(q_hist) != len(r_hist):
        raise ValueError(f"histogram size mismatch: {len(q_hist)} vs {len(r_hist)}")
    if not (q_hist.normalized and r_hist.normalized):
        raise ValueError("combined distance requires normalized histograms")
    appearance = hamming(q_code, r_code) / q_code.length
    color = float(np.abs(q_hist.bins - r_hist.bins).sum()) / 2.0
    w = weights.appearance_weight
    return w * appearance + (1.0 - w) * color


# --- dense feature file format -------------------------------------------

def feature_to_bytes(feature: DenseFeature) -> bytes:
    header = struct.pack("<4sII", FEATURE_MAGIC, FEATURE_VERSION, len(feature))
    return header + feature.values.astype("<f4").tobytes()


def feature_from_bytes(data: bytes) -> DenseFeature:
    if len(data) < 12:
        raise ValueError("feature blob truncated: missing header")
    magic, version, dim = struct.unpack_from("<4sII", data, 0)
    if magic != FEATURE_MAGIC:
        raise ValueError(f"bad feature magic: {magic!r}")
    if version != FEATURE_VERSION:
        raise ValueError(f"unsupported feature format version: {version}")
    body = data[12:]
    if len(body) != 4 * dim:
        raise ValueError(
            f"feature blob truncated: expected {4 * dim} payload bytes, "
            f"got {len(body)}"
        )
    return DenseFeature(values=np.frombuffer(body, dtype="<f4").copy())


def write_feature(path: str | Path, feature: DenseFeature) -> None:
    Path(path).write_bytes(feature_to_bytes(feature))


def read_feature(path: str | Path) -> DenseFeature:
    return feature_from_bytes(Path(path).read_bytes())


# --- P6 portable pixmap ----------------------------------------------------

def _read_ppm_token(data: bytes, pos: int) -> tuple[bytes, int]:
    while pos < len(data):
        ch = data[pos : pos + 1]
        if ch == b"#":
            while pos < len(data) and data[pos : pos + 1] != b"\n":
                pos += 1
        elif ch.isspace():
            pos += 1
        else:
            break
    start = pos
    while pos < len(data) and not data[pos : pos + 1].isspace():
        pos += 1
    if start == pos:
        raise ValueError("truncated pixmap header")
    return data[start:pos], pos


def decode_ppm(data: bytes) -> np.ndarray:
    """Decode a binary P6 pixmap (8-bit, maxval 255) into (H, W, 3) uint8."""
    magic, pos = _read_ppm_token(data, 0)
    if magic != b"P6":
        raise ValueError(f"unsupported pixmap magic: {magic!r} (P6 required)")
    width_tok, pos = _read_ppm_token(data, pos)
    height_tok, pos = _read_ppm_token(data, pos)
    maxval_tok, pos = _read_ppm_token(data, pos)
    width, height, maxval = int(width_tok), int(height_tok), int(maxval_tok)
    if maxval != 255:
        raise ValueError(f"unsupported pixmap maxval: {maxval} (255 required)")
    if width <= 0 or height <= 0:
        raise ValueError(f"bad pixmap dimensions: {width}x{height}")
    pos += 1  # single whitespace byte after maxval
    body = data[pos : pos + width * height * 3]
    if len(body) != width * height * 3:
        raise ValueError("pixmap pixel data truncated")
    return np.frombuffer(body, dtype=np.uint8).reshape(height, width, 3).copy()


def encode_ppm(image: np.ndarray) -> bytes:
    image = np.asarray(image, dtype=np.uint8)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValueError("image must be (H, W, 3) uint8")
    height, width = image.shape[:2]
    return b"P6\n%d %d\n255\n" % (width, height) + image.tobytes()


def read_ppm(path: str | Path) -> np.ndarray:
    return decode_ppm(Path(path).read_bytes())


def write_ppm(path: str | Path, image: np.ndarray) -> None:
    Path(path).write_bytes(encode_ppm(image))
