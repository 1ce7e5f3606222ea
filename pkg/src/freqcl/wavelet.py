"""Single-level orthonormal Haar decomposition and the two network inputs.

The low-frequency input is the approximation band; the high-frequency
input is built from a selection of bands, either passed through directly
(single band) or merged by a learnable 1x1 convolution.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .nn import Conv2d, Module
from .tensor import Tensor, as_tensor

SQRT_HALF = 1.0 / np.sqrt(2.0)


@dataclass(frozen=True)
class HaarFilters:
    low: tuple = (SQRT_HALF, SQRT_HALF)
    high: tuple = (SQRT_HALF, -SQRT_HALF)

    def analysis_matrices(self, n):
        """Return the ``(n//2, n)`` low- and high-pass analysis matrices."""
        if n % 2:
            raise ShapeError(f"Haar analysis needs an even length, got {n}")
        lo = np.zeros((n // 2, n))
        hi = np.zeros((n // 2, n))
        for r in range(n // 2):
            lo[r, 2 * r:2 * r + 2] = self.low
            hi[r, 2 * r:2 * r + 2] = self.high
        return lo, hi


HAAR = HaarFilters()


class Selection(str, enum.Enum):
    LL_ONLY = "ll_only"
    LH_ONLY = "lh_only"
    HL_ONLY = "hl_only"
    HH_ONLY = "hh_only"
    FUSE_ALL = "fuse_all"
    FUSE_NO_LL_HH = "fuse_no_ll_hh"
    FUSE_NO_LL = "fuse_no_ll"

    @property
    def bands(self):
        return _SELECTION_BANDS[self]

    @property
    def fused(self):
        return self.name.startswith("FUSE")


_SELECTION_BANDS = {
    Selection.LL_ONLY: ("ll",),
    Selection.LH_ONLY: ("lh",),
    Selection.HL_ONLY: ("hl",),
    Selection.HH_ONLY: ("hh",),
    Selection.FUSE_ALL: ("ll", "lh", "hl", "hh"),
    Selection.FUSE_NO_LL_HH: ("lh", "hl"),
    Selection.FUSE_NO_LL: ("lh", "hl", "hh"),
}


@dataclass(frozen=True)
class WaveletQuad:
    """The four half-resolution bands; leading (batch, channel) axes are kept."""

    ll: np.ndarray
    lh: np.ndarray
    hl: np.ndarray
    hh: np.ndarray

    def band(self, name):
        return getattr(self, name)

    def energy(self):
        return float(sum(np.sum(np.square(b, dtype=np.float64)) for b in (self.ll, self.lh, self.hl, self.hh)))


@dataclass
class FrequencyPair:
    low: Tensor
    high: Tensor


def dwt2d(image):
    """Haar decomposition over the last two axes of ``image``.

    Works on ``(C, H, W)`` images and ``(N, C, H, W)`` batches alike.
    """
    x = np.asarray(image.data if isinstance(image, Tensor) else image)
    if x.ndim < 2:
        raise ShapeError("dwt2d needs at least two axes")
    h, w = x.shape[-2:]
    if h % 2 or w % 2:
        raise ShapeError(f"dwt2d needs even height and width, got {h}x{w}")
    if not np.issubdtype(x.dtype, np.floating):
        x = x.astype(np.float64)
    a = x[..., 0::2, 0::2]
    b = x[..., 0::2, 1::2]
    c = x[..., 1::2, 0::2]
    d = x[..., 1::2, 1::2]
    half = x.dtype.type(0.5)
    ll = (a + b + c + d) * half
    lh = (a - b + c - d) * half
    hl = (a + b - c - d) * half
    hh = (a - b - c + d) * half
    return WaveletQuad(ll, lh, hl, hh)


def idwt2d(quad):
    ll, lh, hl, hh = (np.asarray(b) for b in (quad.ll, quad.lh, quad.hl, quad.hh))
    if not (ll.shape == lh.shape == hl.shape == hh.shape):
        raise ShapeError("idwt2d: band shapes differ")
    half = ll.dtype.type(0.5)
    out = np.empty(ll.shape[:-2] + (2 * ll.shape[-2], 2 * ll.shape[-1]), dtype=ll.dtype)
    out[..., 0::2, 0::2] = (ll + lh + hl + hh) * half
    out[..., 0::2, 1::2] = (ll - lh + hl - hh) * half
    out[..., 1::2, 0::2] = (ll + lh - hl - hh) * half
    out[..., 1::2, 1::2] = (ll - lh - hl + hh) * half
    return out


def low_pass(quad):
    return quad.ll


class PointwiseFuser(Module):
    """Learnable 1x1 convolution merging the selected bands.

    Single-band selections carry no parameters and pass the band through.
    """

    def __init__(self, channels=3, selection=Selection.FUSE_NO_LL, rng=None):
        self.selection = Selection(selection)
        self.channels = channels
        self.frozen = False
        if self.selection.fused:
            in_ch = channels * len(self.selection.bands)
            self.conv = Conv2d(in_ch, channels, 1, bias=True, rng=rng)
        else:
            self.conv = None

    @property
    def in_channels(self):
        return self.channels * len(self.selection.bands)

    def forward(self, x):
        if self.conv is None:
            return as_tensor(x)
        return self.conv(x)

    def trace(self, shape, tr):
        if self.conv is None:
            return shape
        return self.conv.trace(shape, tr)


def high_pass(quad, fuser, selection=None):
    """Build the high-frequency network input from ``quad``.

    Bands are concatenated channelwise in ll, lh, hl, hh order before the
    1x1 fusion.
    """
    selection = fuser.selection if selection is None else Selection(selection)
    if selection != fuser.selection:
        raise ShapeError(f"selection {selection.value} does not match fuser built for {fuser.selection.value}")
    bands = [np.asarray(quad.band(name)) for name in selection.bands]
    single = bands[0].ndim == 3
    if single:
        bands = [b[None] for b in bands]
    stacked = np.concatenate(bands, axis=1)
    if stacked.shape[1] != fuser.in_channels:
        raise ShapeError(f"fuser expects {fuser.in_channels} channels, selection yields {stacked.shape[1]}")
    out = fuser(Tensor(stacked))
    if single:
        out = Tensor(out.data[0]) if not out.requires_grad else _squeeze_batch(out)
    return out


def _squeeze_batch(t):
    def backward(g):
        return (g[None],)

    return Tensor._from_op(t.data[0], (t,), backward, "squeeze")


def freeze_fuser(fuser):
    """Stop the fuser from learning; its forward pass is unchanged."""
    for p in fuser.parameters():
        p.requires_grad = False
        p.grad = None
    fuser.frozen = True
    return fuser


def frequency_pair(images, fuser):
    """Decompose an NCHW batch into the (low, high) network inputs."""
    quad = dwt2d(images)
    return FrequencyPair(Tensor(quad.ll), high_pass(quad, fuser))


__all__ = [
    "HAAR",
    "FrequencyPair",
    "HaarFilters",
    "PointwiseFuser",
    "Selection",
    "WaveletQuad",
    "dwt2d",
    "freeze_fuser",
    "frequency_pair",
    "high_pass",
    "idwt2d",
    "low_pass",
]
