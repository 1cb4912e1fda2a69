"""Coded-aperture snapshot forward models.

Two acquisition geometries share one algebra:

* ``cassi``: a single base mask modulates the spectral cube, then a
  disperser shears each channel one step further along the width axis
  before the detector sums channels. The detector frame is therefore
  W + step*(C-1) wide and the per-channel effective masks are exact
  translations of the base mask.
* ``cacti``: one independent mask per frame, no shear (step 0).

Vectorized, the measurement is y = Phi f + g where Phi is a horizontal
concatenation of diagonal blocks, one per channel, built from the
per-channel masks laid out in the detector frame. Phi Phi^T is diagonal,
which the GAP solver exploits; :class:`SensingOp` keeps only the
diagonals and never materializes Phi.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .autograd import Tensor
from .exceptions import ContractError, DimensionError

log = logging.getLogger(__name__)

R_FLOOR = 1e-8  # below this, a detector pixel is treated as unconstrained


def modulate(cube: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Apply a coded aperture to a spectral/temporal cube.

    Args:
        cube: (H, W, C) data cube.
        mask: (H, W) base mask broadcast over channels, or (H, W, C)
            per-channel masks.

    Returns:
        (H, W, C) modulated cube.
    """
    if cube.ndim != 3:
        raise DimensionError(f"cube must be 3-D (H, W, C), got shape {cube.shape}")
    if mask.ndim == 2:
        if mask.shape != cube.shape[:2]:
            raise DimensionError(
                f"mask shape {mask.shape} does not match cube plane {cube.shape[:2]}")
        return cube * mask[:, :, None]
    if mask.shape != cube.shape:
        raise DimensionError(
            f"per-channel mask shape {mask.shape} does not match cube {cube.shape}")
    return cube * mask


def disperse(cube: np.ndarray, step: int = 1) -> np.ndarray:
    """Shear a cube along the width axis, channel c offset by c*step.

    Args:
        cube: (H, W, C) cube.
        step: per-channel shift in pixels; 0 returns a copy.

    Returns:
        (H, W + step*(C-1), C) sheared cube, zero outside each
        channel's support window.
    """
    if cube.ndim != 3:
        raise DimensionError(f"cube must be 3-D (H, W, C), got shape {cube.shape}")
    if step < 0:
        raise ContractError(f"dispersion step must be >= 0, got {step}")
    h, w, c = cube.shape
    out = np.zeros((h, w + step * (c - 1), c), dtype=cube.dtype)
    for ch in range(c):
        out[:, ch * step:ch * step + w, ch] = cube[:, :, ch]
    return out


def undisperse(sheared: np.ndarray, step: int, width: int) -> np.ndarray:
    """Extract each channel's support window, inverting :func:`disperse`.

    Args:
        sheared: (H, W + step*(C-1), C) cube in the detector frame.
        step: per-channel shift used when shearing.
        width: original cube width W.

    Returns:
        (H, width, C) cube.
    """
    h, w_ext, c = sheared.shape
    if w_ext != width + step * (c - 1):
        raise DimensionError(
            f"sheared width {w_ext} inconsistent with width {width}, "
            f"step {step}, channels {c}")
    out = np.empty((h, width, c), dtype=sheared.dtype)
    for ch in range(c):
        out[:, :, ch] = sheared[:, ch * step:ch * step + width, ch]
    return out


def expand_mask(base: np.ndarray, channels: int, step: int) -> np.ndarray:
    """Translate a base mask into per-channel detector-frame masks.

    Args:
        base: (H, W) coded aperture.
        channels: number of spectral channels.
        step: dispersion step.

    Returns:
        (H, W + step*(channels-1), channels) masks; channel c is the
        base mask shifted by c*step, zero elsewhere.
    """
    if base.ndim != 2:
        raise DimensionError(f"base mask must be 2-D, got shape {base.shape}")
    stack = np.repeat(base[:, :, None], channels, axis=2)
    return disperse(stack, step)


@dataclass(frozen=True)
class MaskSet:
    """Per-channel masks in the detector frame plus geometry.

    Attributes:
        kind: "cassi" (sheared translations of one base mask) or
            "cacti" (independent per-frame masks, no shear).
        per_channel: (H, W_ext, C) detector-frame masks.
        shift_step: dispersion step; >= 1 for cassi, 0 for cacti.
        width: original cube width W (W_ext = W + shift_step*(C-1)).
        base: the (H, W) aperture for cassi, None for cacti.
    """

    kind: str
    per_channel: np.ndarray
    shift_step: int
    width: int
    base: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in ("cassi", "cacti"):
            raise ContractError(f"unknown mask kind {self.kind!r}")
        if self.kind == "cassi" and self.shift_step < 1:
            raise ContractError("cassi requires shift_step >= 1")
        if self.kind == "cacti" and self.shift_step != 0:
            raise ContractError("cacti requires shift_step == 0")
        h, w_ext, c = self.per_channel.shape
        if w_ext != self.width + self.shift_step * (c - 1):
            raise DimensionError(
                f"per-channel width {w_ext} inconsistent with width {self.width}")

    @property
    def height(self) -> int:
        return self.per_channel.shape[0]

    @property
    def channels(self) -> int:
        return self.per_channel.shape[2]

    @property
    def width_ext(self) -> int:
        return self.per_channel.shape[1]

    @staticmethod
    def cassi(base: np.ndarray, channels: int, shift_step: int = 1) -> "MaskSet":
        per = expand_mask(base, channels, shift_step)
        return MaskSet("cassi", per, shift_step, base.shape[1], base=base)

    @staticmethod
    def cacti(stack: np.ndarray) -> "MaskSet":
        if stack.ndim != 3:
            raise DimensionError(f"cacti masks must be 3-D (H, W, C), got {stack.shape}")
        return MaskSet("cacti", stack, 0, stack.shape[1])


@dataclass(frozen=True)
class Measurement:
    """A detector snapshot and the noise level used to produce it."""

    data: np.ndarray
    noise_std: float = 0.0


def generate_mask(rng: np.random.Generator, shape: tuple[int, ...],
                  kind: str = "binary", p: float = 0.5,
                  gray_range: tuple[float, float] = (0.0, 1.0)) -> np.ndarray:
    """Draw a random coded aperture.

    Args:
        rng: seeded generator; masks are a pure function of it.
        shape: (H, W) for a cassi base mask, (H, W, C) for cacti.
        kind: "binary" for Bernoulli(p) in {0,1}, "gray" for uniform
            values in gray_range.
        p: Bernoulli probability of a 1 (binary only).
        gray_range: (low, high) for gray masks.

    Returns:
        float64 mask array of the requested shape.
    """
    if kind == "binary":
        if not 0.0 <= p <= 1.0:
            raise ContractError(f"binary mask probability must be in [0, 1], got {p}")
        return (rng.random(shape) < p).astype(np.float64)
    if kind == "gray":
        low, high = gray_range
        if not low < high:
            raise ContractError(f"gray range must satisfy low < high, got {gray_range}")
        return rng.uniform(low, high, size=shape)
    raise ContractError(f"unknown mask kind {kind!r}")


def sample_noise_std(rng: np.random.Generator, low: float = 0.0,
                     high: float = 0.05) -> float:
    """Draw a measurement-noise standard deviation, uniform on [low, high)."""
    if not 0.0 <= low <= high:
        raise ContractError(f"need 0 <= low <= high, got ({low}, {high})")
    return float(rng.uniform(low, high))


def measure(cube: np.ndarray, masks: MaskSet, noise_std: float = 0.0,
            rng: np.random.Generator | None = None) -> Measurement:
    """Simulate one snapshot: modulate, shear (cassi), sum channels, add noise.

    Args:
        cube: (H, W, C) scene in the native frame.
        masks: acquisition masks and geometry.
        noise_std: standard deviation of i.i.d. Gaussian detector noise;
            noise is added to the measurement only, never to the cube.
        rng: required when noise_std > 0.

    Returns:
        Measurement with data of shape (H, W_ext).
    """
    if cube.ndim != 3:
        raise DimensionError(f"cube must be 3-D (H, W, C), got shape {cube.shape}")
    h, w, c = cube.shape
    if (h, w, c) != (masks.height, masks.width, masks.channels):
        raise DimensionError(
            f"cube shape {cube.shape} does not match mask geometry "
            f"({masks.height}, {masks.width}, {masks.channels})")
    if noise_std < 0:
        raise ContractError(f"noise_std must be >= 0, got {noise_std}")
    if masks.kind == "cassi":
        modded = modulate(cube, masks.base)
        y = disperse(modded, masks.shift_step).sum(axis=2)
    else:
        y = modulate(cube, masks.per_channel).sum(axis=2)
    if noise_std > 0:
        if rng is None:
            raise ContractError("noise_std > 0 requires an rng")
        y = y + noise_std * rng.standard_normal(y.shape)
    return Measurement(np.ascontiguousarray(y), float(noise_std))


def init_input(measurement: np.ndarray, masks: MaskSet) -> np.ndarray:
    """Back-project a snapshot into a per-channel initialization cube.

    Channel c of the result is the detector image gated by channel c's
    effective mask, pulled back to the native frame.

    Args:
        measurement: (H, W_ext) detector image.
        masks: acquisition masks and geometry.

    Returns:
        (H, W, C) initialization cube.
    """
    if measurement.shape != (masks.height, masks.width_ext):
        raise DimensionError(
            f"measurement shape {measurement.shape} does not match detector "
            f"frame ({masks.height}, {masks.width_ext})")
    gated = masks.per_channel * measurement[:, :, None]
    return undisperse(gated, masks.shift_step, masks.width)


class SensingOp:
    """Structured Phi: per-channel diagonals plus geometry bridging.

    Never materializes the dense matrix. ``apply``/``adjoint`` act on
    channel-major vectors f of length C*n (n = H*W_ext detector pixels,
    channel c occupying f[c*n:(c+1)*n] in row-major detector order).
    Tensor variants participate in autograd.

    Attributes:
        r: diagonal of Phi Phi^T, shape (n,).
        uncovered: count of detector pixels with r <= R_FLOOR; their
            GAP correction is zeroed (unconstrained pixels).
    """

    def __init__(self, masks: MaskSet):
        self.masks = masks
        h, w_ext, c = masks.per_channel.shape
        self.n = h * w_ext
        self.channels = c
        # (C, n) diagonals in float64; binary/gray masks are exact.
        self.diag = np.ascontiguousarray(
            masks.per_channel.transpose(2, 0, 1).reshape(c, self.n).astype(np.float64))
        self.r = (self.diag * self.diag).sum(axis=0)
        covered = self.r > R_FLOOR
        self.uncovered = int((~covered).sum())
        if self.uncovered:
            log.warning("sensing operator has %d unconstrained detector pixels "
                        "(no mask coverage); their GAP correction is zeroed",
                        self.uncovered)
        self.inv_r = np.where(covered, 1.0 / np.where(covered, self.r, 1.0), 0.0)
        self._diag_t: dict[str, Tensor] = {}
        self._inv_r_t: dict[str, Tensor] = {}

    # -- vector <-> cube bridging ------------------------------------------

    @property
    def vec_length(self) -> int:
        return self.n * self.channels

    def vectorize(self, cube: np.ndarray) -> np.ndarray:
        """Native-frame (H, W, C) cube to channel-major detector vector."""
        sheared = disperse(cube, self.masks.shift_step) \
            if self.masks.kind == "cassi" else cube
        return np.ascontiguousarray(sheared.transpose(2, 0, 1)).reshape(-1)

    def unvectorize(self, f: np.ndarray) -> np.ndarray:
        """Channel-major detector vector back to a native-frame cube."""
        self._check_vec(f)
        sheared = f.reshape(self.channels, self.masks.height,
                            self.masks.width_ext).transpose(1, 2, 0)
        return undisperse(sheared, self.masks.shift_step, self.masks.width)

    def _check_vec(self, f: np.ndarray) -> None:
        if f.shape != (self.vec_length,):
            raise DimensionError(
                f"vector length {f.shape} does not match operator ({self.vec_length},)")

    # -- numpy path -----------------------------------------------------------

    def apply(self, f: np.ndarray) -> np.ndarray:
        """y = Phi f, shape (n,)."""
        self._check_vec(f)
        return (self.diag * f.reshape(self.channels, self.n)).sum(axis=0)

    def adjoint(self, y: np.ndarray) -> np.ndarray:
        """f = Phi^T y, shape (C*n,)."""
        if y.shape != (self.n,):
            raise DimensionError(
                f"measurement vector shape {y.shape} does not match ({self.n},)")
        return (self.diag * y[None, :]).reshape(-1)

    # -- tensor path ------------------------------------------------------------

    def _consts(self, dtype) -> tuple[Tensor, Tensor]:
        key = np.dtype(dtype).name
        if key not in self._diag_t:
            self._diag_t[key] = Tensor(self.diag.astype(dtype))
            self._inv_r_t[key] = Tensor(self.inv_r.astype(dtype))
        return self._diag_t[key], self._inv_r_t[key]

    def apply_t(self, f: Tensor) -> Tensor:
        diag, _ = self._consts(f.dtype)
        return (diag * f.reshape(self.channels, self.n)).sum(axis=0)

    def adjoint_t(self, y: Tensor) -> Tensor:
        diag, _ = self._consts(y.dtype)
        return (diag * y.reshape(1, self.n)).reshape(self.vec_length)

    def to_net_input(self, f: Tensor) -> Tensor:
        """Detector vector to a (1, C, H, W) native-frame network tensor."""
        sheared = f.reshape(self.channels, self.masks.height, self.masks.width_ext)
        gathered = _gather_windows(sheared, self.masks.shift_step, self.masks.width)
        return gathered.reshape(1, self.channels, self.masks.height, self.masks.width)

    def from_net_output(self, x: Tensor) -> Tensor:
        """(1, C, H, W) network tensor back to a detector vector."""
        cube = x.reshape(self.channels, self.masks.height, self.masks.width)
        spread = _scatter_windows(cube, self.masks.shift_step, self.masks.width_ext)
        return spread.reshape(self.vec_length)


def _gather_windows(x: Tensor, step: int, width: int) -> Tensor:
    """Extract each channel's support window from a (C, H, W_ext) tensor."""
    c, h, w_ext = x.data.shape
    if step == 0:
        if w_ext != width:
            raise DimensionError(f"width {w_ext} != {width} with step 0")
        return x
    data = np.empty((c, h, width), dtype=x.data.dtype)
    for ch in range(c):
        data[ch] = x.data[ch, :, ch * step:ch * step + width]

    def backward():
        g = np.zeros_like(x.data)
        for ch in range(c):
            g[ch, :, ch * step:ch * step + width] = out.grad[ch]
        x._accumulate(g)

    out = Tensor._result(data, (x,), backward)
    return out


def _scatter_windows(x: Tensor, step: int, width_ext: int) -> Tensor:
    """Place each channel of a (C, H, W) tensor at its shifted offset."""
    c, h, w = x.data.shape
    if step == 0:
        if width_ext != w:
            raise DimensionError(f"width {w} != {width_ext} with step 0")
        return x
    data = np.zeros((c, h, width_ext), dtype=x.data.dtype)
    for ch in range(c):
        data[ch, :, ch * step:ch * step + w] = x.data[ch]

    def backward():
        g = np.empty_like(x.data)
        for ch in range(c):
            g[ch] = out.grad[ch, :, ch * step:ch * step + w]
        x._accumulate(g)

    out = Tensor._result(data, (x,), backward)
    return out


def build_sensing_op(masks: MaskSet) -> SensingOp:
    """Construct the structured sensing operator for a mask set."""
    return SensingOp(masks)
