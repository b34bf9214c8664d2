"""STFT analysis/synthesis and linear-phase-drift compensation.

Only the one-sided spectrum (bins ``0..F/2``) is kept.  Phase drift for bin
``f`` in frame ``t`` is ``omega[t, f] * eps`` with
``omega[t, f] = 2 * pi * a * t * f / F``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.signal import get_window

from .errors import ConfigurationError, InvalidInputError

__all__ = [
    "TimeSignal",
    "StftConfig",
    "SpectrogramSet",
    "stft",
    "istft",
    "compensate_lpd",
    "lpd_phase",
    "frame_omega",
]


@dataclass
class TimeSignal:
    """Single-channel waveform sampled at a nominal rate (Hz)."""

    samples: np.ndarray
    nominal_rate: float

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise InvalidInputError(
                f"samples must be 1-D, got shape {self.samples.shape}")
        if not np.all(np.isfinite(self.samples)):
            raise InvalidInputError("samples contain NaN or Inf")
        if not self.nominal_rate > 0:
            raise InvalidInputError(
                f"nominal_rate must be positive, got {self.nominal_rate}")

    def __len__(self):
        return len(self.samples)

    @property
    def duration(self):
        return len(self.samples) / self.nominal_rate


def _hann(length):
    # periodic (DFT-even) Hann: g[l] == g[L - l], COLA at 50 % overlap
    return get_window("hann", length, fftbins=True)


@dataclass(frozen=True)
class StftConfig:
    """Frame geometry: window length ``L``, shift ``a``, DFT size ``F``.

    ``window`` may be ``"hann"``, ``"rect"`` or an explicit array of length
    ``window_length``.
    """

    window_length: int = 2048
    shift: int = 1024
    dft_size: int = 4096
    window: object = field(default="hann", compare=False)

    def __post_init__(self):
        L, a, F = self.window_length, self.shift, self.dft_size
        if not 0 < a <= L <= F:
            raise ConfigurationError(
                f"need 0 < shift <= window_length <= dft_size, got "
                f"shift={a}, window_length={L}, dft_size={F}")
        if F % 2:
            raise ConfigurationError(f"dft_size must be even, got {F}")
        g = self.window_array
        if g.shape != (L,):
            raise ConfigurationError(
                f"window has shape {g.shape}, expected ({L},)")
        if np.any(g < 0) or np.any(g > 1):
            raise ConfigurationError("window values must lie in [0, 1]")
        # symmetric either about (L-1)/2 or, DFT-even, about L/2
        if not (np.allclose(g, g[::-1]) or np.allclose(g[1:], g[1:][::-1])):
            raise ConfigurationError("window must be symmetric")

    @property
    def window_array(self):
        if isinstance(self.window, str):
            if self.window == "hann":
                return _hann(self.window_length)
            if self.window in ("rect", "rectangular", "boxcar"):
                return np.ones(self.window_length)
            raise ConfigurationError(f"unknown window {self.window!r}")
        return np.asarray(self.window, dtype=np.float64)

    @property
    def num_bins(self):
        return self.dft_size // 2 + 1

    def num_frames(self, num_samples):
        if num_samples < self.window_length:
            return 0
        return (num_samples - self.window_length) // self.shift + 1

    def to_dict(self):
        window = self.window if isinstance(self.window, str) else "custom"
        return {"window_length": self.window_length, "shift": self.shift,
                "dft_size": self.dft_size, "window": window}


def frame_omega(num_frames, config):
    """Phase slope ``2*pi*a*t*f/F`` per unit SRO, shape ``(T, F/2+1)``."""
    t = np.arange(num_frames, dtype=np.float64)[:, None]
    f = np.arange(config.num_bins, dtype=np.float64)[None, :]
    return 2.0 * np.pi * config.shift * t * f / config.dft_size


def lpd_phase(num_frames, config, epsilon):
    """Phase factors ``exp(2j*pi*a*t*f*eps/F)``, shape ``(T, F/2+1)``.

    Built as cumulative powers of the per-frame rotation, which is much
    cheaper than evaluating ``exp`` on the whole grid.
    """
    f = np.arange(config.num_bins, dtype=np.float64)
    step = np.exp(2j * np.pi * config.shift * f * epsilon / config.dft_size)
    phase = np.empty((num_frames, config.num_bins), dtype=np.complex128)
    if num_frames == 0:
        return phase
    phase[0] = 1.0
    if num_frames > 1:
        phase[1:] = step
        np.cumprod(phase, axis=0, out=phase)
    return phase


def stft(signal, config=None):
    """One-sided STFT of a single channel.

    Args:
        signal: ``TimeSignal`` or 1-D array of samples.
        config: ``StftConfig``; defaults to Hann 2048 / shift 1024 / DFT 4096.

    Returns:
        Complex array of shape ``(T, F/2 + 1)`` with
        ``T = floor((len - L) / a) + 1``.  The tail that does not fill a
        whole frame is dropped.
    """
    config = config or StftConfig()
    x = signal.samples if isinstance(signal, TimeSignal) else np.asarray(
        signal, dtype=np.float64)
    if x.ndim != 1:
        raise InvalidInputError(f"expected a 1-D signal, got shape {x.shape}")
    L = config.window_length
    if len(x) < L:
        raise InvalidInputError(
            f"signal has {len(x)} samples, shorter than one window ({L})")
    frames = np.lib.stride_tricks.sliding_window_view(x, L)[::config.shift]
    return np.fft.rfft(frames * config.window_array, n=config.dft_size, axis=-1)


def _check_nola(config):
    g2 = config.window_array ** 2
    a = config.shift
    # steady-state overlap-add of g^2 over one hop
    acc = np.zeros(a)
    for start in range(0, config.window_length, a):
        seg = g2[start:start + a]
        acc[:len(seg)] += seg
    if acc.min() <= 1e-10 * acc.max():
        raise ConfigurationError(
            f"window/shift pair (L={config.window_length}, a={a}) does not "
            f"overlap-add to a nonzero envelope; cannot invert the STFT")


def istft(coeffs, config=None, length=None):
    """Weighted overlap-add inverse of :func:`stft`.

    Args:
        coeffs: complex array ``(T, F/2 + 1)``.
        config: the ``StftConfig`` used for analysis.
        length: optional output length; samples not covered by any frame
            are zero.

    Returns:
        1-D float array.  Samples covered by at least one frame are
        reconstructed exactly (up to rounding).
    """
    config = config or StftConfig()
    coeffs = np.asarray(coeffs)
    if coeffs.ndim != 2 or coeffs.shape[1] != config.num_bins:
        raise InvalidInputError(
            f"expected coefficients of shape (T, {config.num_bins}), "
            f"got {coeffs.shape}")
    _check_nola(config)
    L, a = config.window_length, config.shift
    g = config.window_array
    T = coeffs.shape[0]
    frames = np.fft.irfft(coeffs, n=config.dft_size, axis=-1)[:, :L] * g
    n_out = (T - 1) * a + L if T else 0
    out = np.zeros(n_out)
    norm = np.zeros(n_out)
    for t in range(T):
        out[t * a:t * a + L] += frames[t]
        norm[t * a:t * a + L] += g * g
    covered = norm > 1e-20 * (norm.max() if n_out else 1.0)
    out[covered] /= norm[covered]
    out[~covered] = 0.0
    if length is not None:
        if length <= n_out:
            out = out[:length]
        else:
            out = np.concatenate([out, np.zeros(length - n_out)])
    return out


def compensate_lpd(coeffs, epsilon, config=None):
    """Rotate STFT phases to undo a sampling-rate offset.

    ``out[..., t, f] = coeffs[..., t, f] * exp(2j*pi*a*t*f*eps/F)``.

    Args:
        coeffs: complex array ``(T, F/2+1)`` or ``(M, T, F/2+1)``.
        epsilon: scalar SRO, or one value per channel for 3-D input.
        config: ``StftConfig`` giving ``a`` and ``F``.
    """
    config = config or StftConfig()
    coeffs = np.asarray(coeffs)
    eps = np.atleast_1d(np.asarray(epsilon, dtype=np.float64))
    if not np.all(np.isfinite(eps)) or np.any(np.abs(eps) >= 0.01):
        raise InvalidInputError(f"SRO must be finite with |eps| < 0.01, got {epsilon}")
    T = coeffs.shape[-2]
    if coeffs.ndim == 2:
        if eps.size != 1:
            raise InvalidInputError("one epsilon expected for a single channel")
        return coeffs * lpd_phase(T, config, eps[0])
    if eps.size == 1:
        eps = np.repeat(eps, coeffs.shape[0])
    if eps.size != coeffs.shape[0]:
        raise InvalidInputError(
            f"{eps.size} SROs given for {coeffs.shape[0]} channels")
    out = np.empty(coeffs.shape, dtype=np.complex128)
    for m, e in enumerate(eps):
        out[m] = coeffs[m] if e == 0.0 else coeffs[m] * lpd_phase(T, config, e)
    return out


@dataclass
class SpectrogramSet:
    """Multichannel STFT coefficients ``coeffs[m, t, f]`` and their geometry."""

    coeffs: np.ndarray
    config: StftConfig = field(default_factory=StftConfig)

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=np.complex128)
        if self.coeffs.ndim != 3:
            raise InvalidInputError(
                f"coeffs must have shape (M, T, F/2+1), got {self.coeffs.shape}")
        if self.coeffs.shape[2] != self.config.num_bins:
            raise InvalidInputError(
                f"expected {self.config.num_bins} bins, got {self.coeffs.shape[2]}")
        if not np.all(np.isfinite(self.coeffs)):
            raise InvalidInputError("STFT coefficients contain NaN or Inf")

    @classmethod
    def from_signals(cls, signals, config=None):
        """STFT of every channel, truncated to the shortest one."""
        config = config or StftConfig()
        arrays = [s.samples if isinstance(s, TimeSignal) else np.asarray(s, float)
                  for s in signals]
        n = min(len(x) for x in arrays)
        return cls(np.stack([stft(x[:n], config) for x in arrays]), config)

    @property
    def num_channels(self):
        return self.coeffs.shape[0]

    @property
    def num_frames(self):
        return self.coeffs.shape[1]

    @property
    def num_bins(self):
        return self.coeffs.shape[2]

    @property
    def omega(self):
        return frame_omega(self.num_frames, self.config)

    def select(self, channels):
        """Sub-set of channels, in the given order."""
        return SpectrogramSet(self.coeffs[list(channels)], self.config)

    def compensated(self, epsilons):
        return compensate_lpd(self.coeffs, epsilons, self.config)
