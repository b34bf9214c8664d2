"""WAV reading/writing: 16-bit PCM and 32-bit float, mono or multichannel."""
from __future__ import annotations

import warnings

import numpy as np
from scipy.io import wavfile

from .errors import InvalidInputError
from .spectral import TimeSignal

__all__ = ["read_wav", "write_wav"]


def read_wav(path):
    """Read a WAV file and return one ``TimeSignal`` per channel."""
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", wavfile.WavFileWarning)
            rate, data = wavfile.read(path)
    except (OSError, ValueError) as exc:
        raise InvalidInputError(f"cannot read {path}: {exc}") from None
    if data.dtype == np.int16:
        data = data.astype(np.float64) / 32768.0
    elif data.dtype == np.float32:
        data = data.astype(np.float64)
    else:
        raise InvalidInputError(
            f"{path}: unsupported sample format {data.dtype} "
            f"(expected 16-bit PCM or 32-bit float)")
    if data.ndim == 1:
        data = data[:, None]
    return [TimeSignal(data[:, k], float(rate)) for k in range(data.shape[1])]


def write_wav(path, signal, rate=None):
    """Write a mono 32-bit float WAV."""
    if isinstance(signal, TimeSignal):
        samples, rate = signal.samples, signal.nominal_rate if rate is None else rate
    else:
        samples = np.asarray(signal)
    if rate is None:
        raise InvalidInputError("sample rate required")
    if rate != int(rate):
        raise InvalidInputError(f"WAV needs an integer sample rate, got {rate}")
    try:
        wavfile.write(path, int(rate), samples.astype(np.float32))
    except OSError as exc:
        raise InvalidInputError(f"cannot write {path}: {exc}") from None
