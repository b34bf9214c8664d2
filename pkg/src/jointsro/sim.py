"""Synthetic multichannel recordings with known sampling-rate offsets."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from functools import lru_cache

import jsonschema
import numpy as np
from scipy.signal import fftconvolve

from .errors import InvalidInputError
from .likelihood import PPM, SroVector, _epsilons
from .spectral import TimeSignal

__all__ = [
    "Scenario",
    "SCENARIO_SCHEMA",
    "fractional_resample",
    "speech_shaped_noise",
    "render_scenario",
    "rmse_ppm",
    "load_scenario",
    "save_scenario",
]

HALF_TAPS = 64
KAISER_BETA = 8.6
_PHASES = 2048
_BLOCK = 16384


@lru_cache(maxsize=8)
def _kernel_table(cutoff):
    # rows: fractional position i / _PHASES, columns: taps j = -63..64
    j = np.arange(-HALF_TAPS + 1, HALF_TAPS + 1)
    frac = np.arange(_PHASES + 1) / _PHASES
    d = frac[:, None] - j[None, :]
    window = np.i0(KAISER_BETA * np.sqrt(np.clip(1.0 - (d / HALF_TAPS) ** 2, 0.0, None)))
    table = cutoff * np.sinc(cutoff * d) * window / np.i0(KAISER_BETA)
    table /= table.sum(axis=1, keepdims=True)
    table.setflags(write=False)
    return table


def fractional_resample(signal, ratio, length=None):
    """Resample onto a grid ``ratio`` times denser than the input.

    ``out[tau]`` is the band-limited interpolation of the input at the
    (fractional) input position ``tau / ratio``: a recording of the same
    waveform taken with a clock running ``ratio`` times faster.  Uses a
    Kaiser-windowed sinc with 64 taps per side; input samples outside the
    signal count as zero.

    Args:
        signal: ``TimeSignal`` or 1-D array.
        ratio: rate ratio in ``(0.9, 1.1)``.
        length: number of output samples; defaults to every position that
            falls inside the input.

    Returns:
        ``TimeSignal`` (at the input's nominal rate) when given one,
        otherwise an array.
    """
    if not 0.9 < ratio < 1.1:
        raise InvalidInputError(f"ratio must lie in (0.9, 1.1), got {ratio}")
    is_signal = isinstance(signal, TimeSignal)
    x = signal.samples if is_signal else np.asarray(signal, dtype=np.float64)
    n_in = len(x)
    if length is None:
        length = int(math.floor((n_in - 1) * ratio)) + 1 if n_in else 0

    if ratio == 1.0:
        out = np.zeros(length)
        k = min(length, n_in)
        out[:k] = x[:k]
    else:
        table = _kernel_table(min(1.0, ratio))
        pad = HALF_TAPS + 1
        overrun = max(0, int(math.ceil((length - 1) / ratio)) - n_in + 1) if length else 0
        xp = np.concatenate([np.zeros(pad), x, np.zeros(pad + overrun + 2)])
        taps = np.arange(-HALF_TAPS + 1, HALF_TAPS + 1)
        out = np.empty(length)
        for start in range(0, length, _BLOCK):
            tau = np.arange(start, min(start + _BLOCK, length), dtype=np.float64)
            pos = tau / ratio
            k = np.floor(pos)
            phase = (pos - k) * _PHASES
            i = np.minimum(phase.astype(np.int64), _PHASES - 1)
            w = (phase - i)[:, None]
            coeffs = (1.0 - w) * table[i] + w * table[i + 1]
            idx = k.astype(np.int64)[:, None] + taps[None, :] + pad
            out[start:start + len(tau)] = np.einsum("ij,ij->i", coeffs, xp[idx])
    if is_signal:
        return TimeSignal(out, signal.nominal_rate)
    return out


def speech_shaped_noise(num_samples, rate, rng, corner_hz=500.0):
    """Gaussian noise with a flat spectrum up to ``corner_hz`` and a
    -12 dB/octave roll-off above it, scaled to unit variance."""
    white = rng.standard_normal(num_samples)
    spec = np.fft.rfft(white)
    freqs = np.fft.rfftfreq(num_samples, 1.0 / rate)
    spec *= np.where(freqs > corner_hz, (corner_hz / np.maximum(freqs, corner_hz)) ** 2, 1.0)
    out = np.fft.irfft(spec, n=num_samples)
    return out / np.std(out)


SCENARIO_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "Scenario",
    "type": "object",
    "required": ["num_channels", "num_sources", "duration", "true_sros"],
    "properties": {
        "num_channels": {"type": "integer", "minimum": 1},
        "num_sources": {"type": "integer", "minimum": 0},
        "duration": {"type": "number", "exclusiveMinimum": 0},
        "true_sros": {"type": "array", "items": {"type": "number"}, "minItems": 1},
        "snr_db": {"type": ["number", "null"]},
        "seed": {"type": "integer", "minimum": 0},
        "sample_rate": {"type": "number", "exclusiveMinimum": 0},
        "delays": {"type": ["array", "null"],
                   "items": {"type": "array", "items": {"type": "integer", "minimum": 0}}},
        "gains": {"type": ["array", "null"],
                  "items": {"type": "array", "items": {"type": "number"}}},
        "max_delay": {"type": "integer", "minimum": 0},
        "reflection_tail": {"type": "number", "minimum": 0},
        "sources": {"type": ["array", "null"], "items": {"type": "string"}},
    },
    "additionalProperties": False,
}


@dataclass
class Scenario:
    """Recording setup with ground-truth SROs.

    ``true_sros`` is in ppm with ``true_sros[0] == 0``.  ``delays[s][m]``
    (integer samples) and ``gains[s][m]`` are drawn from ``seed`` when not
    given.  ``snr_db=None`` means noise-free.  ``reflection_tail`` (seconds)
    adds a random exponentially decaying tail to every source-channel path.
    """

    num_channels: int
    num_sources: int
    duration: float
    true_sros: list
    snr_db: float | None = 30.0
    seed: int = 0
    sample_rate: float = 16000.0
    delays: list | None = None
    gains: list | None = None
    max_delay: int = 50
    reflection_tail: float = 0.0
    sources: list | None = field(default=None, repr=False)

    def __post_init__(self):
        M = self.num_channels
        if len(self.true_sros) != M:
            raise InvalidInputError(
                f"true_sros has {len(self.true_sros)} entries for {M} channels")
        if self.true_sros[0] != 0:
            raise InvalidInputError("true_sros[0] must be 0 (reference channel)")
        if self.duration <= 0:
            raise InvalidInputError("duration must be positive")
        SroVector.from_ppm(self.true_sros)
        geometry = np.random.default_rng(self._streams()[0])
        if self.delays is None:
            self.delays = geometry.integers(
                0, self.max_delay + 1, size=(self.num_sources, M)).tolist()
        if self.gains is None:
            self.gains = geometry.uniform(0.5, 1.0, size=(self.num_sources, M)).tolist()
        for name in ("delays", "gains"):
            shape = np.shape(getattr(self, name))
            if self.num_sources and shape != (self.num_sources, M):
                raise InvalidInputError(
                    f"{name} must have shape ({self.num_sources}, {M}), got {shape}")

    def _streams(self):
        return np.random.SeedSequence(self.seed).spawn(4)

    @property
    def num_samples(self):
        return int(round(self.duration * self.sample_rate))

    @property
    def sro(self):
        return SroVector.from_ppm(self.true_sros)

    @classmethod
    def from_dict(cls, data):
        try:
            jsonschema.validate(data, SCENARIO_SCHEMA)
        except jsonschema.ValidationError as exc:
            where = ".".join(str(p) for p in exc.absolute_path) or "<root>"
            raise InvalidInputError(f"invalid scenario at {where}: {exc.message}") from None
        return cls(**data)

    def to_dict(self):
        data = asdict(self)
        if data["sources"] is None:
            del data["sources"]
        return data


def load_scenario(path):
    with open(path, encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise InvalidInputError(f"{path}: not valid JSON ({exc})") from None
    return Scenario.from_dict(data)


def save_scenario(scenario, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(scenario.to_dict(), fh, indent=2)


def _margin(scenario):
    return HALF_TAPS + 2 + int(math.ceil(scenario.num_samples * 0.01))


def _reflection(rng, tail_s, rate):
    n = max(1, int(round(tail_s * rate)))
    tail = rng.standard_normal(n) * np.exp(-6.9 * np.arange(1, n + 1) / n)  # -60 dB at the end
    # direct path and tail carry equal energy
    return np.concatenate([[1.0], tail / np.sqrt(np.sum(tail ** 2))])


def render_scenario(scenario: Scenario, source_signals=None):
    """Render one drifted recording per channel.

    Channel ``m`` is the sum over sources of ``gain * source`` delayed by an
    integer number of samples, plus white Gaussian noise at ``snr_db``, then
    resampled by ``1 + eps_m``.  Without sources every channel is unit
    variance noise.  When ``source_signals`` is omitted, speech-shaped noise
    is generated from the scenario seed.

    Returns:
        list of ``TimeSignal``, all ``duration * sample_rate`` samples long.
    """
    N = scenario.num_samples
    rate = scenario.sample_rate
    _, source_ss, noise_ss, tail_ss = scenario._streams()
    S = scenario.num_sources
    if source_signals is None:
        rng = np.random.default_rng(source_ss)
        sources = [speech_shaped_noise(N + _margin(scenario), rate, rng) for _ in range(S)]
    else:
        sources = [s.samples if isinstance(s, TimeSignal) else np.asarray(s, dtype=np.float64)
                   for s in source_signals]
        if len(sources) < S:
            raise InvalidInputError(f"scenario needs {S} sources, got {len(sources)}")
        sources = sources[:S]
        for i, s in enumerate(sources):
            if len(s) < N:
                raise InvalidInputError(
                    f"source {i} has {len(s)} samples, scenario needs {N}")
    n_mix = min((len(s) for s in sources), default=N)
    noise_rng = np.random.default_rng(noise_ss)
    tail_rng = np.random.default_rng(tail_ss)

    channels = []
    for m, sro_ppm in enumerate(scenario.true_sros):
        mix = np.zeros(n_mix)
        for s, src in enumerate(sources):
            path = src[:n_mix]
            if scenario.reflection_tail > 0:
                h = _reflection(tail_rng, scenario.reflection_tail, rate)
                path = fftconvolve(path, h)[:n_mix]
            d = int(scenario.delays[s][m])
            mix[d:] += scenario.gains[s][m] * path[:n_mix - d]
        noise = noise_rng.standard_normal(n_mix)
        if S == 0:
            mix = noise
        elif scenario.snr_db is not None and np.isfinite(scenario.snr_db):
            power = np.mean(mix[:N] ** 2)
            mix = mix + noise * math.sqrt(power * 10.0 ** (-scenario.snr_db / 10.0))
        out = fractional_resample(mix, 1.0 + sro_ppm * PPM, length=N)
        channels.append(TimeSignal(out, rate))
    return channels


def rmse_ppm(estimated, truth):
    """RMS error over the non-reference channels, in ppm.

    Both arguments are ``SroVector`` objects or arrays of dimensionless SROs.
    """
    est = _epsilons(estimated)
    ref = _epsilons(truth)
    if est.size != ref.size:
        raise InvalidInputError(f"length mismatch: {est.size} vs {ref.size}")
    if est.size < 2:
        return 0.0
    err = (est[1:] - ref[1:]) / PPM
    return float(np.sqrt(np.mean(err ** 2)))
