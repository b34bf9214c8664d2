"""Zero-mean complex Gaussian model of the synchronized multichannel STFT.

Every frame ``xhat[t, f]`` (channels compensated by their SROs) is modeled as
``CN(0, V[f])``.  Functions here estimate ``V[f]``, evaluate the
log-likelihood, and build the per-frame matrices
``Upsilon[t, f] = diag(x)^H V^-1 diag(x)`` used by the MM update.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import InvalidInputError, NumericalError
from .spectral import SpectrogramSet, StftConfig

__all__ = [
    "SroVector",
    "ScmSet",
    "UpsilonSet",
    "RegularizedScm",
    "regularize",
    "update_scm",
    "log_likelihood",
    "profile_log_likelihood",
    "joint_objective",
    "compute_upsilon",
    "PairObjective",
    "pairwise_objective",
    "LOADING",
]

LOADING = 1e-6
MAX_LOADING = 1e-2
LOG_FLOOR = 1e-300
PPM = 1e-6


@dataclass
class SroVector:
    """Per-channel sampling-rate offsets, channel 0 being the reference."""

    epsilons: np.ndarray

    def __post_init__(self):
        eps = np.array(self.epsilons, dtype=np.float64).reshape(-1)
        if eps.size < 1:
            raise InvalidInputError("an SRO vector needs at least one channel")
        if eps[0] != 0.0:
            raise InvalidInputError(
                f"reference SRO must be exactly 0, got {eps[0]!r}")
        if not np.all(np.isfinite(eps)):
            raise InvalidInputError(f"SROs must be finite, got {eps}")
        if np.any(np.abs(eps) >= 0.01):
            raise InvalidInputError(f"|SRO| must stay below 0.01, got {eps}")
        self.epsilons = eps

    @classmethod
    def from_ppm(cls, ppm):
        return cls(np.asarray(ppm, dtype=np.float64) * PPM)

    @classmethod
    def zeros(cls, num_channels):
        return cls(np.zeros(num_channels))

    @property
    def ppm(self):
        return self.epsilons / PPM

    def __len__(self):
        return self.epsilons.size

    def __array__(self, dtype=None, copy=None):
        return self.epsilons if dtype is None else self.epsilons.astype(dtype)


def _epsilons(sro, num_channels=None):
    eps = sro.epsilons if isinstance(sro, SroVector) else np.asarray(
        sro, dtype=np.float64).reshape(-1)
    if num_channels is not None and eps.size != num_channels:
        raise InvalidInputError(
            f"{eps.size} SROs given for {num_channels} channels")
    return eps


@dataclass
class ScmSet:
    """Spatial covariance matrices, ``matrices[f]`` is ``M x M`` Hermitian."""

    matrices: np.ndarray

    def __post_init__(self):
        V = np.asarray(self.matrices, dtype=np.complex128)
        if V.ndim != 3 or V.shape[1] != V.shape[2]:
            raise InvalidInputError(f"expected (F, M, M) matrices, got {V.shape}")
        scale = max(1.0, float(np.max(np.abs(V), initial=0.0)))
        if np.max(np.abs(V - V.conj().swapaxes(1, 2)), initial=0.0) > 1e-12 * scale:
            raise InvalidInputError("SCMs are not Hermitian")
        if V.size:
            low = np.linalg.eigvalsh(V)[:, 0]
            tr = np.real(np.trace(V, axis1=1, axis2=2))
            if np.any(low < -1e-10 * np.maximum(tr, 0.0) - 1e-300):
                raise InvalidInputError("SCMs are not positive semidefinite")
        self.matrices = V

    @property
    def num_channels(self):
        return self.matrices.shape[1]

    def __len__(self):
        return self.matrices.shape[0]


@dataclass
class UpsilonSet:
    """``matrices[t, f]`` holds ``diag(x)^H V^-1 diag(x)`` for one T-F bin."""

    matrices: np.ndarray

    @property
    def num_channels(self):
        return self.matrices.shape[-1]


class RegularizedScm(NamedTuple):
    inverse: np.ndarray   # (F, M, M)
    logdet: np.ndarray    # (F,) log det of the loaded matrix
    loading: np.ndarray   # (F,) diagonal load added per bin


def _cholesky_inverse(V):
    chol = np.linalg.cholesky(V)
    eye = np.broadcast_to(np.eye(V.shape[-1]), V.shape)
    linv = np.linalg.solve(chol, eye)
    inv = linv.conj().swapaxes(-1, -2) @ linv
    logdet = 2.0 * np.sum(np.log(np.real(np.diagonal(chol, axis1=-2, axis2=-1))), axis=-1)
    return inv, logdet


def regularize(scms, loading=LOADING):
    """Diagonally load and invert every SCM.

    Each bin gets ``loading * trace(V[f]) / M`` on the diagonal (with a small
    floor tied to the mean bin power so silent bins stay invertible).  Bins
    whose Cholesky factorization fails are retried with 10x the load, up to
    ``MAX_LOADING``.

    Returns:
        ``RegularizedScm`` with the inverses, log-determinants and loads.
    """
    V = scms.matrices if isinstance(scms, ScmSet) else np.asarray(scms)
    F, M, _ = V.shape
    power = np.real(np.trace(V, axis1=1, axis2=2)) / M
    mean_power = float(power.mean()) if F else 0.0
    base = np.maximum(power, 1e-9 * mean_power)
    eye = np.eye(M)

    inverse = np.empty(V.shape, dtype=np.complex128)
    logdet = np.empty(F)
    load = np.empty(F)
    delta = loading
    pending = np.arange(F)
    while pending.size:
        c = delta * base[pending]
        loaded = V[pending] + c[:, None, None] * eye
        try:
            inv, ld = _cholesky_inverse(loaded)
            ok = np.ones(pending.size, dtype=bool)
        except np.linalg.LinAlgError:
            ok = np.zeros(pending.size, dtype=bool)
            inv = np.empty_like(loaded)
            ld = np.empty(pending.size)
            for i in range(pending.size):
                try:
                    inv[i], ld[i] = _cholesky_inverse(loaded[i])
                    ok[i] = True
                except np.linalg.LinAlgError:
                    pass
        ok &= np.isfinite(ld)
        done = pending[ok]
        inverse[done], logdet[done], load[done] = inv[ok], ld[ok], c[ok]
        pending = pending[~ok]
        if pending.size:
            delta = max(10.0 * delta, LOADING)
            if delta > MAX_LOADING * (1 + 1e-9):
                raise NumericalError(
                    f"SCM at bin {int(pending[0])} is singular even with "
                    f"diagonal loading {MAX_LOADING:g}",
                    bins=pending.tolist())
    return RegularizedScm(inverse, logdet, load)


def update_scm(spec: SpectrogramSet, sro) -> ScmSet:
    """Maximum-likelihood SCMs ``V[f] = mean_t xhat xhat^H`` for fixed SROs."""
    if spec.num_frames < 1:
        raise InvalidInputError("need at least one frame")
    xhat = spec.compensated(_epsilons(sro, spec.num_channels))
    return ScmSet(_sample_scm(xhat))


def _sample_scm(xhat):
    M, T, _ = xhat.shape
    X = np.ascontiguousarray(xhat.transpose(2, 0, 1))     # (F, M, T)
    V = X @ X.conj().swapaxes(1, 2) / T
    return 0.5 * (V + V.conj().swapaxes(1, 2))


def _quadratic_forms(xhat, inverse):
    """``xhat[:, t, f]^H inverse[f] xhat[:, t, f]`` for every (t, f)."""
    y = np.einsum("fmn,ntf->mtf", inverse, xhat)
    return np.real(np.sum(xhat.conj() * y, axis=0))


def log_likelihood(spec: SpectrogramSet, sro, scms: ScmSet, *,
                   penalized=False, loading=LOADING) -> float:
    """Gaussian log-likelihood of the compensated STFT, constant dropped.

    ``sum_f sum_t [-log det V[f] - xhat^H V[f]^-1 xhat]`` with ``V[f]`` the
    diagonally loaded SCMs.  With ``penalized=True`` the term
    ``-T * sum_f c_f * trace(V[f]^-1)`` is added, ``c_f`` being the load of
    bin ``f``; that objective is maximized over the SCMs exactly by the loaded
    ML estimate, which makes the alternating updates monotone.
    """
    eps = _epsilons(sro, spec.num_channels)
    reg = regularize(scms, loading)
    xhat = spec.compensated(eps)
    T = spec.num_frames
    value = -T * float(np.sum(reg.logdet)) - float(np.sum(_quadratic_forms(xhat, reg.inverse)))
    if penalized:
        tr = np.real(np.trace(reg.inverse, axis1=1, axis2=2))
        value -= T * float(np.sum(reg.loading * tr))
    return value


def profile_log_likelihood(spec: SpectrogramSet, sro, *, loading=LOADING):
    """Penalized log-likelihood with the SCMs re-estimated at ``sro``."""
    return log_likelihood(spec, sro, update_scm(spec, sro), penalized=True,
                          loading=loading)


def joint_objective(spec: SpectrogramSet, sro, scms: ScmSet, *, loading=LOADING):
    """SRO-dependent part of the log-likelihood: ``-sum xhat^H V^-1 xhat``."""
    reg = regularize(scms, loading)
    xhat = spec.compensated(_epsilons(sro, spec.num_channels))
    return -float(np.sum(_quadratic_forms(xhat, reg.inverse)))


def compute_upsilon(spec: SpectrogramSet, scms: ScmSet, *, loading=LOADING):
    """``Upsilon[t, f] = diag(x)^H V^-1 diag(x)`` from the raw coefficients.

    The result has shape ``(T, F, M, M)``; use it on small problems only.
    """
    reg = regularize(scms, loading)
    x = spec.coeffs.transpose(1, 2, 0)                    # (T, F, M)
    ups = x.conj()[..., :, None] * reg.inverse[None] * x[..., None, :]
    return UpsilonSet(ups)


class PairObjective:
    """Two-channel objective ``I(eps)`` with the data-dependent sums cached.

    ``I(eps) = -sum_f log(P0[f] * P1[f] - |C_f(eps)|^2)`` where
    ``C_f(eps) = sum_t conj(x0[t, f]) * x1[t, f] * exp(j*omega[t, f]*eps)``.
    Setting ``conjugate=False`` drops the conjugate on ``x0``, the literal
    product form; that variant is not bounded by Cauchy-Schwarz.

    ``C_f`` is a polynomial in ``exp(2j*pi*a*f*eps/F)`` and is evaluated with
    Horner's rule over the frames.
    """

    def __init__(self, x_ref, x_other, config=None, conjugate=True):
        x_ref = np.asarray(x_ref)
        x_other = np.asarray(x_other)
        if x_ref.shape != x_other.shape or x_ref.ndim != 2:
            raise InvalidInputError(
                f"spectrograms must share geometry, got {x_ref.shape} "
                f"and {x_other.shape}")
        self.config = config or StftConfig()
        if x_ref.shape[1] != self.config.num_bins:
            raise InvalidInputError("bin count does not match the STFT config")
        self.conjugate = conjugate
        self.power_ref = np.sum(np.abs(x_ref) ** 2, axis=0)
        self.power_other = np.sum(np.abs(x_other) ** 2, axis=0)
        a = x_ref.conj() if conjugate else x_ref
        self.cross = a * x_other
        self._rate = 2.0 * np.pi * self.config.shift * np.arange(
            self.config.num_bins) / self.config.dft_size

    def cross_sums(self, epsilons):
        """``C_f(eps)`` for each requested eps, shape ``(len(eps), F)``."""
        eps = np.atleast_1d(np.asarray(epsilons, dtype=np.float64))
        z = np.exp(1j * eps[:, None] * self._rate[None, :])
        acc = np.zeros(z.shape, dtype=np.complex128)
        for row in self.cross[::-1]:
            acc *= z
            acc += row
        return acc

    def log_arguments(self, epsilons):
        c = self.cross_sums(epsilons)
        return self.power_ref * self.power_other - np.abs(c) ** 2

    def __call__(self, epsilon):
        scalar = np.ndim(epsilon) == 0
        arg = self.log_arguments(epsilon)
        if np.any(arg <= LOG_FLOOR):
            warnings.warn("pairwise objective: non-positive log argument "
                          "clamped", RuntimeWarning, stacklevel=2)
            arg = np.maximum(arg, LOG_FLOOR)
        values = -np.sum(np.log(arg), axis=-1)
        return float(values[0]) if scalar else values


def pairwise_objective(spec_ref, spec_other, epsilon, config=None, *,
                       conjugate=True):
    """Two-channel objective at one SRO (or an array of SROs).

    Args:
        spec_ref: reference-channel coefficients ``(T, F/2+1)``.
        spec_other: the other channel, same shape.
        epsilon: SRO of ``spec_other`` relative to the reference.
        config: ``StftConfig`` used to compute the spectrograms.
        conjugate: use ``conj(x0) * xhat1`` in the cross term (default).
    """
    return PairObjective(spec_ref, spec_other, config, conjugate)(epsilon)
