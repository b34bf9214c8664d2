"""Joint SRO estimation by majorization-minimization.

With ``Upsilon[t, f]`` built from the raw STFT and the current SCMs, the
SRO-dependent part of the log-likelihood is a sum of negative cosines

    J(eps) = -sum_{t,f,m,n} |U_mn| cos(omega[t,f] (eps_n - eps_m) + arg U_mn).

Each cosine is minorized by a concave quadratic that touches it at the current
estimate, so the surrogate is maximized in closed form by one small linear
solve with ``eps_0 = 0`` enforced through a Lagrange multiplier.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError, NumericalError
from .likelihood import (
    LOADING,
    PPM,
    SroVector,
    UpsilonSet,
    _epsilons,
    regularize,
)
from .spectral import SpectrogramSet

log = logging.getLogger(__name__)

__all__ = [
    "AuxState",
    "KktSystem",
    "JointResult",
    "sinc",
    "cosine_bound_params",
    "aux_state",
    "surrogate_value",
    "entrywise_objective",
    "difference_matrix",
    "build_kkt",
    "solve_kkt",
    "solve_kkt_bordered",
    "solve_kkt_reduced",
    "estimate_joint",
]

TWO_PI = 2.0 * np.pi
_TIE = 1e-12
RIDGE = 1e-12


def sinc(x):
    """Unnormalized ``sin(x)/x`` with ``sinc(0) = 1``."""
    x = np.asarray(x, dtype=np.float64)
    small = np.abs(x) < 1e-4
    safe = np.where(small, 1.0, x)
    return np.where(small, 1.0 - x * x / 6.0, np.sin(safe) / safe)


def _bound_from_polar(alpha, gamma, xi):
    q = (xi + gamma) / TWO_PI
    q = np.where(np.abs(q - np.round(q)) < _TIE, q + _TIE, q)
    mu = TWO_PI * np.floor(q) + np.pi - gamma
    lam = 0.5 * alpha * sinc(xi - mu)
    return np.maximum(lam, 0.0), mu


def cosine_bound_params(upsilon_entry, omega, eps_diff_tilde):
    """Curvature and center of the quadratic minorizer of one cosine term.

    For ``alpha = |U|``, ``gamma = arg U`` and ``xi = omega * eps_diff_tilde``
    the returned ``(lam, mu)`` satisfy, for every ``theta``,

        -alpha cos(omega theta + gamma) >= -lam (omega theta - mu)^2 + const

    with equality at ``theta = eps_diff_tilde``.  Works elementwise on arrays.
    """
    u = np.asarray(upsilon_entry, dtype=np.complex128)
    omega = np.asarray(omega, dtype=np.float64)
    if np.any(omega < 0):
        raise InvalidInputError("omega must be non-negative")
    xi = omega * np.asarray(eps_diff_tilde, dtype=np.float64)
    lam, mu = _bound_from_polar(np.abs(u), np.angle(u), xi)
    if lam.ndim == 0:
        return float(lam), float(mu)
    return lam, mu


@dataclass
class AuxState:
    """Auxiliary variables of one MM step, indexed ``[t, f, m, n]``."""

    xi: np.ndarray
    lam: np.ndarray
    mu: np.ndarray
    omega: np.ndarray

    @property
    def num_channels(self):
        return self.xi.shape[-1]


def aux_state(upsilon, omega, eps_tilde):
    """Evaluate xi, lambda, mu for all ``(t, f, m, n)`` at ``eps_tilde``.

    Self-pairs are constant in eps and get ``lam = mu = 0``.
    """
    U = upsilon.matrices if isinstance(upsilon, UpsilonSet) else np.asarray(upsilon)
    eps = _epsilons(eps_tilde, U.shape[-1])
    omega = np.asarray(omega, dtype=np.float64)
    xi = omega[..., None, None] * (eps[None, :] - eps[:, None])
    lam, mu = _bound_from_polar(np.abs(U), np.angle(U), xi)
    diag = np.eye(U.shape[-1], dtype=bool)
    lam = np.where(diag, 0.0, lam)
    mu = np.where(diag, 0.0, mu)
    return AuxState(xi=xi, lam=lam, mu=mu, omega=omega)


def surrogate_value(aux: AuxState, eps):
    """Surrogate ``Q(eps | eps_tilde)`` without its eps-independent offset."""
    eps = _epsilons(eps, aux.num_channels)
    diff = eps[None, :] - eps[:, None]
    r = aux.omega[..., None, None] * diff - aux.mu
    return -float(np.sum(aux.lam * r * r))


def entrywise_objective(upsilon, omega, eps):
    """``J(eps)`` as a sum of negative cosines over every ``(t, f, m, n)``."""
    U = upsilon.matrices if isinstance(upsilon, UpsilonSet) else np.asarray(upsilon)
    eps = _epsilons(eps, U.shape[-1])
    phase = np.asarray(omega)[..., None, None] * (eps[None, :] - eps[:, None])
    return -float(np.sum(np.abs(U) * np.cos(phase + np.angle(U))))


def difference_matrix(num_channels):
    """``D`` of shape ``(M*M, M)`` with ``(D @ eps)[m*M + n] = eps_n - eps_m``."""
    M = num_channels
    D = np.zeros((M * M, M))
    for m in range(M):
        for n in range(M):
            if m != n:
                D[m * M + n, n] += 1.0
                D[m * M + n, m] -= 1.0
    return D


@dataclass
class KktSystem:
    """Normal equations of the quadratic surrogate.

    ``a`` is the diagonal of ``A``; ``anchor`` is the point the ridge pulls
    toward (the current estimate inside the MM loop).
    """

    a: np.ndarray
    b: np.ndarray
    D: np.ndarray
    u: np.ndarray
    anchor: np.ndarray = field(default=None)

    def __post_init__(self):
        M = self.D.shape[1]
        if self.anchor is None:
            self.anchor = np.zeros(M)

    @property
    def num_channels(self):
        return self.D.shape[1]

    @property
    def A(self):
        return np.diag(self.a)

    def hessian(self):
        return self.D.T @ (self.a[:, None] * self.D)

    def gradient(self):
        return self.D.T @ self.b


def _kkt_from_sums(a, b, anchor):
    M = len(anchor)
    u = np.zeros(M)
    u[0] = 1.0
    return KktSystem(a=a, b=b, D=difference_matrix(M), u=u,
                     anchor=np.asarray(anchor, dtype=np.float64))


def build_kkt(aux: AuxState, num_channels=None, anchor=None):
    """Accumulate ``A = sum w^2 Lambda`` and ``b = sum w Lambda mu``."""
    M = num_channels or aux.num_channels
    lam = aux.lam.reshape(-1, M * M)
    mu = aux.mu.reshape(-1, M * M)
    w = aux.omega.reshape(-1, 1)
    a = np.sum(w * w * lam, axis=0)
    b = np.sum(w * lam * mu, axis=0)
    anchor = np.zeros(M) if anchor is None else _epsilons(anchor, M)
    return _kkt_from_sums(a, b, anchor)


def _ridged(system):
    H = system.hessian()
    g = system.gradient()
    trace = float(np.trace(H))
    if not np.isfinite(trace) or trace <= 0.0:
        raise NumericalError(
            "KKT system has no curvature (all weights are zero)",
            trace=trace)
    r = RIDGE * trace
    M = H.shape[0]
    return H + r * np.eye(M), g + r * system.anchor, trace / M


def solve_kkt_bordered(system: KktSystem):
    """Solve the bordered system; returns ``(eps, rho)``.

    The ridge ``1e-12 * trace(D^T A D)`` is centered on ``system.anchor`` so
    that the step never lowers the surrogate.
    """
    H, g, scale = _ridged(system)
    M = H.shape[0]
    K = np.zeros((M + 1, M + 1))
    K[:M, :M] = H
    # border scaled to the Hessian magnitude for conditioning
    K[:M, M] = scale * system.u
    K[M, :M] = scale * system.u
    rhs = np.concatenate([g, [0.0]])
    try:
        sol = np.linalg.solve(K, rhs)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(
            f"singular KKT system: {exc}", cond=float(np.linalg.cond(K))) from exc
    if not np.all(np.isfinite(sol)):
        raise NumericalError("KKT solve produced non-finite values",
                             cond=float(np.linalg.cond(K)))
    eps = sol[:M].copy()
    eps[0] = 0.0
    return eps, scale * sol[M]


def solve_kkt_reduced(system: KktSystem):
    """Same maximizer by eliminating ``eps_0`` and solving for the rest."""
    H, g, _ = _ridged(system)
    eps = np.zeros(H.shape[0])
    eps[1:] = np.linalg.solve(H[1:, 1:], g[1:])
    return eps


def solve_kkt(system: KktSystem) -> SroVector:
    """Maximizer of the quadratic surrogate subject to ``eps_0 = 0``."""
    eps, _ = solve_kkt_bordered(system)
    return SroVector(eps)


@dataclass
class JointResult:
    """Outcome of :func:`estimate_joint`.

    ``trace`` holds the (penalized) log-likelihood before the first and
    after every outer iteration; ``path`` the SRO estimates in ppm.
    """

    sro: SroVector
    trace: list
    iterations: int
    converged: bool
    path: list = field(default_factory=list)


class _JointModel:
    """Eps-independent per-pair products of one multichannel STFT.

    With ``c_mn[t, f] = x_m[t, f] * conj(x_n[t, f])``:

    * the SCM entry at eps is ``mean_t c_mn * exp(j omega (eps_m - eps_n))``,
      a polynomial in a per-bin rotation (Horner over frames);
    * ``Upsilon_mn = conj(c_mn) * (V^-1)_mn``, so its modulus and phase
      split into a data part (cached here) and an SCM part per bin.
    """

    def __init__(self, spec):
        x = spec.coeffs
        self.M, self.T, _ = x.shape
        self.omega = spec.omega
        config = spec.config
        self.rate = 2.0 * np.pi * config.shift * np.arange(config.num_bins) / config.dft_size
        self.pairs = [(m, n) for m in range(self.M) for n in range(m + 1, self.M)]
        self.cross = np.stack([x[m] * x[n].conj() for m, n in self.pairs]) if self.pairs else None
        self.w_alpha = [self.omega * np.abs(c) for c in self.cross]
        self.gamma = [-np.angle(c) for c in self.cross]
        self.power = np.mean(np.abs(x) ** 2, axis=1)          # (M, F)

    def scm(self, eps):
        M = self.M
        V = np.zeros((self.power.shape[1], M, M), dtype=np.complex128)
        idx = np.arange(M)
        V[:, idx, idx] = self.power.T
        diffs = np.array([eps[m] - eps[n] for m, n in self.pairs])
        z = np.exp(1j * diffs[:, None] * self.rate[None, :])
        acc = np.zeros(z.shape, dtype=np.complex128)
        for row in self.cross[:, ::-1].swapaxes(0, 1):
            acc *= z
            acc += row
        acc /= self.T
        for p, (m, n) in enumerate(self.pairs):
            V[:, m, n] = acc[p]
            V[:, n, m] = acc[p].conj()
        return V

    def surrogate(self, inverse):
        return _Surrogate(self, inverse)


class _Surrogate:
    """Quadratic minorizer pieces for fixed SCMs; ``kkt(eps)`` per MM step."""

    def __init__(self, model, inverse):
        self.model = model
        self.terms = []
        for p, (m, n) in enumerate(model.pairs):
            v = inverse[:, m, n]
            wa = model.w_alpha[p] * np.abs(v)[None, :]
            gamma = model.gamma[p] + np.angle(v)[None, :]
            self.terms.append((m, n, wa.ravel(), (model.omega * wa).ravel(), gamma.ravel()))
        self.omega = model.omega.ravel()

    def kkt(self, eps):
        M = self.model.M
        a = np.zeros(M * M)
        b = np.zeros(M * M)
        for m, n, wa, w2a, gamma in self.terms:
            delta = eps[n] - eps[m]
            z = self.omega * delta
            z += gamma
            s = np.sin(z)
            d = np.floor(z * (1.0 / TWO_PI) + _TIE)
            d *= -TWO_PI
            d += z
            d -= np.pi                       # d = xi - mu, in [-pi, pi)
            with np.errstate(divide="ignore", invalid="ignore"):
                sinc_d = -s / d              # sin(d) = -sin(z)
            small = np.abs(d) < 1e-4
            if small.any():
                sinc_d[small] = 1.0 - d[small] ** 2 / 6.0
            np.maximum(sinc_d, 0.0, out=sinc_d)
            # A = sum w^2 lam, b = sum w lam mu with lam = alpha/2 sinc(d)
            # and mu = w*delta - d, lam*d = alpha/2 sin(d)
            a_mn = 0.5 * float(w2a @ sinc_d)
            b_mn = delta * a_mn + 0.5 * float(wa @ s)
            a[m * M + n] = a[n * M + m] = a_mn
            b[m * M + n] = b_mn
            b[n * M + m] = -b_mn
        return _kkt_from_sums(a, b, eps)


def _profile_likelihood(logdet, num_frames, num_channels):
    # -T sum_f [log det(S + cI) + tr((S + cI)^-1 (S + cI))]
    return -num_frames * float(np.sum(logdet + num_channels))


def estimate_joint(spec: SpectrogramSet, init=None, outer_iters=100,
                   inner_iters=1, tol_ppm=0.001, loading=LOADING) -> JointResult:
    """Estimate all SROs jointly (alternating SCM and MM updates).

    Args:
        spec: multichannel STFT of the unsynchronized recordings.
        init: initial ``SroVector`` (zeros when omitted).
        outer_iters: maximum number of SCM updates ``K``.
        inner_iters: MM steps per SCM update ``K'``.
        tol_ppm: stop once no SRO moves more than this between outer
            iterations; ``0`` disables early stopping.
        loading: relative diagonal load of the SCMs.

    Returns:
        ``JointResult`` with the final estimate and the likelihood trace.
    """
    M, T = spec.num_channels, spec.num_frames
    if M < 2:
        raise InvalidInputError("need at least two channels")
    if outer_iters < 1 or inner_iters < 1:
        raise InvalidInputError("iteration counts must be >= 1")
    eps = np.zeros(M) if init is None else SroVector(_epsilons(init, M)).epsilons.copy()
    joint = _JointModel(spec)

    def model(e):
        reg = regularize(joint.scm(e), loading)
        return reg, _profile_likelihood(reg.logdet, T, M)

    reg, value = model(eps)
    trace = [value]
    path = [eps / PPM]
    converged = False
    k = 0
    while k < outer_iters:
        surrogate = joint.surrogate(reg.inverse)
        previous = eps
        for _ in range(inner_iters):
            eps = solve_kkt_bordered(surrogate.kkt(eps))[0]
        if not np.all(np.isfinite(eps)) or np.any(np.abs(eps) >= 0.01):
            raise NumericalError(
                f"SRO estimate diverged at outer iteration {k}: {eps}",
                iteration=k, eps=eps.tolist(), previous=previous.tolist(),
                trace=trace)
        k += 1
        reg, value = model(eps)
        trace.append(value)
        path.append(eps / PPM)
        step = np.max(np.abs(eps - previous)) / PPM
        log.debug("outer %d: eps=%s ppm, L=%.6f, step=%.4g ppm",
                  k, np.round(eps / PPM, 4), value, step)
        if tol_ppm > 0 and step < tol_ppm:
            converged = True
            break
    return JointResult(SroVector(eps), trace, k, converged, path)
