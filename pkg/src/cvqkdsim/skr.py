"""Secret-key-rate bounds for Gaussian-modulated reverse reconciliation.

The Holevo bound is evaluated analytically from the two-mode Gaussian state
shared with the eavesdropper.  The channel (transmittance T, excess noise xi)
is purified by mixing Bob's mode with one half of an EPR state of variance
``W = 1 + T xi / (1 - T)`` on a beamsplitter of transmittance T; for the
trusted-detector models the receiver is a further beamsplitter of
transmittance eta fed by an EPR state sized to reproduce the electronic
noise, and the eavesdropper keeps only the channel modes.

Eve's reduced covariance matrix has the standard two-mode form
``[[a I, c sz], [c sz, b I]]`` whose symplectic spectrum follows from
``nu^2 = (D +- sqrt(D^2 - 4 det)) / 2``; conditioning on Bob's measurement
(heterodyne: Schur complement against gamma_B + I; homodyne: against the
x-quadrature alone) preserves enough structure to stay closed-form.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

from .errors import ConfigError
from .estimation import WorstCaseBounds, one_sided_quantile


class DetectorTrustModel(enum.Enum):
    UNTRUSTED_HOMODYNE = "untrusted-homodyne"
    TRUSTED_HOMODYNE = "trusted-homodyne"
    TRUSTED_HETERODYNE = "trusted-heterodyne"


@dataclass(frozen=True)
class SkrInput:
    """Physical and protocol parameters entering the key-rate computation."""

    v_a: float
    t: float
    xi: float
    eta: float = 1.0
    v_el: float = 0.0
    beta: float = 0.95
    symbol_rate: float = 100e6
    model: DetectorTrustModel = DetectorTrustModel.TRUSTED_HETERODYNE

    def __post_init__(self):
        if self.v_a <= 0:
            raise ConfigError("v_a must be positive")
        if not 0.0 < self.t <= 1.0:
            raise ConfigError("t must lie in (0, 1]")
        if self.xi < 0 or self.v_el < 0:
            raise ConfigError("xi and v_el must be >= 0")
        if not 0.0 < self.eta <= 1.0:
            raise ConfigError("eta must lie in (0, 1]")
        if not 0.0 <= self.beta <= 1.0:
            raise ConfigError("beta must lie in [0, 1]")


@dataclass
class SkrResult:
    """Key-rate summary; raw signed rates are preserved, reported rates clamp at 0."""

    i_ab: float
    chi_be: float
    k_f: float          # bits/symbol, signed
    k_s: float          # bits/s, signed
    k_fse: float | None = None

    @property
    def k_f_reported(self) -> float:
        return max(self.k_f, 0.0)

    @property
    def k_s_reported(self) -> float:
        return max(self.k_s, 0.0)


def g_entropy(x: float) -> float:
    """Bosonic entropy of a thermal mode with symplectic eigenvalue ``x``.

    g(x) = ((x+1)/2) log2((x+1)/2) - ((x-1)/2) log2((x-1)/2), with g(1) = 0.
    """
    if x < 1.0 - 1e-9:
        raise ValueError(f"symplectic eigenvalue {x} < 1")
    if x <= 1.0 + 1e-12:
        return 0.0
    xp = (x + 1.0) / 2.0
    xm = (x - 1.0) / 2.0
    return xp * math.log2(xp) - xm * math.log2(xm)


def mutual_information(inp: SkrInput) -> float:
    """Alice-Bob mutual information in bits per symbol.

    Heterodyne measures both quadratures: ``log2(1 + SNR)`` with the
    heterodyne halving of signal and excess noise; homodyne measures one:
    ``0.5 log2(1 + SNR)`` without the halving.
    """
    if inp.model is DetectorTrustModel.TRUSTED_HETERODYNE:
        snr = (inp.eta * inp.t * inp.v_a / 2.0) / (1.0 + inp.v_el
                                                   + inp.eta * inp.t * inp.xi / 2.0)
        return math.log2(1.0 + snr)
    snr = (inp.eta * inp.t * inp.v_a) / (1.0 + inp.v_el + inp.eta * inp.t * inp.xi)
    return 0.5 * math.log2(1.0 + snr)


def _two_mode_eigs(a: float, b: float, c: float) -> tuple[float, float]:
    """Symplectic eigenvalues of [[a I, c sz], [c sz, b I]]."""
    delta = a * a + b * b - 2.0 * c * c
    det = a * b - c * c
    disc = math.sqrt(max(delta * delta - 4.0 * det * det, 0.0))
    nu1 = math.sqrt(max((delta + disc) / 2.0, 1.0))
    nu2 = math.sqrt(max((delta - disc) / 2.0, 0.0))
    return nu1, nu2


def _eve_state(v: float, t: float, xi: float) -> tuple[float, float, float, float]:
    """Eve's two-mode CM (e1, W, c) and Bob's pre-detector variance b."""
    w = 1.0 + t * xi / (1.0 - t)
    e1 = (1.0 - t) * v + t * w
    c = math.sqrt(t * (w * w - 1.0))
    b = t * v + (1.0 - t) * w
    return e1, w, c, b


def holevo_bound(inp: SkrInput) -> float:
    """Eavesdropper information bound chi_BE in bits per symbol.

    Trusted models exclude the receiver efficiency and electronic noise from
    the eavesdropper's purification; the untrusted model folds them into the
    channel.

    Raises:
        ValueError: if the state is non-physical beyond tolerance.
    """
    model = inp.model
    v = inp.v_a + 1.0
    if model is DetectorTrustModel.UNTRUSTED_HOMODYNE:
        # detector belongs to Eve: effective channel eta*T with the
        # electronic noise referred to the channel input
        t = inp.eta * inp.t
        xi = inp.xi + inp.v_el / t if t > 0 else inp.xi
        eta, v_el = 1.0, 0.0
    else:
        t, xi = inp.t, inp.xi
        eta, v_el = inp.eta, inp.v_el
    if xi == 0.0 and t >= 1.0 - 1e-12 and eta >= 1.0 - 1e-12:
        return 0.0
    t = min(t, 1.0 - 1e-9)

    e1, w, c, b_chan = _eve_state(v, t, xi)
    nu1, nu2 = _two_mode_eigs(e1, w, c)
    s_e = g_entropy(nu1) + g_entropy(nu2)

    # coupling of Eve's modes to the measured mode B' = sqrt(eta) B + ...
    s1 = math.sqrt(eta * t * (1.0 - t)) * (w - v)
    s2 = math.sqrt(eta * (1.0 - t) * (w * w - 1.0))

    if model is DetectorTrustModel.TRUSTED_HETERODYNE:
        # heterodyne outcome variance per quadrature: (gamma_B' + 1) / 2
        g_b = eta * b_chan + (1.0 - eta) + 2.0 * v_el
        den = g_b + 1.0
        a2 = e1 - s1 * s1 / den
        b2 = w - s2 * s2 / den
        c2 = c - s1 * s2 / den
        nu3, nu4 = _two_mode_eigs(a2, b2, c2)
        s_cond = g_entropy(nu3) + g_entropy(nu4)
    else:
        # homodyne: condition the x quadratures only
        g_bx = eta * b_chan + (1.0 - eta) + v_el
        ax = e1 - s1 * s1 / g_bx
        bx = w - s2 * s2 / g_bx
        cx = c - s1 * s2 / g_bx
        # x/p-asymmetric two-mode CM: nu^2 = eig(Mx Mp)
        mx = ((ax, cx), (cx, bx))
        mp = ((e1, -c), (-c, w))
        p11 = mx[0][0] * mp[0][0] + mx[0][1] * mp[1][0]
        p12 = mx[0][0] * mp[0][1] + mx[0][1] * mp[1][1]
        p21 = mx[1][0] * mp[0][0] + mx[1][1] * mp[1][0]
        p22 = mx[1][0] * mp[0][1] + mx[1][1] * mp[1][1]
        tr = p11 + p22
        det = p11 * p22 - p12 * p21
        disc = math.sqrt(max(tr * tr / 4.0 - det, 0.0))
        nu3 = math.sqrt(max(tr / 2.0 + disc, 1.0))
        nu4 = math.sqrt(max(tr / 2.0 - disc, 0.0))
        s_cond = g_entropy(nu3) + g_entropy(max(nu4, 1.0))

    chi = s_e - s_cond
    return max(chi, 0.0)


def secret_key_rate(inp: SkrInput) -> SkrResult:
    """Asymptotic secret fraction and rate: ``K_f = beta I_AB - chi_BE``."""
    i_ab = mutual_information(inp)
    chi = holevo_bound(inp)
    k_f = inp.beta * i_ab - chi
    return SkrResult(i_ab=i_ab, chi_be=chi, k_f=k_f, k_s=k_f * inp.symbol_rate)


def finite_size_penalty(n: int, eps_bar: float = 1e-10,
                        eps_pa: float = 1e-10) -> float:
    """Security penalty Delta(n) of the finite-size framework.

    Leading term ``7 sqrt(log2(2 / eps_bar) / n)`` (smoothing parameter of
    the smooth min-entropy) plus the privacy-amplification correction
    ``(2 / n) log2(1 / eps_pa)``.
    """
    if n <= 0:
        raise ConfigError("finite-size penalty needs n > 0")
    return 7.0 * math.sqrt(math.log2(2.0 / eps_bar) / n) \
        + (2.0 / n) * math.log2(1.0 / eps_pa)


def finite_size_rate(inp: SkrInput, bounds: WorstCaseBounds, block_size: int,
                     disclosed: int, eps_bar: float = 1e-10) -> float:
    """Finite-size key rate in bits/s using worst-case channel estimates.

    ``K = ((N - m) / N) (beta I_AB(w) - chi_BE(w) - Delta(N - m)) R_s``
    floored at zero, where the worst-case parameters come from the one-sided
    bounds on T and xi_B.

    Raises:
        ConfigError: disclosed >= block size or non-physical bounds.
    """
    if disclosed >= block_size:
        raise ConfigError("disclosed count must be smaller than the block size")
    if bounds.t_w <= 0:
        return 0.0
    t_w = min(bounds.t_w, 1.0)
    xi_w = max(2.0 * bounds.xi_b_w / (inp.eta * t_w), 0.0)
    worst = SkrInput(v_a=inp.v_a, t=t_w, xi=xi_w, eta=inp.eta, v_el=inp.v_el,
                     beta=inp.beta, symbol_rate=inp.symbol_rate, model=inp.model)
    n = block_size - disclosed
    k = inp.beta * mutual_information(worst) - holevo_bound(worst) \
        - finite_size_penalty(n, eps_bar)
    return max(k, 0.0) * (n / block_size) * inp.symbol_rate


__all__ = [
    "DetectorTrustModel", "SkrInput", "SkrResult", "g_entropy",
    "mutual_information", "holevo_bound", "secret_key_rate",
    "finite_size_penalty", "finite_size_rate", "one_sided_quantile",
]
