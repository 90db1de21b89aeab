"""Shot-noise normalization and channel parameter estimation.

Moment conventions (complex symbols, both quadratures summed):

    <X^2> = mean(|X|^2) = V_A
    <XY>  = mean(Re(X conj(Y)))
    <Y^2> = mean(|Y|^2)

With the heterodyne channel model ``Y = sqrt(eta T / 2) X + N`` these give

    T  = 2 <XY>^2 / (V_A^2 eta)
    xi = 2 (<Y^2> - 1 - V_el - (eta T / 2) V_A) / (eta T)

and Bob-side excess noise ``xi_B = eta T xi / 2``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import erfcinv

from .errors import EstimationError


@dataclass
class EstimationResult:
    """Channel estimates for one frame."""

    t_hat: float
    xi_hat: float
    xi_b: float
    v_el: float
    sigma0_sq: float
    n_mean: float
    m: int
    v_a: float = 0.0
    eta: float = 1.0

    def to_json(self) -> str:
        """Flat record with the stable field names."""
        return json.dumps({
            "t_hat": self.t_hat, "xi_hat": self.xi_hat, "xi_b": self.xi_b,
            "v_el": self.v_el, "sigma0_sq": self.sigma0_sq,
            "n_mean": self.n_mean, "m": self.m,
        })


@dataclass
class WorstCaseBounds:
    """One-sided confidence bounds at failure probability epsilon."""

    t_w: float
    xi_b_w: float
    epsilon: float


def snu_normalize(bob_symbols: np.ndarray, elec_symbols: np.ndarray,
                  elec_shot_symbols: np.ndarray
                  ) -> tuple[np.ndarray, float, float]:
    """Normalize Bob's symbols to shot-noise units.

    The shot-noise variance is the difference between the variances of the
    two calibration symbol sets; after normalization the shot-noise symbols
    have unit variance by construction.

    Returns:
        (normalized symbols, sigma0_sq in raw units, V_el in SNU).

    Raises:
        EstimationError: empty inputs or non-positive shot-noise estimate.
    """
    if len(bob_symbols) == 0 or len(elec_symbols) == 0 or len(elec_shot_symbols) == 0:
        raise EstimationError("normalization needs all three symbol sets")
    var_el = float(np.var(elec_symbols))
    var_es = float(np.var(elec_shot_symbols))
    sigma0_sq = var_es - var_el
    if sigma0_sq <= 0:
        raise EstimationError(
            f"negative shot noise: var(elec+shot) = {var_es:.3g} <= "
            f"var(elec) = {var_el:.3g}")
    v_el = var_el / sigma0_sq
    return bob_symbols / math.sqrt(sigma0_sq), sigma0_sq, v_el


def estimate_channel(alice_symbols: np.ndarray, bob_symbols: np.ndarray,
                     v_a: float, eta: float, v_el: float,
                     sigma0_sq: float = 1.0) -> EstimationResult:
    """Transmittance and excess noise from disclosed symbol pairs.

    Args:
        alice_symbols: disclosed transmitted symbols (SNU).
        bob_symbols: matching received symbols, already normalized to SNU.
        v_a: declared modulation variance of the frame.
        eta: trusted detector efficiency.
        v_el: trusted electronic noise (SNU).
        sigma0_sq: shot-noise variance in raw units (bookkeeping only).

    Raises:
        EstimationError: length mismatch, non-positive correlation (sync or
            phase failure upstream), or non-physical transmittance.
    """
    x = np.asarray(alice_symbols)
    y = np.asarray(bob_symbols)
    if x.shape != y.shape or x.size == 0:
        raise EstimationError("alice/bob symbol sets must match and be non-empty")
    if v_a <= 0 or eta <= 0:
        raise EstimationError("v_a and eta must be positive")
    m = x.size
    cxy = float(np.mean(np.real(x * np.conj(y))))
    if cxy <= 0:
        raise EstimationError("anti-correlated symbols: <XY> <= 0")
    y2 = float(np.mean(np.abs(y) ** 2))
    t_hat = 2.0 * cxy ** 2 / (v_a ** 2 * eta)
    if t_hat > 1.05:
        raise EstimationError(f"estimated transmittance {t_hat:.3f} > 1.05")
    xi_hat = 2.0 * (y2 - 1.0 - v_el - eta * t_hat / 2.0 * v_a) / (eta * t_hat)
    return EstimationResult(t_hat=t_hat, xi_hat=xi_hat,
                            xi_b=eta * t_hat * xi_hat / 2.0,
                            v_el=v_el, sigma0_sq=sigma0_sq,
                            n_mean=v_a / 2.0, m=m, v_a=v_a, eta=eta)


def one_sided_quantile(epsilon: float) -> float:
    """z such that a standard normal exceeds z with probability epsilon."""
    if not 0.0 < epsilon < 0.5:
        raise EstimationError("epsilon must lie in (0, 0.5)")
    return math.sqrt(2.0) * float(erfcinv(2.0 * epsilon))

def worst_case_bounds(result: EstimationResult, epsilon: float) -> WorstCaseBounds:
    """Gaussian worst-case estimators for T (lower) and xi_B (upper).

    Per-quadrature model y = t x + z with t = sqrt(eta T / 2) and complex
    noise variance sigma^2 = 1 + V_el + xi_B estimated over m complex
    samples (2m real quadrature samples):

        Var(t_hat)      = sigma^2 / (2 m V_A)
        T = 2 t^2 / eta -> sd(T_hat)    = 2 sqrt(T sigma^2 / (eta V_A m))
        Var(sigma^2_hat) = sigma^4 / m  -> sd(xi_B_hat) = sigma^2 / sqrt(m)

    The bounds shift the point estimates by the one-sided normal quantile.
    """
    if result.m < 2:
        raise EstimationError("worst-case bounds need at least two samples")
    z = one_sided_quantile(epsilon)
    sigma_sq = 1.0 + result.v_el + max(result.xi_b, 0.0)
    sd_t = 2.0 * math.sqrt(max(result.t_hat, 0.0) * sigma_sq
                           / (result.eta * result.v_a * result.m))
    sd_xib = sigma_sq / math.sqrt(result.m)
    return WorstCaseBounds(t_w=result.t_hat - z * sd_t,
                           xi_b_w=result.xi_b + z * sd_xib,
                           epsilon=epsilon)
