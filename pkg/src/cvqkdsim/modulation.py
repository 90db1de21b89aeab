"""Symbol constellations: Gaussian, PSK, QAM, PCS-QAM and Binomial-QAM.

Symbols are complex with the two-quadrature variance convention: the variance
of a symbol set is ``mean(|z|^2)``, and a frame of declared variance ``v_a``
carries ``v_a / 2`` photons per symbol on average.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError


class ModulationKind(enum.Enum):
    GAUSSIAN = "gaussian"
    PSK = "psk"
    QAM = "qam"
    PCS_QAM = "pcs-qam"
    BINOMIAL_QAM = "binomial-qam"


_DISCRETE = (ModulationKind.PSK, ModulationKind.QAM,
             ModulationKind.PCS_QAM, ModulationKind.BINOMIAL_QAM)


@dataclass(frozen=True)
class ModulationScheme:
    """Constellation selector.

    Args:
        kind: constellation family.
        order: number of points (ignored for Gaussian; perfect square for
            QAM families, >= 2 for PSK).
        nu: probabilistic-shaping exponent, PCS-QAM only.
        variance: target variance of the generated symbols. The discrete
            point sets are scaled so the *ensemble* variance equals this
            parameter; the realized empirical variance of a finite draw is
            what downstream code uses.
    """

    kind: ModulationKind
    order: int = 4
    nu: float = 0.0
    variance: float = 1.0

    def __post_init__(self):
        if self.variance <= 0:
            raise ConfigError("modulation variance must be positive")
        if self.nu < 0:
            raise ConfigError("shaping parameter nu must be >= 0")
        if self.kind is ModulationKind.PSK and self.order < 2:
            raise ConfigError("PSK order must be >= 2")
        if self.kind in (ModulationKind.QAM, ModulationKind.PCS_QAM,
                         ModulationKind.BINOMIAL_QAM):
            root = math.isqrt(self.order)
            if root * root != self.order or self.order < 4:
                raise ConfigError(
                    f"QAM order must be a perfect square >= 4, got {self.order}")

    @classmethod
    def from_name(cls, name: str, order: int = 4, nu: float = 0.0,
                  variance: float = 1.0) -> "ModulationScheme":
        try:
            kind = ModulationKind(name.lower())
        except ValueError:
            raise ConfigError(f"unknown modulation kind {name!r}") from None
        return cls(kind, order=order, nu=nu, variance=variance)


@dataclass
class SymbolFrame:
    """A drawn sequence of complex symbols with its realized variance."""

    symbols: np.ndarray
    v_a: float
    seed: int
    scheme: ModulationScheme | None = field(default=None, repr=False)

    def __post_init__(self):
        if len(self.symbols) == 0:
            raise ConfigError("symbol frame must be non-empty")

    def __len__(self) -> int:
        return len(self.symbols)

    @property
    def n_mean(self) -> float:
        """Mean photon number per symbol implied by the frame variance."""
        return self.v_a / 2.0


def constellation_points(scheme: ModulationScheme) -> list[tuple[complex, float]]:
    """Points and probabilities of a discrete constellation.

    The point set is scaled so the ensemble variance sum(p * |z|^2) equals
    ``scheme.variance``.

    Raises:
        ConfigError: for Gaussian input or invalid orders.
    """
    if scheme.kind is ModulationKind.GAUSSIAN:
        raise ConfigError("Gaussian modulation has no discrete point set")
    m = scheme.order
    if scheme.kind is ModulationKind.PSK:
        angles = 2 * np.pi * np.arange(m) / m
        pts = np.exp(1j * angles)
        probs = np.full(m, 1.0 / m)
    else:
        root = math.isqrt(m)
        levels = 2 * np.arange(root) - (root - 1)
        re, im = np.meshgrid(levels, levels)
        pts = (re + 1j * im).ravel().astype(complex)
        if scheme.kind is ModulationKind.QAM:
            probs = np.full(m, 1.0 / m)
        elif scheme.kind is ModulationKind.PCS_QAM:
            w = np.exp(-scheme.nu * np.abs(pts) ** 2)
            probs = w / w.sum()
        else:  # Binomial-QAM: per-quadrature binomial weights over the levels
            k = np.arange(root)
            wq = np.array([math.comb(root - 1, int(i)) for i in k], dtype=float)
            wq /= wq.sum()
            probs = np.outer(wq, wq).ravel()
    energy = float(np.sum(probs * np.abs(pts) ** 2))
    pts = pts * math.sqrt(scheme.variance / energy)
    return list(zip(pts.tolist(), probs.tolist()))


def sample_constellation(scheme: ModulationScheme, n: int, seed: int) -> SymbolFrame:
    """Draw ``n`` symbols from the scheme; deterministic per seed.

    The returned frame records the empirical variance of the draw, which is
    the value downstream estimation treats as the modulation variance.
    """
    if n <= 0:
        raise ConfigError("sample count must be positive")
    rng = np.random.default_rng(seed)
    if scheme.kind is ModulationKind.GAUSSIAN:
        sigma = math.sqrt(scheme.variance / 2.0)
        sym = rng.normal(0.0, sigma, n) + 1j * rng.normal(0.0, sigma, n)
    else:
        pts_probs = constellation_points(scheme)
        pts = np.array([p for p, _ in pts_probs])
        probs = np.array([q for _, q in pts_probs])
        sym = pts[rng.choice(len(pts), size=n, p=probs)]
    return SymbolFrame(symbols=sym, v_a=empirical_variance(sym), seed=seed,
                       scheme=scheme)


def empirical_variance(symbols: np.ndarray) -> float:
    """Mean of |z|^2 over both quadratures."""
    symbols = np.asarray(symbols)
    if symbols.size == 0:
        raise ValueError("empty symbol set")
    return float(np.mean(np.abs(symbols) ** 2))
