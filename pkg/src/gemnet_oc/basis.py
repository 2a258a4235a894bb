"""Radial and angular basis expansions.

All functions take array-likes or tensors and return tensors in the default
dtype, so the same code serves the network (differentiable) and direct
evaluation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import torch
from scipy.optimize import brentq

from .errors import ConfigError, DomainError

RADIAL_KINDS = ("gaussian", "bessel0", "spherical_bessel")
ANGULAR_KINDS = ("legendre_product", "spherical_harmonics")
_DOMAIN_SLACK = 1e-9


def _as_tensor(x) -> torch.Tensor:
    if isinstance(x, torch.Tensor):
        return x
    return torch.as_tensor(np.asarray(x, dtype=np.float64), dtype=torch.get_default_dtype())


@dataclass(frozen=True)
class BasisConfig:
    radial_kind: str = "gaussian"
    n_radial: int = 128
    cutoff: float = 12.0
    envelope_exponent: int = 5
    angular_kind: str = "legendre_product"
    max_degree: int = 6

    def __post_init__(self):
        if self.radial_kind not in RADIAL_KINDS:
            raise ConfigError(f"radial_kind must be one of {RADIAL_KINDS}, got {self.radial_kind!r}")
        if self.angular_kind not in ANGULAR_KINDS:
            raise ConfigError(f"angular_kind must be one of {ANGULAR_KINDS}, got {self.angular_kind!r}")
        if self.n_radial < 1:
            raise ConfigError("n_radial must be >= 1")
        if not self.cutoff > 0:
            raise ConfigError("cutoff must be positive")
        if self.max_degree < 0:
            raise ConfigError("max_degree must be >= 0")

    @property
    def radial_size(self) -> int:
        if self.radial_kind == "spherical_bessel":
            return (self.max_degree + 1) * self.n_radial
        return self.n_radial

    def bessel_roots(self) -> np.ndarray:
        """Table ``z[l, n]`` of the first ``n_radial`` positive roots of ``j_l``."""
        return bessel_roots(self.max_degree, self.n_radial)


# --------------------------------------------------------------------------
# envelope and radial bases


def polynomial_envelope(d, cutoff: float, exponent: int = 5) -> torch.Tensor:
    """Smooth cutoff: 1 at d=0; value, slope and curvature vanish at ``cutoff``."""
    p = exponent
    x = _as_tensor(d) / cutoff
    a = -(p + 1) * (p + 2) / 2.0
    b = p * (p + 2.0)
    c = -p * (p + 1) / 2.0
    xp = x**p
    env = 1.0 + a * xp + b * xp * x + c * xp * x * x
    return torch.where(x < 1.0, env, torch.zeros_like(x))


def gaussian_rbf(d, n_radial: int, cutoff: float, exponent: int = 5) -> torch.Tensor:
    d = _as_tensor(d)
    centers = torch.linspace(0.0, cutoff, n_radial, dtype=d.dtype)
    width = cutoff / (n_radial - 1) if n_radial > 1 else cutoff
    diff = d.unsqueeze(-1) - centers
    return torch.exp(-0.5 * (diff / width) ** 2) * polynomial_envelope(d, cutoff, exponent).unsqueeze(-1)


def bessel0_basis(d, n_radial: int, cutoff: float, exponent: int = 5) -> torch.Tensor:
    d = _as_tensor(d)
    freq = torch.arange(1, n_radial + 1, dtype=d.dtype) * math.pi / cutoff
    norm = math.sqrt(2.0 / cutoff)
    small = d < 1e-8
    safe = torch.where(small, torch.ones_like(d), d).unsqueeze(-1)
    value = norm * torch.sin(freq * safe) / safe
    value = torch.where(small.unsqueeze(-1), norm * freq.expand_as(value), value)
    return value * polynomial_envelope(d, cutoff, exponent).unsqueeze(-1)


def _double_factorial(n: int) -> float:
    out = 1.0
    while n > 1:
        out *= n
        n -= 2
    return out


def spherical_jn(l: int, x) -> torch.Tensor:
    """Spherical Bessel function of the first kind.

    Upward recurrence where it is stable (x > l), ascending series below.
    """
    x = _as_tensor(x)
    if l == 0:
        small = x.abs() < 1e-8
        safe = torch.where(small, torch.ones_like(x), x)
        return torch.where(small, 1.0 - x * x / 6.0, torch.sin(safe) / safe)
    up = x > l
    xu = torch.where(up, x, torch.full_like(x, float(l + 1)))
    j_prev = torch.sin(xu) / xu
    j_cur = torch.sin(xu) / xu**2 - torch.cos(xu) / xu
    for order in range(1, l):
        j_prev, j_cur = j_cur, (2 * order + 1) / xu * j_cur - j_prev
    xs = torch.where(up, torch.zeros_like(x), x)
    term = torch.ones_like(xs)
    total = torch.ones_like(xs)
    half_sq = -0.5 * xs * xs
    for k in range(1, 40):
        term = term * half_sq / (k * (2 * l + 2 * k + 1))
        total = total + term
    series = xs**l / _double_factorial(2 * l + 1) * total
    return torch.where(up, j_cur, series)


@lru_cache(maxsize=None)
def _roots_cached(max_degree: int, n_roots: int, xtol: float) -> tuple:
    def f(l):
        return lambda x: float(spherical_jn(l, torch.tensor([x], dtype=torch.float64))[0])

    count = n_roots + max_degree
    brackets = [((k - 0.5) * math.pi, (k + 0.5) * math.pi) for k in range(1, count + 1)]
    prev = [brentq(f(0), lo, hi, xtol=xtol, rtol=4 * np.finfo(float).eps) for lo, hi in brackets]
    table = [prev[:n_roots]]
    for l in range(1, max_degree + 1):
        count -= 1
        cur = [brentq(f(l), prev[k], prev[k + 1], xtol=xtol, rtol=4 * np.finfo(float).eps) for k in range(count)]
        table.append(cur[:n_roots])
        prev = cur
    return tuple(tuple(row) for row in table)


def bessel_roots(max_degree: int, n_roots: int, xtol: float = 1e-13) -> np.ndarray:
    """First ``n_roots`` positive roots of ``j_l`` for ``l = 0..max_degree``.

    Found by bracketed root finding using the interlacing of consecutive orders.
    """
    return np.array(_roots_cached(max_degree, n_roots, xtol))


def spherical_bessel_multiorder(d, l: int, n: int, config: BasisConfig) -> torch.Tensor:
    """Normalized ``j_l(z_ln d / c)`` times the envelope (n is 1-based)."""
    if l > config.max_degree or not 1 <= n <= config.n_radial:
        raise ConfigError(f"no Bessel root tabulated for l={l}, n={n}")
    z = float(config.bessel_roots()[l, n - 1])
    c = config.cutoff
    norm = math.sqrt(2.0 / c**3) / abs(float(spherical_jn(l + 1, torch.tensor([z], dtype=torch.float64))[0]))
    d = _as_tensor(d)
    return norm * spherical_jn(l, z * d / c) * polynomial_envelope(d, c, config.envelope_exponent)


def spherical_bessel_basis(d, config: BasisConfig) -> torch.Tensor:
    cols = [
        spherical_bessel_multiorder(d, l, n, config)
        for l in range(config.max_degree + 1)
        for n in range(1, config.n_radial + 1)
    ]
    return torch.stack(cols, dim=-1)


def radial_basis(d, config: BasisConfig) -> torch.Tensor:
    if config.radial_kind == "gaussian":
        return gaussian_rbf(d, config.n_radial, config.cutoff, config.envelope_exponent)
    if config.radial_kind == "bessel0":
        return bessel0_basis(d, config.n_radial, config.cutoff, config.envelope_exponent)
    return spherical_bessel_basis(d, config)


# --------------------------------------------------------------------------
# angular bases


def _check_cosine(x) -> torch.Tensor:
    x = _as_tensor(x)
    if x.numel() and float(x.detach().abs().max()) > 1.0 + _DOMAIN_SLACK:
        raise DomainError("cosine argument outside [-1, 1]")
    return x.clamp(-1.0, 1.0)


def legendre(x, max_degree: int) -> torch.Tensor:
    """``P_0..P_L`` via the three-term recurrence, stacked on the last axis."""
    x = _check_cosine(x)
    out = [torch.ones_like(x)]
    if max_degree >= 1:
        out.append(x)
    for l in range(1, max_degree):
        out.append(((2 * l + 1) * x * out[l] - l * out[l - 1]) / (l + 1))
    return torch.stack(out, dim=-1)


def legendre_angular(cos_phi, cos_theta=None, max_degree: int = 6) -> torch.Tensor:
    """Legendre vector for a triplet angle, or the outer product for a quadruplet.

    With ``cos_theta`` the result has shape ``(..., L+1, L+1)`` holding
    ``P_l(cos_phi) * P_m(cos_theta)``.
    """
    p_phi = legendre(cos_phi, max_degree)
    if cos_theta is None:
        return p_phi
    p_theta = legendre(cos_theta, max_degree)
    return p_phi.unsqueeze(-1) * p_theta.unsqueeze(-2)


def _sh_norm(l: int, m: int) -> float:
    return math.sqrt((2 * l + 1) / (4 * math.pi) * math.factorial(l - m) / math.factorial(l + m))


def associated_legendre(x, sin_x, max_degree: int) -> dict:
    """``P_l^m`` (no Condon-Shortley phase) for ``0 <= m <= l <= L``."""
    table = {}
    for m in range(max_degree + 1):
        pmm = _double_factorial(2 * m - 1) * sin_x**m
        table[(m, m)] = pmm
        if m + 1 <= max_degree:
            table[(m + 1, m)] = x * (2 * m + 1) * pmm
        for l in range(m + 2, max_degree + 1):
            table[(l, m)] = ((2 * l - 1) * x * table[(l - 1, m)] - (l + m - 1) * table[(l - 2, m)]) / (l - m)
    return table


def spherical_harmonics(phi, theta, max_degree: int) -> torch.Tensor:
    """Real spherical harmonics ``Y_l^m(phi, theta)`` with polar angle ``phi``.

    Columns are ordered by ``l`` then ``m = -l..l``; there are ``(L+1)^2``.
    The ``m = 0`` column equals ``sqrt((2l+1)/(4 pi)) P_l(cos phi)``.
    """
    phi = _as_tensor(phi)
    theta = _as_tensor(theta)
    return spherical_harmonics_cs(torch.cos(phi), torch.sin(phi), torch.cos(theta), torch.sin(theta), max_degree)


def spherical_harmonics_cs(cos_phi, sin_phi, cos_theta, sin_theta, max_degree: int) -> torch.Tensor:
    """:func:`spherical_harmonics` from cosines and sines of the two angles."""
    x, s = _as_tensor(cos_phi), _as_tensor(sin_phi)
    c1, s1 = _as_tensor(cos_theta), _as_tensor(sin_theta)
    plm = associated_legendre(x, s, max_degree)
    cos_m = [torch.ones_like(c1), c1]
    sin_m = [torch.zeros_like(s1), s1]
    for m in range(2, max_degree + 1):
        cos_prev, sin_prev = cos_m[-1], sin_m[-1]
        cos_m.append(cos_prev * c1 - sin_prev * s1)
        sin_m.append(sin_prev * c1 + cos_prev * s1)
    cols = []
    for l in range(max_degree + 1):
        for m in range(-l, l + 1):
            if m == 0:
                cols.append(_sh_norm(l, 0) * plm[(l, 0)])
            elif m > 0:
                cols.append(math.sqrt(2.0) * _sh_norm(l, m) * plm[(l, m)] * cos_m[m])
            else:
                cols.append(math.sqrt(2.0) * _sh_norm(l, -m) * plm[(l, -m)] * sin_m[-m])
    return torch.stack(cols, dim=-1)


def zonal_norms(max_degree: int) -> torch.Tensor:
    """``sqrt((2l+1)/(4 pi))`` for ``l = 0..L``."""
    return torch.tensor([_sh_norm(l, 0) for l in range(max_degree + 1)])


def sh_zonal_columns(max_degree: int) -> list[int]:
    """Column indices of the ``m = 0`` harmonics in :func:`spherical_harmonics` output."""
    return [l * l + l for l in range(max_degree + 1)]
