"""Truncated-boundary shooting for the extended Blasius problems.

Independent of the collocation code: the third-order equations are
integrated directly in ``eta`` with fixed-step RK4 from
``(f, f', f'')(0) = (0, 0, s)`` and ``s`` is adjusted until
``f'(eta_inf) = 1``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .problems import Family, ParameterDomainError

__all__ = [
    "ShootingConfig",
    "OracleError",
    "DivergentShot",
    "BracketFailure",
    "shoot",
    "solve_truncated",
]

BLOWUP = 1e6
BISECTION_WIDTH = 1e-4


class OracleError(Exception):
    pass


class DivergentShot(OracleError):
    def __init__(self, s: float, eta: float):
        self.s = s
        self.eta = eta
        super().__init__(f"divergent shot: s = {s!r} blew up at eta = {eta:.6g}")

    def __reduce__(self):
        return (type(self), (self.s, self.eta))


class BracketFailure(OracleError):
    pass


@dataclass(frozen=True)
class ShootingConfig:
    eta_infinity: float = 10.0
    rk4_steps: int = 20000
    bracket: tuple[float, float] = (0.05, 1.5)
    secant_tol: float = 1e-12

    def __post_init__(self):
        lo, hi = self.bracket
        if not self.eta_infinity > 0:
            raise ValueError("eta_infinity must be positive")
        if self.rk4_steps < 100:
            raise ValueError("rk4_steps must be at least 100")
        if not lo < hi:
            raise ValueError("bracket must satisfy lo < hi")
        if not self.secant_tol > 0:
            raise ValueError("secant_tol must be positive")


def _system(family: Family, P: float):
    """Return ``(curvature, flux_rate, to_flux)`` for the integrated state.

    The third state is the viscous flux ``w``: ``f''`` itself for problem 1
    and ``|f''|^(P-1) f''`` for problem 2, whose equation is integrated in
    its original conservative form ``w' = -f f'' / (P + 1)``.
    """
    if family is Family.PROBLEM1:
        expo = 2.0 - P

        def curvature(w):
            return w

        def flux_rate(f, w):
            return -0.5 * f * max(w, 0.0) ** expo

        def to_flux(s):
            return s

    else:
        inv = 1.0 / P

        def curvature(w):
            return math.copysign(abs(w) ** inv, w)

        def flux_rate(f, w):
            return -f * curvature(w) / (P + 1.0)

        def to_flux(s):
            return math.copysign(abs(s) ** P, s)

    return curvature, flux_rate, to_flux


def _check_parameters(family: Family, P: float):
    if family is Family.PROBLEM1 and not 1.0 <= P < 2.0:
        raise ParameterDomainError(f"problem 1 requires 1 <= P < 2, got P = {P}")
    if family is Family.PROBLEM2 and not P > 0.0:
        raise ParameterDomainError(f"problem 2 requires P > 0, got P = {P}")


def shoot(family, P: float, s: float, cfg: ShootingConfig = ShootingConfig()) -> float:
    """Return ``f'(eta_inf) - 1`` for the initial curvature ``f''(0) = s``."""
    family = Family(family)
    _check_parameters(family, P)
    curvature, flux_rate, to_flux = _system(family, P)
    h = cfg.eta_infinity / cfg.rk4_steps
    f, fp, w = 0.0, 0.0, to_flux(float(s))

    def deriv(f, fp, w):
        return fp, curvature(w), flux_rate(f, w)

    for i in range(cfg.rk4_steps):
        k1 = deriv(f, fp, w)
        k2 = deriv(f + 0.5 * h * k1[0], fp + 0.5 * h * k1[1], w + 0.5 * h * k1[2])
        k3 = deriv(f + 0.5 * h * k2[0], fp + 0.5 * h * k2[1], w + 0.5 * h * k2[2])
        k4 = deriv(f + h * k3[0], fp + h * k3[1], w + h * k3[2])
        f += h / 6.0 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
        fp += h / 6.0 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
        w += h / 6.0 * (k1[2] + 2 * k2[2] + 2 * k3[2] + k4[2])
        if w < 0.0 and s > 0.0:
            # compact-support profiles reach f'' = 0 at finite eta; only the
            # f'' >= 0 branch is physical, and it stays at zero from there
            w = 0.0
        if not (abs(fp) <= BLOWUP and abs(curvature(w)) <= BLOWUP):
            raise DivergentShot(s, (i + 1) * h)
    return fp - 1.0


def solve_truncated(family, P: float, cfg: ShootingConfig = ShootingConfig()) -> float:
    """Missing initial condition ``f''(0)`` with ``f'(eta_inf) = 1`` imposed.

    Bisection narrows the bracket to width 1e-4, then a safeguarded secant
    iteration (kept inside the current bracket) converges to ``secant_tol``.
    """
    lo, hi = cfg.bracket
    g_lo, g_hi = shoot(family, P, lo, cfg), shoot(family, P, hi, cfg)
    if g_lo == 0.0:
        return lo
    if g_hi == 0.0:
        return hi
    if (g_lo > 0) == (g_hi > 0):
        raise BracketFailure(
            f"no sign change on [{lo}, {hi}]: shoot = {g_lo:.3e}, {g_hi:.3e}"
        )

    while hi - lo > BISECTION_WIDTH:
        mid = 0.5 * (lo + hi)
        g_mid = shoot(family, P, mid, cfg)
        if g_mid == 0.0:
            return mid
        if (g_mid > 0) == (g_lo > 0):
            lo, g_lo = mid, g_mid
        else:
            hi, g_hi = mid, g_mid

    a, ga, b, gb = lo, g_lo, hi, g_hi
    for _ in range(100):
        s = b - gb * (b - a) / (gb - ga)
        if not lo < s < hi:
            s = 0.5 * (lo + hi)
        g = shoot(family, P, s, cfg)
        if (g > 0) == (g_lo > 0):
            lo, g_lo = s, g
        else:
            hi, g_hi = s, g
        if abs(s - b) <= cfg.secant_tol or g == 0.0:
            return s
        a, ga, b, gb = b, gb, s, g
    raise OracleError("secant refinement did not converge")
