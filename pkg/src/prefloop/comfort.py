"""Fanger PMV/PPD thermal comfort model (ISO 7730 formulation).

PMV is the predicted mean vote on the 7-point thermal sensation scale,
computed from air temperature, mean radiant temperature, air velocity,
relative humidity, metabolic rate, and clothing insulation. PPD maps PMV
to the predicted percentage of dissatisfied occupants:

    PPD = 100 - 95 * exp(-(0.03353 PMV^4 + 0.2179 PMV^2))

which is minimized at 5% for PMV = 0 and is an even function of PMV.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

__all__ = ["PmvEnvironment", "PmvConvergenceError", "pmv", "ppd", "DEFAULT_ENVIRONMENT"]


class PmvConvergenceError(RuntimeError):
    """Clothing-surface-temperature fixed point failed to converge."""


@dataclass(frozen=True)
class PmvEnvironment:
    """Non-temperature PMV inputs.

    met: metabolic rate [met]; clo: clothing insulation [clo];
    vel: air velocity [m/s]; rh: relative humidity [%];
    tr: mean radiant temperature [degC], None means "equals air temperature";
    wme: external work [met].
    """

    met: float = 1.1
    clo: float = 0.57
    vel: float = 0.1
    rh: float = 50.0
    tr: float | None = None
    wme: float = 0.0

    def __post_init__(self):
        if not 0.8 <= self.met <= 4.0:
            raise ValueError(f"met must be in [0.8, 4], got {self.met}")
        if not 0.0 <= self.clo <= 2.0:
            raise ValueError(f"clo must be in [0, 2], got {self.clo}")
        if not 0.0 <= self.rh <= 100.0:
            raise ValueError(f"rh must be in [0, 100], got {self.rh}")
        if self.vel < 0.0:
            raise ValueError(f"vel must be nonnegative, got {self.vel}")


#: Sedentary office occupant: typing, sweatpants + T-shirt (ASHRAE tables).
DEFAULT_ENVIRONMENT = PmvEnvironment()


def pmv(env: PmvEnvironment, air_temperature: float, max_iter: int = 150) -> float:
    """Predicted mean vote at the given air temperature [degC]."""
    ta = float(air_temperature)
    tr = ta if env.tr is None else env.tr

    pa = env.rh * 10.0 * math.exp(16.6536 - 4030.183 / (ta + 235.0))  # vapour pressure [Pa]
    icl = 0.155 * env.clo
    m = env.met * 58.15
    w = env.wme * 58.15
    mw = m - w
    fcl = 1.05 + 0.645 * icl if icl > 0.078 else 1.0 + 1.29 * icl
    hcf = 12.1 * math.sqrt(env.vel)
    taa = ta + 273.0
    tra = tr + 273.0

    # fixed point for the clothing surface temperature, ISO 7730 iteration
    tcla = taa + (35.5 - ta) / (3.5 * icl + 0.1)
    p1 = icl * fcl
    p2 = p1 * 3.96
    p3 = p1 * 100.0
    p4 = p1 * taa
    p5 = 308.7 - 0.028 * mw + p2 * (tra / 100.0) ** 4
    xn = tcla / 100.0
    xf = tcla / 50.0
    eps = 1e-6 * 15.0  # 0.000015 on xn ~ 0.0015 degC on tcl
    n = 0
    hc = hcf
    while abs(xn - xf) > eps:
        xf = (xf + xn) / 2.0
        hcn = 2.38 * abs(100.0 * xf - taa) ** 0.25
        hc = max(hcf, hcn)
        xn = (p5 + p4 * hc - p2 * xf**4) / (100.0 + p3 * hc)
        n += 1
        if n > max_iter:
            raise PmvConvergenceError(
                f"clothing temperature iteration did not converge in {max_iter} steps "
                f"(ta={ta}, env={env})"
            )
    tcl = 100.0 * xn - 273.0

    hl1 = 3.05e-3 * (5733.0 - 6.99 * mw - pa)          # skin diffusion
    hl2 = 0.42 * (mw - 58.15) if mw > 58.15 else 0.0   # sweating
    hl3 = 1.7e-5 * m * (5867.0 - pa)                   # latent respiration
    hl4 = 0.0014 * m * (34.0 - ta)                     # dry respiration
    hl5 = 3.96 * fcl * (xn**4 - (tra / 100.0) ** 4)    # radiation
    hl6 = fcl * hc * (tcl - ta)                        # convection

    ts = 0.303 * math.exp(-0.036 * m) + 0.028
    return ts * (mw - hl1 - hl2 - hl3 - hl4 - hl5 - hl6)


def ppd(pmv_value: float) -> float:
    """Predicted percentage of dissatisfied [%] for a given PMV."""
    v = float(pmv_value)
    if not math.isfinite(v):
        raise ValueError(f"PMV must be finite, got {v}")
    return 100.0 - 95.0 * math.exp(-(0.03353 * v**4 + 0.2179 * v**2))
