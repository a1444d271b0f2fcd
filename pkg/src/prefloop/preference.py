"""Latent utilities, link functions, and the pairwise comparison oracle.

Feedback is encoded as {+1, -1}: +1 means the first alternative is
preferred, and P(+1) = sigma(Phi(second) - Phi(first)) for a monotone,
rotation-symmetric link sigma. The noise-free limit replaces sigma by the
step function (ties broken by a fair coin).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit, ndtr

from .comfort import DEFAULT_ENVIRONMENT, PmvEnvironment, pmv, ppd
from .plant import PlantModel, steady_state_map

__all__ = [
    "LatentUtility",
    "QuadraticTracking",
    "PpdComfort",
    "CustomBlackbox",
    "ReducedUtility",
    "LinkFunction",
    "PreferenceOracle",
    "evaluate_utility",
    "evaluate_reduced",
    "link_eval",
    "sample_preference",
]


class LatentUtility:
    """Deterministic scalar utility Phi(x, u); lower is better."""

    kind: str = "custom-blackbox"
    gradient_available: bool = False

    def value(self, x: np.ndarray, u: np.ndarray) -> float:
        raise NotImplementedError


@dataclass(frozen=True)
class QuadraticTracking(LatentUtility):
    """Phi(x, u) = (x - x_ref)' (x - x_ref)."""

    x_ref: np.ndarray

    kind = "quadratic-tracking"
    gradient_available = True

    def __post_init__(self):
        object.__setattr__(self, "x_ref", np.asarray(self.x_ref, dtype=float).reshape(-1))

    def value(self, x: np.ndarray, u: np.ndarray) -> float:
        x = np.asarray(x, dtype=float).reshape(-1)
        if x.shape != self.x_ref.shape:
            raise ValueError(f"x has shape {x.shape}, expected {self.x_ref.shape}")
        d = x - self.x_ref
        return float(d @ d)

    def grad_x(self, x: np.ndarray) -> np.ndarray:
        return 2.0 * (np.asarray(x, dtype=float).reshape(-1) - self.x_ref)


@dataclass(frozen=True)
class PpdComfort(LatentUtility):
    """Phi(x, u) = PPD(PMV(T_air)) with T_air = x[state_index] in degC."""

    env: PmvEnvironment = DEFAULT_ENVIRONMENT
    state_index: int = 0

    kind = "ppd-comfort"
    gradient_available = False

    def value(self, x: np.ndarray, u: np.ndarray) -> float:
        x = np.asarray(x, dtype=float).reshape(-1)
        return ppd(pmv(self.env, x[self.state_index]))


@dataclass(frozen=True)
class CustomBlackbox(LatentUtility):
    """Wraps an arbitrary callable Phi(x, u) -> float."""

    fn: object

    kind = "custom-blackbox"
    gradient_available = False

    def value(self, x: np.ndarray, u: np.ndarray) -> float:
        return float(self.fn(x, u))


def evaluate_utility(utility: LatentUtility, x: np.ndarray, input: np.ndarray) -> float:
    return utility.value(x, input)


@dataclass(frozen=True)
class ReducedUtility:
    """Phi~(u) = Phi(h(u), u), the steady-state reduction of the utility."""

    utility: LatentUtility
    plant: PlantModel

    def value(self, u: np.ndarray) -> float:
        return self.utility.value(steady_state_map(self.plant, u), u)

    @property
    def gradient_available(self) -> bool:
        return self.utility.gradient_available

    @property
    def H(self) -> np.ndarray:
        return np.linalg.solve(np.eye(self.plant.n_x) - self.plant.A, self.plant.B)

    def grad(self, u: np.ndarray) -> np.ndarray:
        """2 H'(H u - x_ref) for the quadratic tracking utility."""
        if not isinstance(self.utility, QuadraticTracking):
            raise ValueError(f"analytic gradient unavailable for kind {self.utility.kind!r}")
        u = np.asarray(u, dtype=float).reshape(-1)
        H = self.H
        return 2.0 * H.T @ (H @ u - self.utility.x_ref)

    def hessian(self) -> np.ndarray:
        if not isinstance(self.utility, QuadraticTracking):
            raise ValueError(f"analytic Hessian unavailable for kind {self.utility.kind!r}")
        H = self.H
        return 2.0 * H.T @ H

    def minimizer(self) -> np.ndarray:
        """u* = H^{-1} x_ref, defined when H is square and invertible."""
        if not isinstance(self.utility, QuadraticTracking):
            raise ValueError(f"analytic minimizer unavailable for kind {self.utility.kind!r}")
        H = self.H
        if H.shape[0] != H.shape[1]:
            raise ValueError("minimizer needs a square steady-state map")
        return np.linalg.solve(H, self.utility.x_ref)


def evaluate_reduced(r: ReducedUtility, input: np.ndarray) -> float:
    return r.value(input)


@dataclass(frozen=True)
class LinkFunction:
    """Monotone link sigma mapping a utility difference to P(first preferred).

    L_sigma0 is the Lipschitz constant of sigma, L_sigma1 its smoothness
    constant; both are infinite for the noise-free sign link.
    """

    kind: str = "logistic"

    def __post_init__(self):
        if self.kind not in ("logistic", "probit", "sign"):
            raise ValueError(f"unknown link kind {self.kind!r}")

    @property
    def L_sigma0(self) -> float:
        return {"logistic": 0.25,
                "probit": 1.0 / math.sqrt(2.0 * math.pi),
                "sign": math.inf}[self.kind]

    @property
    def L_sigma1(self) -> float:
        # max |sigma''|: logistic at t = +-ln(2+sqrt 3); probit at t = +-1
        return {"logistic": 1.0 / (6.0 * math.sqrt(3.0)),
                "probit": math.exp(-0.5) / math.sqrt(2.0 * math.pi),
                "sign": math.inf}[self.kind]

    def __call__(self, t: float) -> float:
        if not np.all(np.isfinite(t)):
            raise ValueError(f"link argument must be finite, got {t}")
        if self.kind == "logistic":
            return expit(t)
        if self.kind == "probit":
            return ndtr(t)
        return np.where(t > 0, 1.0, np.where(t < 0, 0.0, 0.5)) + 0.0

    def deriv(self, t: float):
        if self.kind == "logistic":
            s = expit(t)
            return s * (1.0 - s)
        if self.kind == "probit":
            return np.exp(-0.5 * np.asarray(t) ** 2) / math.sqrt(2.0 * math.pi)
        raise ValueError("sign link has no derivative")

    @property
    def deriv_at_zero(self) -> float:
        return {"logistic": 0.25,
                "probit": 1.0 / math.sqrt(2.0 * math.pi)}[self.kind]


def link_eval(link: LinkFunction, t: float) -> float:
    return float(link(t))


@dataclass
class PreferenceOracle:
    """Binary comparison sampler; owns its RNG stream (one oracle per replica)."""

    link: LinkFunction
    utility: LatentUtility
    seed: int = 0
    rng: np.random.Generator = field(init=False, repr=False)

    def __post_init__(self):
        self.rng = np.random.default_rng(self.seed)

    def evaluate(self, x: np.ndarray, u: np.ndarray) -> float:
        return self.utility.value(x, u)

    def sample(self, phi_first: float, phi_second: float,
               rng: np.random.Generator | None = None) -> int:
        return sample_preference(self, phi_first, phi_second, rng)


def sample_preference(oracle: PreferenceOracle, phi_first: float, phi_second: float,
                      rng: np.random.Generator | None = None) -> int:
    """Return +1 with probability sigma(phi_second - phi_first), else -1."""
    if not (math.isfinite(phi_first) and math.isfinite(phi_second)):
        raise ValueError(f"utilities must be finite, got {phi_first}, {phi_second}")
    r = oracle.rng if rng is None else rng
    p = float(oracle.link(phi_second - phi_first))
    return 1 if r.random() < p else -1
