"""Discrete-time LTI plant models with exact steady-state maps and Lyapunov machinery.

The plant is x_{k+1} = A x_k + B u_k with spectral radius of A strictly
below one, so the steady-state input-state map h(u) = (I - A)^{-1} B u is
well defined and L_h-Lipschitz with L_h = ||(I - A)^{-1} B||_2.

Stability certificates are quadratic: V(x, u) = (x - h(u))' P (x - h(u))
with P solving the discrete Lyapunov equation A' P A - P = -Q.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "PlantModel",
    "PlantState",
    "LyapunovCertificate",
    "PlantDefinitionError",
    "plant_step",
    "steady_state_map",
    "lipschitz_constant_of_h",
    "compute_lyapunov_certificate",
    "lyapunov_value",
    "load_plant",
]


class PlantDefinitionError(ValueError):
    """Raised when a plant definition violates the stability invariants."""


def _as_matrix(value, name: str) -> np.ndarray:
    m = np.asarray(value, dtype=float)
    if m.ndim != 2:
        raise PlantDefinitionError(f"{name} must be a 2-D matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise PlantDefinitionError(f"{name} contains non-finite entries")
    return m


@dataclass(frozen=True)
class PlantModel:
    """Stable discrete-time LTI plant (A, B)."""

    A: np.ndarray
    B: np.ndarray

    def __post_init__(self):
        A = _as_matrix(self.A, "A")
        B = _as_matrix(self.B, "B")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        if A.shape[0] != A.shape[1]:
            raise PlantDefinitionError(f"A must be square, got shape {A.shape}")
        if B.shape[0] != A.shape[0]:
            raise PlantDefinitionError(
                f"B has {B.shape[0]} rows but A is {A.shape[0]}x{A.shape[1]}"
            )
        rho = self.spectral_radius
        if rho >= 1.0:
            raise PlantDefinitionError(
                f"A must have spectral radius < 1 (pre-stabilized plant), got {rho:.6g}"
            )

    @property
    def n_x(self) -> int:
        return self.A.shape[0]

    @property
    def n_u(self) -> int:
        return self.B.shape[1]

    @property
    def spectral_radius(self) -> float:
        return float(np.max(np.abs(np.linalg.eigvals(self.A))))


@dataclass(frozen=True)
class PlantState:
    """Plant state x at time-step index k."""

    x: np.ndarray
    k: int = 0

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float).reshape(-1)
        object.__setattr__(self, "x", x)
        if self.k < 0:
            raise ValueError(f"time-step index must be nonnegative, got {self.k}")


@dataclass(frozen=True)
class LyapunovCertificate:
    """P-matrix certificate with the derived decay/offset constants.

    mu = (2 alpha2 / alpha1) (1 - alpha3 / alpha2) is the expected-V decay
    rate of the closed loop; the certificate is still returned when mu >= 1
    but flagged non-contractive (the downstream bounds are then vacuous).
    """

    P: np.ndarray
    Q: np.ndarray
    alpha1: float
    alpha2: float
    alpha3: float
    mu: float
    a1: float
    L_h: float

    @property
    def contractive(self) -> bool:
        return self.mu < 1.0


def _check_input(model: PlantModel, u, name: str = "input") -> np.ndarray:
    u = np.asarray(u, dtype=float).reshape(-1)
    if u.shape[0] != model.n_u:
        raise ValueError(
            f"{name} has dimension {u.shape[0]}, expected n_u = {model.n_u}"
        )
    return u


def plant_step(model: PlantModel, state: PlantState, input: np.ndarray) -> PlantState:
    """Advance the plant one step: x' = A x + B u."""
    u = _check_input(model, input)
    if state.x.shape[0] != model.n_x:
        raise ValueError(
            f"state has dimension {state.x.shape[0]}, expected n_x = {model.n_x}"
        )
    return PlantState(x=model.A @ state.x + model.B @ u, k=state.k + 1)


def steady_state_map(model: PlantModel, u: np.ndarray) -> np.ndarray:
    """h(u) = (I - A)^{-1} B u, the unique fixed point under constant input u."""
    u = _check_input(model, u)
    I = np.eye(model.n_x)
    try:
        return np.linalg.solve(I - model.A, model.B @ u)
    except np.linalg.LinAlgError as exc:  # unreachable for a valid model
        raise PlantDefinitionError(f"(I - A) is singular: {exc}") from exc


def lipschitz_constant_of_h(model: PlantModel) -> float:
    """Exact Lipschitz constant of h for LTI plants: ||(I - A)^{-1} B||_2."""
    H = np.linalg.solve(np.eye(model.n_x) - model.A, model.B)
    return float(np.linalg.norm(H, 2))


def compute_lyapunov_certificate(
    model: PlantModel,
    Q: np.ndarray | None = None,
    L_h: float | None = None,
    tail_tol: float = 1e-12,
    max_terms: int = 200_000,
) -> LyapunovCertificate:
    """Solve A' P A - P = -Q by the matrix series P = sum_k (A')^k Q A^k.

    The series is truncated once the running term stays below `tail_tol`;
    the residual of the Lyapunov equation is then checked to 1e-10.
    """
    if Q is None:
        Q = np.eye(model.n_x)
    Q = _as_matrix(Q, "Q")
    if Q.shape != (model.n_x, model.n_x):
        raise ValueError(f"Q has shape {Q.shape}, expected {(model.n_x, model.n_x)}")
    if not np.allclose(Q, Q.T, atol=1e-12):
        raise ValueError("Q must be symmetric")
    eig_q = np.linalg.eigvalsh(Q)
    if eig_q[0] <= 0:
        raise ValueError(f"Q must be positive definite, smallest eigenvalue {eig_q[0]:.6g}")

    A = model.A
    P = Q.copy()
    term = Q.copy()
    for _ in range(max_terms):
        term = A.T @ term @ A
        P += term
        if np.linalg.norm(term, "fro") < tail_tol:
            break
    else:
        raise RuntimeError("Lyapunov series did not converge (A too close to unit circle?)")
    P = 0.5 * (P + P.T)

    residual = np.linalg.norm(A.T @ P @ A - P + Q, "fro")
    if residual > 1e-10:
        raise RuntimeError(f"Lyapunov residual {residual:.3g} exceeds tolerance 1e-10")

    eig_p = np.linalg.eigvalsh(P)
    alpha1, alpha2 = float(eig_p[0]), float(eig_p[-1])
    alpha3 = float(eig_q[0])
    mu = (2.0 * alpha2 / alpha1) * (1.0 - alpha3 / alpha2)
    if L_h is None:
        L_h = lipschitz_constant_of_h(model)
    a1 = 4.0 * alpha2 * L_h**2
    return LyapunovCertificate(
        P=P, Q=Q, alpha1=alpha1, alpha2=alpha2, alpha3=alpha3,
        mu=mu, a1=a1, L_h=float(L_h),
    )


def lyapunov_value(
    cert: LyapunovCertificate, model: PlantModel, x: np.ndarray, u: np.ndarray
) -> float:
    """V(x, u) = (x - h(u))' P (x - h(u))."""
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.shape[0] != model.n_x:
        raise ValueError(f"x has dimension {x.shape[0]}, expected n_x = {model.n_x}")
    if cert.P.shape[0] != model.n_x:
        raise ValueError("certificate dimension does not match model")
    d = x - steady_state_map(model, u)
    return float(d @ cert.P @ d)


def load_plant(source) -> tuple[PlantModel, np.ndarray | None]:
    """Load a plant from a JSON file path or an already-parsed dict.

    Expected fields: `A` (row-major nested arrays), `B`, optional `Q`.
    Returns (model, Q) where Q is None when absent.
    """
    if isinstance(source, dict):
        doc = source
        where = "<dict>"
    else:
        where = str(source)
        with open(source) as fh:
            doc = json.load(fh)
    for key in ("A", "B"):
        if key not in doc:
            raise PlantDefinitionError(f"{where}: missing required field '{key}'")
    try:
        model = PlantModel(A=np.asarray(doc["A"], dtype=float),
                           B=np.asarray(doc["B"], dtype=float))
    except PlantDefinitionError as exc:
        raise PlantDefinitionError(f"{where}: {exc}") from exc
    except (TypeError, ValueError) as exc:
        raise PlantDefinitionError(f"{where}: malformed matrix field: {exc}") from exc
    Q = None
    if doc.get("Q") is not None:
        Q = np.asarray(doc["Q"], dtype=float)
        if Q.shape != (model.n_x, model.n_x):
            raise PlantDefinitionError(
                f"{where}: field 'Q' has shape {Q.shape}, expected {(model.n_x, model.n_x)}"
            )
    return model, Q
