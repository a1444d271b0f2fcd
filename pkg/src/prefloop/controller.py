"""Dueling-feedback input update and the closed-loop / baseline runners.

Each step applies a perturbed input u_k + delta*v_k with v_k uniform on the
unit sphere, asks the oracle to compare the new operating point against the
previous one, and moves the nominal input by exactly eta/(2*delta) along
the signed exploration direction. The first step only primes the stored
evaluation; no update is applied for it.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .plant import LyapunovCertificate, PlantModel, lyapunov_value, steady_state_map
from .preference import LinkFunction, PreferenceOracle, ReducedUtility

__all__ = [
    "ControllerConfig",
    "ControllerState",
    "TrajectoryRecord",
    "sample_unit_sphere",
    "dueling_update",
    "run_closed_loop",
    "run_algebraic_variant",
    "run_ideal_p_descent",
]


@dataclass(frozen=True)
class ControllerConfig:
    """Step size eta, exploration radius delta, horizon, and initial input."""

    eta: float
    delta: float
    horizon: int
    u0: np.ndarray
    u_box: tuple[np.ndarray, np.ndarray] | None = None  # optional safety clamp on u

    def __post_init__(self):
        object.__setattr__(self, "u0", np.asarray(self.u0, dtype=float).reshape(-1))
        if self.eta <= 0:
            raise ValueError(f"eta must be positive, got {self.eta}")
        if self.delta <= 0:
            raise ValueError(f"delta must be positive, got {self.delta}")
        if self.horizon < 1:
            raise ValueError(f"horizon must be >= 1, got {self.horizon}")
        if self.u_box is not None:
            lo = np.asarray(self.u_box[0], dtype=float).reshape(-1)
            hi = np.asarray(self.u_box[1], dtype=float).reshape(-1)
            if lo.shape != self.u0.shape or hi.shape != self.u0.shape:
                raise ValueError("u_box bounds must match the input dimension")
            if np.any(lo > hi):
                raise ValueError("u_box lower bound exceeds upper bound")
            object.__setattr__(self, "u_box", (lo, hi))

    @property
    def gain(self) -> float:
        """Per-step update magnitude eta / (2 delta)."""
        return self.eta / (2.0 * self.delta)


@dataclass
class ControllerState:
    """Current nominal input, exploration direction, and stored evaluation."""

    u: np.ndarray
    v: np.ndarray
    prev_eval: float | None = None
    k: int = 0

    def __post_init__(self):
        self.u = np.asarray(self.u, dtype=float).reshape(-1)
        self.v = np.asarray(self.v, dtype=float).reshape(-1)
        if abs(np.linalg.norm(self.v) - 1.0) > 1e-12:
            raise ValueError(f"v must be a unit vector, got norm {np.linalg.norm(self.v)}")
        if self.prev_eval is None and self.k != 0:
            raise ValueError("prev_eval may be empty only at k = 0")


def sample_unit_sphere(n: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform draw from the (n-1)-sphere via Gaussian normalization."""
    if n < 1:
        raise ValueError(f"dimension must be >= 1, got {n}")
    while True:
        g = rng.standard_normal(n)
        norm = np.linalg.norm(g)
        if norm > 1e-12:  # astronomically rare rejection
            return g / norm


def dueling_update(state: ControllerState, feedback: int,
                   config: ControllerConfig) -> np.ndarray:
    """u_{k+1} = u_k + (eta / 2 delta) * feedback * v_k."""
    if feedback not in (1, -1):
        raise ValueError(f"feedback must be +1 or -1, got {feedback!r}")
    return state.u + config.gain * float(feedback) * state.v


@dataclass
class TrajectoryRecord:
    """Per-step closed-loop log; row k holds the post-step state x_{k+1},
    the nominal input u_k used at that step, and the exploration v_k.

    `feedback` is NaN exactly on the priming row. `lyapunov` is
    V(x_k, u_k + delta v_k), i.e. evaluated at the pre-step state, matching
    the stability indicator of the expected-V bound.
    """

    k: np.ndarray
    x: np.ndarray
    u: np.ndarray
    v: np.ndarray
    feedback: np.ndarray
    utility: np.ndarray
    lyapunov: np.ndarray
    dist_to_opt: np.ndarray
    metadata: dict = field(default_factory=dict)
    x_nominal: np.ndarray | None = None  # unperturbed trajectory, not serialized
    clamped: np.ndarray | None = None
    error_mark: str | None = None

    def __len__(self) -> int:
        return len(self.k)

    @property
    def n_x(self) -> int:
        return self.x.shape[1]

    @property
    def n_u(self) -> int:
        return self.u.shape[1]

    def columns(self) -> list[str]:
        return (
            ["k"]
            + [f"x_{i}" for i in range(self.n_x)]
            + [f"u_{i}" for i in range(self.n_u)]
            + [f"v_{i}" for i in range(self.n_u)]
            + ["feedback", "utility", "lyapunov", "dist_to_opt"]
        )

    def to_csv(self, path) -> None:
        """Write the trajectory CSV plus a .meta.json sidecar."""
        path = Path(path)

        def cell(value: float) -> str:
            return "" if math.isnan(value) else repr(value)

        with open(path, "w") as fh:
            fh.write(",".join(self.columns()) + "\n")
            for i in range(len(self)):
                row = [str(int(self.k[i]))]
                row += [repr(float(val)) for val in self.x[i]]
                row += [repr(float(val)) for val in self.u[i]]
                row += [repr(float(val)) for val in self.v[i]]
                fb = self.feedback[i]
                row.append("" if math.isnan(fb) else str(int(fb)))
                row.append(repr(float(self.utility[i])))
                row.append(cell(float(self.lyapunov[i])))
                row.append(cell(float(self.dist_to_opt[i])))
                fh.write(",".join(row) + "\n")
        sidecar = dict(self.metadata)
        if self.error_mark:
            sidecar["error_mark"] = self.error_mark
        with open(path.with_suffix(".meta.json"), "w") as fh:
            json.dump(sidecar, fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def from_csv(cls, path) -> "TrajectoryRecord":
        path = Path(path)
        with open(path) as fh:
            header = fh.readline().strip().split(",")
            rows = [line.rstrip("\n").split(",") for line in fh if line.strip()]
        n_x = sum(c.startswith("x_") for c in header)
        n_u = sum(c.startswith("u_") for c in header)
        T = len(rows)
        out = cls(
            k=np.array([int(r[0]) for r in rows]),
            x=np.array([[float(v) for v in r[1 : 1 + n_x]] for r in rows]),
            u=np.array([[float(v) for v in r[1 + n_x : 1 + n_x + n_u]] for r in rows]),
            v=np.array([[float(v) for v in r[1 + n_x + n_u : 1 + n_x + 2 * n_u]] for r in rows]),
            feedback=np.array(
                [float(r[1 + n_x + 2 * n_u]) if r[1 + n_x + 2 * n_u] else np.nan for r in rows]
            ),
            utility=np.array([float(r[2 + n_x + 2 * n_u]) for r in rows]),
            lyapunov=np.array(
                [float(r[3 + n_x + 2 * n_u]) if r[3 + n_x + 2 * n_u] else np.nan for r in rows]
            ),
            dist_to_opt=np.array(
                [float(r[4 + n_x + 2 * n_u]) if r[4 + n_x + 2 * n_u] else np.nan for r in rows]
            ),
        )
        meta_path = path.with_suffix(".meta.json")
        if meta_path.exists():
            with open(meta_path) as fh:
                out.metadata = json.load(fh)
        assert len(out) == T
        return out


def _alloc(T: int, n_x: int, n_u: int) -> TrajectoryRecord:
    return TrajectoryRecord(
        k=np.arange(T),
        x=np.empty((T, n_x)),
        u=np.empty((T, n_u)),
        v=np.empty((T, n_u)),
        feedback=np.full(T, np.nan),
        utility=np.empty(T),
        lyapunov=np.full(T, np.nan),
        dist_to_opt=np.full(T, np.nan),
        x_nominal=np.empty((T, n_x)),
        clamped=np.zeros(T, dtype=bool),
    )


def _clamp(u: np.ndarray, config: ControllerConfig) -> tuple[np.ndarray, bool]:
    if config.u_box is None:
        return u, False
    lo, hi = config.u_box
    clamped = np.clip(u, lo, hi)
    return clamped, bool(np.any(clamped != u))


def _run_loop(plant: PlantModel, oracle: PreferenceOracle, config: ControllerConfig,
              x0: np.ndarray | None, rng, algebraic: bool,
              cert: LyapunovCertificate | None, u_star: np.ndarray | None,
              ) -> TrajectoryRecord:
    if isinstance(rng, (int, np.integer)) or rng is None:
        rng = np.random.default_rng(rng)
    T = config.horizon
    u = config.u0.copy()
    if u.shape[0] != plant.n_u:
        raise ValueError(f"u0 has dimension {u.shape[0]}, expected n_u = {plant.n_u}")
    x = steady_state_map(plant, u) if x0 is None else np.asarray(x0, dtype=float).reshape(-1)
    if x.shape[0] != plant.n_x:
        raise ValueError(f"x0 has dimension {x.shape[0]}, expected n_x = {plant.n_x}")

    rec = _alloc(T, plant.n_x, plant.n_u)
    x_nom = x.copy()

    def advance(x_cur, applied):
        if algebraic:
            return steady_state_map(plant, applied)
        return plant.A @ x_cur + plant.B @ applied

    # priming step: apply u0 + delta v0, store its evaluation, no update
    v = sample_unit_sphere(plant.n_u, rng)
    applied = u + config.delta * v
    if cert is not None:
        rec.lyapunov[0] = lyapunov_value(cert, plant, x, applied)
    x_new = advance(x, applied)
    prev_eval = oracle.evaluate(x_new, applied)
    x_nom = steady_state_map(plant, u) if algebraic else plant.A @ x_nom + plant.B @ u
    rec.x[0], rec.u[0], rec.v[0] = x_new, u, v
    rec.utility[0] = prev_eval
    rec.x_nominal[0] = x_nom
    if u_star is not None:
        rec.dist_to_opt[0] = np.linalg.norm(u - u_star)
    x = x_new

    state = ControllerState(u=u, v=v, prev_eval=prev_eval, k=0)
    for k in range(1, T):
        v = sample_unit_sphere(plant.n_u, rng)
        applied = state.u + config.delta * v
        if cert is not None:
            rec.lyapunov[k] = lyapunov_value(cert, plant, x, applied)
        x_new = advance(x, applied)
        try:
            cur_eval = oracle.evaluate(x_new, applied)
            fb = oracle.sample(phi_first=cur_eval, phi_second=state.prev_eval)
        except Exception as exc:
            rec.error_mark = f"oracle failure at step {k}: {exc}"
            rec = _truncate(rec, k)
            return rec
        state_k = ControllerState(u=state.u, v=v, prev_eval=state.prev_eval, k=k)
        u_next = dueling_update(state_k, fb, config)
        u_next, was_clamped = _clamp(u_next, config)
        x_nom = steady_state_map(plant, state.u) if algebraic \
            else plant.A @ x_nom + plant.B @ state.u
        rec.x[k], rec.u[k], rec.v[k] = x_new, state.u, v
        rec.feedback[k] = fb
        rec.utility[k] = cur_eval
        rec.x_nominal[k] = x_nom
        rec.clamped[k] = was_clamped
        if u_star is not None:
            rec.dist_to_opt[k] = np.linalg.norm(state.u - u_star)
        state = ControllerState(u=u_next, v=v, prev_eval=cur_eval, k=k)
        x = x_new
    return rec


def _truncate(rec: TrajectoryRecord, upto: int) -> TrajectoryRecord:
    for name in ("k", "x", "u", "v", "feedback", "utility", "lyapunov",
                 "dist_to_opt", "x_nominal", "clamped"):
        arr = getattr(rec, name)
        if arr is not None:
            setattr(rec, name, arr[:upto])
    return rec


def run_closed_loop(plant: PlantModel, oracle: PreferenceOracle,
                    config: ControllerConfig, x0: np.ndarray | None = None,
                    rng=None, cert: LyapunovCertificate | None = None,
                    u_star: np.ndarray | None = None) -> TrajectoryRecord:
    """Run the transient-coupled closed loop; x0 defaults to h(u0)."""
    return _run_loop(plant, oracle, config, x0, rng, False, cert, u_star)


def run_algebraic_variant(plant: PlantModel, oracle: PreferenceOracle,
                          config: ControllerConfig, rng=None,
                          cert: LyapunovCertificate | None = None,
                          u_star: np.ndarray | None = None) -> TrajectoryRecord:
    """Transient-free baseline: utilities evaluated at exact steady state."""
    return _run_loop(plant, oracle, config, None, rng, True, cert, u_star)


def run_ideal_p_descent(reduced: ReducedUtility, link: LinkFunction, eta: float,
                        u0: np.ndarray, T: int) -> TrajectoryRecord:
    """Deterministic descent on the preference probability:
    u_{k+1} = u_k - eta * sigma'(0) * grad Phi~(u_k)."""
    if not reduced.gradient_available:
        raise ValueError("ideal descent requires an analytic gradient")
    u = np.asarray(u0, dtype=float).reshape(-1)
    plant = reduced.plant
    rec = _alloc(T, plant.n_x, plant.n_u)
    rec.v[:] = 0.0
    try:
        u_star = reduced.minimizer()
    except (ValueError, np.linalg.LinAlgError):
        u_star = None
    s0 = link.deriv_at_zero
    for k in range(T):
        rec.x[k] = steady_state_map(plant, u)
        rec.x_nominal[k] = rec.x[k]
        rec.u[k] = u
        rec.utility[k] = reduced.value(u)
        if u_star is not None:
            rec.dist_to_opt[k] = np.linalg.norm(u - u_star)
        u = u - eta * s0 * reduced.grad(u)
    rec.metadata["variant"] = "ideal-p-descent"
    return rec
