"""Experiment configuration, batch execution, and the built-in studies.

An experiment is R independent closed-loop replicas (seeds base..base+R-1)
over one plant/utility/link combination, with per-replica trajectory CSVs,
per-metric ensemble statistics, and a manifest tying the outputs to a hash
of the exact configuration. Outputs are byte-identical across reruns of the
same config and seed.
"""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .analysis import ensemble_stats
from .comfort import PmvEnvironment
from .controller import ControllerConfig, TrajectoryRecord, run_algebraic_variant, run_closed_loop
from .plant import PlantModel, compute_lyapunov_certificate, load_plant, steady_state_map
from .preference import (
    LatentUtility,
    LinkFunction,
    PpdComfort,
    PreferenceOracle,
    QuadraticTracking,
    ReducedUtility,
)

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "ExperimentResult",
    "builtin_configs",
    "run_experiment",
    "load_thermal_plant",
]

CONFIG_VERSION = 1

_VARIANTS = ("closed-loop", "algebraic")
_METRICS = ("relative-error", "dist-to-opt-squared", "lyapunov", "utility")


class ConfigError(ValueError):
    """Raised for any invalid experiment configuration (before any run)."""


def load_thermal_plant() -> tuple[PlantModel, dict]:
    """The packaged 13-node RC thermal surrogate (heating power -> temperatures)."""
    with resources.files("prefloop.data").joinpath("thermal_rc.json").open() as fh:
        doc = json.load(fh)
    model, _ = load_plant({"A": doc["A"], "B": doc["B"]})
    return model, doc


@dataclass(frozen=True)
class ExperimentConfig:
    """Validated, self-contained description of one experiment."""

    name: str
    plant: dict                      # inline A/B(/Q) or {"file": path} or {"data": name}
    utility: dict                    # {"kind": ..., parameters}
    links: tuple[str, ...]
    seed: int
    eta: float
    delta: float
    horizon: int
    u0: tuple[float, ...]
    replicas: int
    variant: str = "closed-loop"
    x0: tuple[float, ...] | None = None
    metrics: tuple[str, ...] = ("utility",)
    u_box: tuple[tuple[float, ...], tuple[float, ...]] | None = None

    def __post_init__(self):
        if self.replicas < 1:
            raise ConfigError(f"replicas must be >= 1, got {self.replicas}")
        if self.variant not in _VARIANTS:
            raise ConfigError(f"variant must be one of {_VARIANTS}, got {self.variant!r}")
        if self.eta <= 0 or self.delta <= 0:
            raise ConfigError(f"eta and delta must be positive, got {self.eta}, {self.delta}")
        if self.horizon < 1:
            raise ConfigError(f"horizon must be >= 1, got {self.horizon}")
        if not self.links:
            raise ConfigError("at least one link kind is required")
        for link in self.links:
            if link not in ("logistic", "probit", "sign"):
                raise ConfigError(f"unknown link kind {link!r}")
        for m in self.metrics:
            if m not in _METRICS:
                raise ConfigError(f"unknown metric {m!r}, expected one of {_METRICS}")
        # cross-dimension checks require the plant; build it now so no run starts
        # on an inconsistent config
        model = self.build_plant()
        if len(self.u0) != model.n_u:
            raise ConfigError(
                f"u0 has dimension {len(self.u0)}, plant expects n_u = {model.n_u}"
            )
        if self.x0 is not None and len(self.x0) != model.n_x:
            raise ConfigError(
                f"x0 has dimension {len(self.x0)}, plant expects n_x = {model.n_x}"
            )
        utility = self.build_utility()
        if isinstance(utility, QuadraticTracking) and utility.x_ref.shape[0] != model.n_x:
            raise ConfigError(
                f"x_ref has dimension {utility.x_ref.shape[0]}, plant expects n_x = {model.n_x}"
            )
        if isinstance(utility, PpdComfort) and not 0 <= utility.state_index < model.n_x:
            raise ConfigError(
                f"state_index {utility.state_index} out of range for n_x = {model.n_x}"
            )
        if self.u_box is not None and (
            len(self.u_box[0]) != model.n_u or len(self.u_box[1]) != model.n_u
        ):
            raise ConfigError("u_box bounds must match the input dimension")

    # -- construction of the live objects -----------------------------------

    def build_plant(self) -> PlantModel:
        try:
            if "data" in self.plant:
                model, _ = load_thermal_plant()
                if self.plant["data"] != "thermal_rc":
                    raise ConfigError(f"unknown packaged plant {self.plant['data']!r}")
                return model
            if "file" in self.plant:
                model, _ = load_plant(self.plant["file"])
                return model
            model, _ = load_plant(self.plant)
            return model
        except ConfigError:
            raise
        except Exception as exc:
            raise ConfigError(f"invalid plant spec: {exc}") from exc

    def plant_q(self) -> np.ndarray | None:
        q = self.plant.get("Q")
        return None if q is None else np.asarray(q, dtype=float)

    def build_utility(self) -> LatentUtility:
        kind = self.utility.get("kind")
        if kind == "quadratic-tracking":
            if "x_ref" not in self.utility:
                raise ConfigError("quadratic-tracking utility requires x_ref")
            return QuadraticTracking(x_ref=np.asarray(self.utility["x_ref"], dtype=float))
        if kind == "ppd-comfort":
            try:
                env = PmvEnvironment(**self.utility.get("env", {}))
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"invalid PMV environment: {exc}") from exc
            return PpdComfort(env=env, state_index=int(self.utility.get("state_index", 0)))
        raise ConfigError(f"unknown utility kind {kind!r}")

    def controller_config(self) -> ControllerConfig:
        box = None
        if self.u_box is not None:
            box = (np.asarray(self.u_box[0], float), np.asarray(self.u_box[1], float))
        return ControllerConfig(eta=self.eta, delta=self.delta, horizon=self.horizon,
                                u0=np.asarray(self.u0, dtype=float), u_box=box)

    # -- serialization --------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "version": CONFIG_VERSION,
            "name": self.name,
            "plant": self.plant,
            "utility": self.utility,
            "links": list(self.links),
            "seed": self.seed,
            "eta": self.eta,
            "delta": self.delta,
            "horizon": self.horizon,
            "u0": list(self.u0),
            "x0": None if self.x0 is None else list(self.x0),
            "replicas": self.replicas,
            "variant": self.variant,
            "metrics": list(self.metrics),
            "u_box": None if self.u_box is None else [list(b) for b in self.u_box],
        }

    def canonical_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()

    @classmethod
    def from_dict(cls, doc: dict, name: str | None = None) -> "ExperimentConfig":
        if not isinstance(doc, dict):
            raise ConfigError(f"config must be a JSON object, got {type(doc).__name__}")
        version = doc.get("version")
        if version != CONFIG_VERSION:
            raise ConfigError(f"unsupported config version {version!r}, expected {CONFIG_VERSION}")
        required = ("plant", "utility", "eta", "delta", "horizon", "u0", "replicas")
        for key in required:
            if key not in doc:
                raise ConfigError(f"missing required config field {key!r}")
        links = doc.get("links") or [doc.get("link", "logistic")]
        if isinstance(links, str):
            links = [links]
        try:
            return cls(
                name=name or doc.get("name", "experiment"),
                plant=doc["plant"],
                utility=doc["utility"],
                links=tuple(links),
                seed=int(doc.get("seed", 0)),
                eta=float(doc["eta"]),
                delta=float(doc["delta"]),
                horizon=int(doc["horizon"]),
                u0=tuple(float(v) for v in doc["u0"]),
                x0=None if doc.get("x0") is None else tuple(float(v) for v in doc["x0"]),
                replicas=int(doc["replicas"]),
                variant=doc.get("variant", "closed-loop"),
                metrics=tuple(doc.get("metrics", ["utility"])),
                u_box=None if doc.get("u_box") is None
                else (tuple(doc["u_box"][0]), tuple(doc["u_box"][1])),
            )
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"malformed config: {exc}") from exc

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        try:
            with open(path) as fh:
                doc = json.load(fh)
        except FileNotFoundError as exc:
            raise ConfigError(f"config file not found: {path}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
        return cls.from_dict(doc)


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    out_dir: Path
    records: dict[str, list[TrajectoryRecord]]  # link kind -> replicas
    manifest: dict = field(default_factory=dict)


def builtin_configs() -> dict[str, ExperimentConfig]:
    """The four self-contained built-in studies."""
    def quadratic(name: str, c: float, variant: str) -> ExperimentConfig:
        return ExperimentConfig(
            name=name,
            plant={"A": [[c, 1.0], [0.0, c]], "B": [[1.0, 0.0], [0.0, 1.0]]},
            utility={"kind": "quadratic-tracking", "x_ref": [100.0, 100.0]},
            links=("logistic",),
            seed=0,
            eta=0.1, delta=0.5, horizon=4000,
            u0=(0.0, 0.0),
            replicas=20,
            variant=variant,
            metrics=("relative-error", "dist-to-opt-squared", "lyapunov", "utility"),
        )

    thermal = ExperimentConfig(
        name="thermal",
        plant={"data": "thermal_rc"},
        utility={"kind": "ppd-comfort", "state_index": 0},
        links=("logistic", "sign"),
        seed=0,
        eta=0.05, delta=0.25, horizon=2000,
        u0=(240.0 / 7.0,),  # steady-state indoor temperature 20 degC
        replicas=20,
        variant="closed-loop",
        metrics=("utility",),
    )
    return {
        "quadratic-c01": quadratic("quadratic-c01", 0.1, "closed-loop"),
        "quadratic-c07": quadratic("quadratic-c07", 0.7, "closed-loop"),
        "quadratic-algebraic": quadratic("quadratic-algebraic", 0.1, "algebraic"),
        "thermal": thermal,
    }


def _record_metadata(config: ExperimentConfig, model: PlantModel, link: str,
                     seed: int, x0: np.ndarray) -> dict:
    return {
        "config": config.name,
        "config_hash": config.config_hash(),
        "plant": {"A": model.A.tolist(), "B": model.B.tolist()},
        "utility": dict(config.utility),
        "link": link,
        "seed": seed,
        "eta": config.eta,
        "delta": config.delta,
        "horizon": config.horizon,
        "u0": list(config.u0),
        "x0": x0.tolist(),
        "variant": config.variant,
        "safety_box": config.u_box is not None,
    }


def run_replica(config: ExperimentConfig, link_kind: str, replica: int,
                model: PlantModel | None = None, cert=None,
                u_star: np.ndarray | None = None) -> TrajectoryRecord:
    """One replica with seed base+replica; v-draws and oracle use spawned streams."""
    if model is None:
        model = config.build_plant()
    utility = config.build_utility()
    link = LinkFunction(kind=link_kind)
    seed = config.seed + replica
    v_seq, oracle_seq = np.random.SeedSequence(seed).spawn(2)
    oracle = PreferenceOracle(link=link, utility=utility, seed=oracle_seq)
    ctrl = config.controller_config()
    x0 = (steady_state_map(model, np.asarray(config.u0, float)) if config.x0 is None
          else np.asarray(config.x0, dtype=float))
    if u_star is None and isinstance(utility, QuadraticTracking) and model.n_x == model.n_u:
        u_star = ReducedUtility(utility, model).minimizer()
    if config.variant == "algebraic":
        rec = run_algebraic_variant(model, oracle, ctrl,
                                    rng=np.random.default_rng(v_seq),
                                    cert=cert, u_star=u_star)
    else:
        rec = run_closed_loop(model, oracle, ctrl, x0=x0,
                              rng=np.random.default_rng(v_seq),
                              cert=cert, u_star=u_star)
    rec.metadata = _record_metadata(config, model, link_kind, seed, x0)
    return rec


def _write_ensemble_csv(path: Path, stats) -> None:
    with open(path, "w") as fh:
        fh.write("k,mean,std\n")
        for k, (m, s) in enumerate(zip(stats.mean, stats.std)):
            fh.write(f"{k},{float(m)!r},{float(s)!r}\n")


def run_experiment(config: ExperimentConfig, out_dir, verifiers=None,
                   write_files: bool = True) -> ExperimentResult:
    """Run all replicas for every link kind and write the experiment artifacts."""
    out_dir = Path(out_dir)
    t0 = time.monotonic()
    model = config.build_plant()
    cert = compute_lyapunov_certificate(model, Q=config.plant_q())
    utility = config.build_utility()
    u_star = None
    if isinstance(utility, QuadraticTracking) and model.n_x == model.n_u:
        u_star = ReducedUtility(utility, model).minimizer()

    records: dict[str, list[TrajectoryRecord]] = {}
    base = out_dir / config.name
    if write_files:
        base.mkdir(parents=True, exist_ok=True)
    manifest = {
        "config": config.to_dict(),
        "config_hash": config.config_hash(),
        "version": CONFIG_VERSION,
        "lyapunov_mu": cert.mu,
        "links": {},
    }
    try:
        for link_kind in config.links:
            link_dir = base / link_kind
            if write_files:
                link_dir.mkdir(parents=True, exist_ok=True)
            reps = []
            for r in range(config.replicas):
                rec = run_replica(config, link_kind, r, model=model, cert=cert,
                                  u_star=u_star)
                if rec.error_mark:
                    raise RuntimeError(
                        f"replica {r} ({link_kind}) aborted: {rec.error_mark}"
                    )
                reps.append(rec)
                if write_files:
                    rec.to_csv(link_dir / f"rep{r:03d}.csv")
            records[link_kind] = reps
            stats_files = {}
            for metric in config.metrics:
                stats = ensemble_stats(reps, metric)
                if write_files:
                    fname = f"ensemble_{metric}.csv"
                    _write_ensemble_csv(link_dir / fname, stats)
                    stats_files[metric] = str(Path(link_kind) / fname)
            manifest["links"][link_kind] = {
                "replicas": config.replicas,
                "ensemble_stats": stats_files,
            }
    except Exception as exc:
        manifest["aborted"] = str(exc)
        if write_files:
            base.mkdir(parents=True, exist_ok=True)
            with open(base / "manifest.json", "w") as fh:
                json.dump(manifest, fh, indent=2, sort_keys=True)
        raise

    manifest["wall_time_s"] = time.monotonic() - t0
    if write_files:
        with open(base / "config.json", "w") as fh:
            json.dump(config.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")
        with open(base / "manifest.json", "w") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)
            fh.write("\n")
    return ExperimentResult(config=config, out_dir=base, records=records,
                            manifest=manifest)
