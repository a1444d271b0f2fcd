"""Shared fixtures: the built-in studies are expensive, so run each once."""

import numpy as np
import pytest

from prefloop.analysis import box_from_points, compute_bound_constants, lipschitz_constant_x
from prefloop.harness import builtin_configs, run_experiment
from prefloop.plant import compute_lyapunov_certificate
from prefloop.preference import LinkFunction, ReducedUtility


@pytest.fixture(scope="session")
def builtins():
    return builtin_configs()


@pytest.fixture(scope="session")
def c01_result(builtins):
    return run_experiment(builtins["quadratic-c01"], "/tmp/unused", write_files=False)


@pytest.fixture(scope="session")
def c07_result(builtins):
    return run_experiment(builtins["quadratic-c07"], "/tmp/unused", write_files=False)


@pytest.fixture(scope="session")
def algebraic_result(builtins):
    return run_experiment(builtins["quadratic-algebraic"], "/tmp/unused",
                          write_files=False)


@pytest.fixture(scope="session")
def thermal_result(builtins):
    return run_experiment(builtins["thermal"], "/tmp/unused", write_files=False)


@pytest.fixture(scope="session")
def c01_records(c01_result):
    return c01_result.records["logistic"]


@pytest.fixture(scope="session")
def c01_setup(builtins, c01_records):
    """Model, certificate, reduced utility, link, and bound constants for c01."""
    cfg = builtins["quadratic-c01"]
    model = cfg.build_plant()
    cert = compute_lyapunov_certificate(model)
    utility = cfg.build_utility()
    reduced = ReducedUtility(utility, model)
    link = LinkFunction("logistic")
    u_box = box_from_points(np.vstack([r.u for r in c01_records]))
    x_box = box_from_points(np.vstack([r.x for r in c01_records]))
    L_x = lipschitz_constant_x(utility, x_box)
    constants = compute_bound_constants(reduced, link, cert, cfg.eta, cfg.delta,
                                        u_box, L_x)
    return {
        "config": cfg, "model": model, "cert": cert, "utility": utility,
        "reduced": reduced, "link": link, "u_box": u_box, "x_box": x_box,
        "constants": constants,
    }
