"""PMV/PPD thermal comfort model tests against ISO 7730 reference values."""

import math

import numpy as np
import pytest

from prefloop.comfort import DEFAULT_ENVIRONMENT, PmvEnvironment, pmv, ppd


class TestPmv:
    def test_iso_reference_cool(self):
        # ISO 7730 validation row: ta=tr=22, v=0.1, rh=60, met=1.2, clo=0.5
        env = PmvEnvironment(met=1.2, clo=0.5, vel=0.1, rh=60.0)
        assert pmv(env, 22.0) == pytest.approx(-0.75, abs=0.02)

    def test_iso_reference_warm(self):
        env = PmvEnvironment(met=1.2, clo=0.5, vel=0.1, rh=60.0)
        assert pmv(env, 27.0) == pytest.approx(0.77, abs=0.02)

    def test_monotone_in_temperature(self):
        temps = np.linspace(15.0, 35.0, 81)
        values = [pmv(DEFAULT_ENVIRONMENT, t) for t in temps]
        assert all(b > a for a, b in zip(values, values[1:]))

    def test_neutral_crossing_in_band(self):
        # neutral temperature for the default environment sits near 25 degC
        assert pmv(DEFAULT_ENVIRONMENT, 24.0) < 0 < pmv(DEFAULT_ENVIRONMENT, 26.0)

    def test_radiant_temperature_override(self):
        warm_walls = PmvEnvironment(tr=30.0)
        assert pmv(warm_walls, 22.0) > pmv(DEFAULT_ENVIRONMENT, 22.0)

    def test_environment_validation(self):
        with pytest.raises(ValueError, match="met"):
            PmvEnvironment(met=0.5)
        with pytest.raises(ValueError, match="clo"):
            PmvEnvironment(clo=3.0)
        with pytest.raises(ValueError, match="rh"):
            PmvEnvironment(rh=150.0)
        with pytest.raises(ValueError, match="vel"):
            PmvEnvironment(vel=-0.1)


class TestPpd:
    def test_minimum_at_neutral(self):
        assert ppd(0.0) == pytest.approx(5.0)

    def test_value_at_one(self):
        assert ppd(1.0) == pytest.approx(26.1, abs=0.1)
        assert ppd(-1.0) == pytest.approx(26.1, abs=0.1)

    def test_even_function(self):
        for v in np.linspace(-3.0, 3.0, 25):
            assert ppd(v) == pytest.approx(ppd(-v), rel=1e-14)

    def test_nonfinite_rejected(self):
        with pytest.raises(ValueError, match="finite"):
            ppd(math.nan)

    def test_single_trough_over_temperature(self):
        """PPD(T) is nonconvex but unimodal on [15, 35] degC (default env)."""
        temps = np.linspace(15.0, 35.0, 401)
        values = np.array([ppd(pmv(DEFAULT_ENVIRONMENT, t)) for t in temps])
        kmin = int(values.argmin())
        assert np.all(np.diff(values[: kmin + 1]) < 0)
        assert np.all(np.diff(values[kmin:]) > 0)
        assert 20.0 < temps[kmin] < 30.0
