import math

import numpy as np
import pytest
from scipy.integrate import quad

from fedsde.schedules import Schedule


def test_values():
    assert Schedule.constant(0.3)(7.0) == pytest.approx(0.3)
    assert Schedule.power_decay(1.0)(1.0) == pytest.approx(0.5)
    assert Schedule.inverse_sqrt()(3.0) == pytest.approx(0.5)


def test_known_integrals():
    # log(e) = 1 and 2 sqrt(4) - 2 = 2 are exact in floating point
    assert Schedule.power_decay(1.0).integral(math.e - 1.0) == pytest.approx(1.0, abs=1e-15)
    assert Schedule.inverse_sqrt().integral(3.0) == pytest.approx(2.0, abs=1e-15)
    assert Schedule.constant(0.25).integral(8.0) == pytest.approx(2.0)


@pytest.mark.parametrize("schedule", [
    Schedule.constant(0.7),
    Schedule.power_decay(1.0),
    Schedule.power_decay(0.3),
    Schedule.power_decay(0.75),
    Schedule.inverse_sqrt(),
])
def test_integrals_match_quadrature(schedule):
    gen = np.random.default_rng(42)
    for _ in range(20):
        t = gen.uniform(0.1, 50.0)
        ref, _ = quad(lambda s: float(schedule(s)), 0.0, t, epsabs=1e-13, epsrel=1e-11)
        assert schedule.integral(t) == pytest.approx(ref, rel=1e-9)
        ref_sq, _ = quad(lambda s: float(schedule(s)) ** 2, 0.0, t,
                         epsabs=1e-13, epsrel=1e-11)
        assert schedule.square_integral(t) == pytest.approx(ref_sq, rel=1e-9)


@pytest.mark.parametrize("schedule", [
    Schedule.constant(2.0),
    Schedule.power_decay(1.0),
    Schedule.power_decay(0.4),
    Schedule.inverse_sqrt(),
])
def test_inverse_integral_roundtrip(schedule):
    t = np.linspace(0.0, 30.0, 40)
    back = schedule.inverse_integral(schedule.integral(t))
    np.testing.assert_allclose(back, t, rtol=1e-10, atol=1e-10)


def test_positive_everywhere():
    gen = np.random.default_rng(1)
    t = gen.uniform(0, 1000, 100)
    for schedule in (Schedule.constant(0.1), Schedule.power_decay(1.0),
                     Schedule.power_decay(0.2), Schedule.inverse_sqrt()):
        assert np.all(np.asarray(schedule(t)) > 0)


def test_validation():
    with pytest.raises(ValueError):
        Schedule.constant(0.0)
    with pytest.raises(ValueError):
        Schedule.constant(-1.0)
    with pytest.raises(ValueError):
        Schedule("linear", 1.0)
    with pytest.raises(ValueError):
        Schedule.power_decay(1.0)(-0.5)


def test_dict_roundtrip():
    for schedule in (Schedule.constant(0.05), Schedule.power_decay(0.5)):
        assert Schedule.from_dict(schedule.to_dict()) == schedule
