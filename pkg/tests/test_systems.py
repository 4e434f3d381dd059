import numpy as np
import pytest

from blskoopman.numerics import rk4_rollout, rng_stream
from blskoopman.systems import Dsrv, DsrvParameters, SquareWave, VanDerPol, make_plant


class TestVanDerPol:
    def test_origin_is_equilibrium(self):
        assert np.array_equal(VanDerPol().rhs(np.zeros(2), np.zeros(1)), [0.0, 0.0])

    def test_hand_substitution(self):
        out = VanDerPol().rhs(np.array([1.0, 1.0]), np.array([0.0]))
        assert np.allclose(out, [-2.0, 8.8])

    def test_input_is_additive(self):
        out = VanDerPol().rhs(np.array([1.0, 1.0]), np.array([1.0]))
        assert np.allclose(out, [-2.0, 9.8])

    def test_input_channel_derivatives(self):
        plant = VanDerPol()
        rng = rng_stream(3)
        for _ in range(20):
            x = rng.uniform(-2, 2, 2)
            du = plant.rhs(x, np.array([1.0])) - plant.rhs(x, np.array([0.0]))
            assert du[0] == 0.0
            assert du[1] == 1.0

    def test_korda_variant(self):
        out = VanDerPol(variant="korda").rhs(np.array([1.0, 1.0]), np.array([0.0]))
        assert np.allclose(out, [2.0, -0.8 + 2.0 - 10.0])

    def test_unknown_variant(self):
        with pytest.raises(ValueError):
            VanDerPol(variant="bogus")


class TestDsrv:
    def test_cruise_drift_at_rest(self):
        out = Dsrv().rhs(np.zeros(5), np.zeros(1))
        assert np.allclose(out, [0.0, 0.0, 4.11, 0.0, 0.0])

    def test_mass_matrix_determinant(self):
        p = DsrvParameters()
        hand = 0.067936 * 0.003498 - 0.000130 * 0.000146
        assert p.det_m == pytest.approx(hand, rel=1e-15)
        assert p.det_m == pytest.approx(2.37621148e-4, rel=1e-8)

    def test_rudder_sensitivity_closed_form(self):
        p = DsrvParameters()
        out = Dsrv(p).rhs(np.zeros(5), np.array([0.1]))
        w_dot = (p.m22 * p.Zdelta - p.m12 * p.Mdelta) * 0.1 / p.det_m
        q_dot = (-p.m21 * p.Zdelta + p.m11 * p.Mdelta) * 0.1 / p.det_m
        assert out[0] == pytest.approx(w_dot, rel=1e-12)
        assert out[1] == pytest.approx(q_dot, rel=1e-12)

    def test_affine_in_rudder(self):
        plant = Dsrv()
        rng = rng_stream(5)
        for _ in range(20):
            x = rng.uniform(-1, 1, 5)
            base = plant.rhs(x, np.array([0.0]))
            d1 = plant.rhs(x, np.array([0.3])) - base
            d2 = plant.rhs(x, np.array([0.6])) - base
            assert np.allclose(2.0 * d1, d2, rtol=1e-12, atol=1e-15)

    def test_pitch_restoring_uses_cruise_speed(self):
        p = DsrvParameters()
        assert p.Mtheta == pytest.approx(-0.156276 / 4.11**2, rel=1e-15)

    def test_equilibrium_trajectory_is_pure_cruise(self):
        plant = Dsrv()
        steps = 200
        traj = rk4_rollout(plant.rhs, np.zeros(5), np.zeros((steps, 1)), 0.01)
        assert np.allclose(traj[:, [0, 1, 3, 4]], 0.0, atol=1e-14)
        assert np.allclose(traj[:, 2], 4.11 * 0.01 * np.arange(1, steps + 1), rtol=1e-12)

    def test_singular_mass_matrix_rejected(self):
        with pytest.raises(ValueError):
            DsrvParameters(m11=1.0, m12=1.0, m21=1.0, m22=1.0)

    def test_from_mapping_unknown_key(self):
        with pytest.raises(ValueError):
            DsrvParameters.from_mapping({"bogus": 1.0})

    def test_from_mapping_override(self):
        p = DsrvParameters.from_mapping({"U0": 5.0})
        assert p.U0 == 5.0
        assert p.m11 == 0.067936


class TestSquareWave:
    def test_basic_values(self):
        w = SquareWave(period=0.3, amplitude=1.0)
        assert w(0.0) == 1.0
        assert w(0.20) == -1.0
        assert w(0.30) == 1.0

    def test_periodicity(self):
        # sampled away from the switching instants, where one ulp of modulo
        # slop could flip the sign
        w = SquareWave(period=0.3)
        for t in rng_stream(11).uniform(0.0, 2.0, 500):
            if min(t % 0.15, 0.15 - t % 0.15) < 1e-9:
                continue
            assert w(t) == w(t + 0.3)

    def test_phase_shift(self):
        w = SquareWave(period=1.0, amplitude=2.0, phase=0.5)
        assert w(0.5) == 2.0
        assert w(0.0) == -2.0

    def test_bad_period(self):
        with pytest.raises(ValueError):
            SquareWave(period=0.0)


class TestMakePlant:
    def test_names(self):
        assert isinstance(make_plant("vdp"), VanDerPol)
        assert isinstance(make_plant("dsrv"), Dsrv)
        with pytest.raises(ValueError):
            make_plant("pendulum")

    def test_dsrv_param_override(self):
        plant = make_plant("dsrv", params={"U0": 3.0})
        assert plant.params.U0 == 3.0
