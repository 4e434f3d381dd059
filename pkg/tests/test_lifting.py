import numpy as np
import pytest

from blskoopman.lifting import (
    BlsLifting,
    ThinPlateRbfLifting,
    get_activation,
    load_lifter,
    save_lifter,
    tps_activation,
)
from blskoopman.numerics import rng_stream


class TestActivations:
    def test_tps_values(self):
        assert tps_activation(0.0) == 0.0
        assert tps_activation(1.0) == 0.0
        assert tps_activation(np.e) == pytest.approx(np.e**2)
        assert tps_activation(-1.0) == 0.0  # even in |v|

    def test_tanh(self):
        act = get_activation("tanh")
        assert act(0.0) == 0.0

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            get_activation("relu6")


class TestBlsLifting:
    def test_lift_dimensions(self):
        lifter = BlsLifting(600, 400).fit(np.zeros((1, 2)))
        assert lifter.lift_dim_ == 1002
        lifter = BlsLifting(700, 400).fit(np.zeros((1, 5)))
        assert lifter.lift_dim_ == 1105

    def test_degenerate_is_identity(self):
        X = rng_stream(1).standard_normal((10, 2))
        lifter = BlsLifting(0, 0).fit(X)
        assert lifter.lift_dim_ == 2
        assert np.array_equal(lifter.transform(X), X)

    def test_state_passthrough(self):
        X = rng_stream(2).standard_normal((50, 3))
        lifter = BlsLifting(40, 20, random_state=5).fit(X)
        assert np.array_equal(lifter.transform(X)[:, :3], X)

    def test_zero_weights_case(self):
        lifter = BlsLifting(4, 3, activation="tanh", random_state=0).fit(np.zeros((1, 2)))
        lifter.feature_weights_ = np.zeros_like(lifter.feature_weights_)
        lifter.feature_bias_ = np.zeros_like(lifter.feature_bias_)
        out = lifter.transform(np.array([[0.7, -0.3]]))
        assert np.array_equal(out[0, 2:6], np.zeros(4))
        assert np.allclose(out[0, 6:], np.tanh(lifter.enhance_bias_))

    def test_deterministic_given_seed(self):
        X = rng_stream(3).standard_normal((5, 2))
        a = BlsLifting(30, 10, random_state=7).fit(X).transform(X)
        b = BlsLifting(30, 10, random_state=7).fit(X).transform(X)
        c = BlsLifting(30, 10, random_state=8).fit(X).transform(X)
        assert np.array_equal(a, b)
        assert not np.array_equal(a, c)

    def test_weight_law_uniform_in_scale(self):
        lifter = BlsLifting(200, 100, scale=0.25, random_state=1).fit(np.zeros((1, 4)))
        for w in (
            lifter.feature_weights_,
            lifter.feature_bias_,
            lifter.enhance_weights_,
            lifter.enhance_bias_,
        ):
            assert np.abs(w).max() <= 0.25
        assert np.abs(lifter.feature_weights_).max() > 0.2  # actually spans the range

    def test_rejects_bad_params(self):
        with pytest.raises(ValueError):
            BlsLifting(-1, 0).fit(np.zeros((1, 2)))
        with pytest.raises(ValueError):
            BlsLifting(1, 1, scale=0.0).fit(np.zeros((1, 2)))
        with pytest.raises(ValueError):
            BlsLifting(1, 1, activation="nope").fit(np.zeros((1, 2)))


class TestGrow:
    def test_zero_growth_identical(self):
        X = rng_stream(4).standard_normal((20, 2))
        lifter = BlsLifting(10, 5, random_state=2).fit(X)
        grown = lifter.grow(0, 0)
        assert np.array_equal(grown.transform(X), lifter.transform(X))

    def test_prefix_preservation(self):
        X = rng_stream(5).standard_normal((100, 3))
        lifter = BlsLifting(12, 7, random_state=3).fit(X)
        grown = lifter.grow(5, 4)
        old = lifter.transform(X)
        new = grown.transform(X)
        assert new.shape[1] == old.shape[1] + 9
        assert np.array_equal(new[:, : old.shape[1]], old)

    def test_prefix_preservation_chained(self):
        X = rng_stream(6).standard_normal((40, 2))
        lifter = BlsLifting(3, 2, random_state=4).fit(X)
        lifts = [lifter.transform(X)]
        for add in ((4, 1), (0, 3), (2, 0)):
            lifter = lifter.grow(*add)
            lifts.append(lifter.transform(X))
        for prev, cur in zip(lifts, lifts[1:]):
            assert np.array_equal(cur[:, : prev.shape[1]], prev)

    def test_dimension_arithmetic(self):
        lifter = BlsLifting(600, 400).fit(np.zeros((1, 5)))
        assert lifter.lift_dim_ == 1005
        grown = lifter.grow(100, 0)
        assert grown.lift_dim_ == 1105

    def test_grow_draws_are_deterministic(self):
        X = rng_stream(7).standard_normal((10, 2))
        a = BlsLifting(5, 5, random_state=9).fit(X).grow(3, 3).transform(X)
        b = BlsLifting(5, 5, random_state=9).fit(X).grow(3, 3).transform(X)
        assert np.array_equal(a, b)

    def test_negative_growth_rejected(self):
        lifter = BlsLifting(2, 2).fit(np.zeros((1, 2)))
        with pytest.raises(ValueError):
            lifter.grow(-1, 0)


class TestThinPlateRbf:
    def test_center_is_zero(self):
        X = rng_stream(8).uniform(-1, 1, (30, 2))
        lifter = ThinPlateRbfLifting(n_centers=10, random_state=1).fit(X)
        out = lifter.transform(lifter.centers_[3][None, :])
        assert out[0, 2 + 3] == 0.0

    def test_unit_radius_is_zero_and_e_radius(self):
        lifter = ThinPlateRbfLifting(n_centers=1, center_box=[[0.0, 0.0], [0.0, 0.0]]).fit(
            np.zeros((1, 2))
        )
        assert lifter.transform(np.array([[1.0, 0.0]]))[0, 2] == pytest.approx(0.0, abs=1e-14)
        assert lifter.transform(np.array([[np.e, 0.0]]))[0, 2] == pytest.approx(np.e**2)

    def test_passthrough_and_dim(self):
        X = rng_stream(9).uniform(-1, 1, (20, 3))
        lifter = ThinPlateRbfLifting(n_centers=15).fit(X)
        out = lifter.transform(X)
        assert out.shape == (20, 18)
        assert np.array_equal(out[:, :3], X)

    def test_centers_respect_box(self):
        box = [[0.0, 1.0], [5.0, 6.0]]
        lifter = ThinPlateRbfLifting(n_centers=50, center_box=box, random_state=2).fit(
            np.zeros((1, 2))
        )
        assert lifter.centers_[:, 0].min() >= 0.0
        assert lifter.centers_[:, 0].max() <= 1.0
        assert lifter.centers_[:, 1].min() >= 5.0


class TestLipschitzOnBox:
    def test_tanh_lift_difference_quotients_bounded(self):
        # tanh has unit slope, so the lift is Lipschitz with constant at most
        # 1 + ||We||(1 + ||Wh||) in the 2-norm on any box
        lifter = BlsLifting(30, 20, activation="tanh", scale=0.8, random_state=3).fit(
            np.zeros((1, 2))
        )
        bound = 1.0 + np.linalg.norm(lifter.feature_weights_, 2) * (
            1.0 + np.linalg.norm(lifter.enhance_weights_, 2)
        )
        rng = rng_stream(10)
        A = rng.uniform(-2, 2, (200, 2))
        B = A + rng.uniform(-0.1, 0.1, (200, 2))
        la, lb = lifter.transform(A), lifter.transform(B)
        quot = np.linalg.norm(la - lb, axis=1) / np.linalg.norm(A - B, axis=1)
        assert quot.max() <= bound + 1e-9


class TestLifterPersistence:
    def test_bls_round_trip(self, tmp_path):
        X = rng_stream(11).standard_normal((10, 2))
        lifter = BlsLifting(8, 6, random_state=5).fit(X).grow(2, 1)
        path = tmp_path / "lifter.bin"
        save_lifter(lifter, path)
        back = load_lifter(path)
        assert np.array_equal(back.transform(X), lifter.transform(X))
        assert np.array_equal(back.feature_weights_, lifter.feature_weights_)
        assert back.grow_count_ == 1

    def test_tps_round_trip(self, tmp_path):
        X = rng_stream(12).uniform(-1, 1, (20, 3))
        lifter = ThinPlateRbfLifting(n_centers=7, random_state=6).fit(X)
        path = tmp_path / "lifter.bin"
        save_lifter(lifter, path)
        back = load_lifter(path)
        assert np.array_equal(back.transform(X), lifter.transform(X))
        assert np.array_equal(back.centers_, lifter.centers_)
