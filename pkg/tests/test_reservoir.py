import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from photonic_rc.numerics import INTENSITY_QUANT, QuantSpec
from photonic_rc.reservoir import (ReservoirConfig, nonlinearity, run_columnwise,
                                   run_feedforward, run_recurrent_full, step)

from reference import compare_modes, random_config, ref_modes, ref_node, ref_step

STEP10 = 1.0 / 1023


# -- nonlinearity and single steps ----------------------------------------------

class TestNonlinearity:
    def test_endpoints(self):
        assert nonlinearity(0.0) == 0.0
        assert nonlinearity(1.0) == 0.0
        assert abs(nonlinearity(0.5) - 1.0) <= STEP10

    def test_clamps_out_of_range(self):
        assert nonlinearity(-4.0) == 0.0 and nonlinearity(9.0) == 0.0

    def test_on_grid(self):
        s = np.linspace(-1, 2, 5001)
        out = nonlinearity(s)
        k = out * 1023
        assert np.all(np.abs(k - np.round(k)) < 1e-9) and out.min() >= 0 and out.max() <= 1

    def test_matches_scalar(self):
        for s in np.random.default_rng(0).uniform(-0.2, 1.2, 2000):
            assert nonlinearity(float(s)) == ref_node(float(s))

    @pytest.mark.parametrize("phase,inten,peak", [(QuantSpec(8), QuantSpec(10), 1.0),
                                                  (QuantSpec(4), QuantSpec(6), 0.7),
                                                  (QuantSpec(8, -0.5, 1.5), QuantSpec(12), 1.0)])
    def test_table_lookup_equals_direct(self, phase, inten, peak):
        cfg = ReservoirConfig(np.ones((1, 1)), sp.csr_matrix((1, 1)), 1.0, peak_intensity=peak,
                              phase_quant=phase, intensity_quant=inten)
        s = np.concatenate([np.random.default_rng(3).uniform(-1, 2, 20000),
                            phase.lo + phase.step * np.arange(phase.levels)])
        assert np.array_equal(cfg.activate(s), nonlinearity(s, peak, phase, inten))


class TestStep:
    def test_zero(self):
        cfg = ReservoirConfig.build(5, 3, 0.3, rho=0.0)
        assert not step(cfg, np.zeros(5), np.zeros(3)).any()

    def test_single_node_peak(self):
        cfg = ReservoirConfig(np.array([[1.0]]), sp.csr_matrix((1, 1)), 0.5)
        assert abs(step(cfg, np.zeros(1), np.ones(1))[0] - 1.0) <= STEP10

    def test_random_n8_matches_oracle(self):
        rng = np.random.default_rng(1)
        cfg = random_config(rng, 8, 5, 0.9)
        x = np.floor(rng.random(8) * 1023) / 1023
        u = rng.random(5)
        got = step(cfg, x, u)
        want = ref_step(cfg.w_res.toarray().tolist(), cfg.w_in.tolist(), cfg.input_gain, x.tolist(), u.tolist())
        assert got.tolist() == want

    def test_dimension_mismatch(self):
        cfg = ReservoirConfig.build(4, 3, 0.1, rho=0.5, density=0.5)
        with pytest.raises(ValueError):
            step(cfg, np.zeros(4), np.zeros(2))
        with pytest.raises(ValueError):
            step(cfg, np.zeros(3), np.zeros(3))

    def test_shape_validation(self):
        with pytest.raises(ValueError):
            ReservoirConfig(np.zeros((3, 2)), sp.csr_matrix((4, 4)), 0.1)


# -- modes ----------------------------------------------------------------------------

class TestFeedforward:
    def test_shape_and_independence(self):
        cfg = ReservoirConfig.build(4, 6, 0.4, rho=0.0, seed=2)
        feats = np.random.default_rng(0).random((3, 6))
        h = run_feedforward(cfg, feats)
        assert h.X.shape == (4, 3)
        for j in range(3):
            np.testing.assert_array_equal(h.X[:, j], step(cfg, np.zeros(4), feats[j]))

    def test_permutation(self):
        cfg = ReservoirConfig.build(16, 10, 0.3, rho=0.0)
        feats = np.random.default_rng(1).random((12, 10))
        perm = np.random.default_rng(2).permutation(12)
        np.testing.assert_array_equal(run_feedforward(cfg, feats[perm]).X, run_feedforward(cfg, feats).X[:, perm])

    def test_rejects_recurrent(self):
        cfg = ReservoirConfig.build(8, 3, 0.3, rho=0.9, density=0.5)
        with pytest.raises(ValueError, match="memoryless"):
            run_feedforward(cfg, np.zeros((2, 3)))


class TestRecurrent:
    def test_ke0_rho0_equals_feedforward(self):
        cfg = ReservoirConfig.build(10, 7, 0.5, rho=0.0)
        feats = np.random.default_rng(3).random((5, 7))
        np.testing.assert_array_equal(run_recurrent_full(cfg, feats, 0).X, run_feedforward(cfg, feats).X)

    def test_length(self):
        cfg = ReservoirConfig.build(6, 4, 0.5, rho=0.8, density=0.5)
        assert run_recurrent_full(cfg, np.random.default_rng(0).random((3, 4)), 3).X.shape == (24, 3)

    def test_first_rows_equal_ke0_when_rho0(self):
        cfg = ReservoirConfig.build(6, 4, 0.5, rho=0.0)
        feats = np.random.default_rng(0).random((3, 4))
        full = run_recurrent_full(cfg, feats, 4).X
        np.testing.assert_array_equal(full[:6], run_recurrent_full(cfg, feats, 0).X)

    def test_n4_ke2_oracle(self):
        rng = np.random.default_rng(11)
        cfg = random_config(rng, 4, 3, 1.1)
        feats = rng.random((4, 3))
        _, rec, _ = ref_modes(cfg, feats, np.zeros((0, 28, 28)), 2, None)
        assert run_recurrent_full(cfg, feats, 2).X.T.tolist() == rec

    def test_negative_ke(self):
        cfg = ReservoirConfig.build(3, 2, 0.5)
        with pytest.raises(ValueError):
            run_recurrent_full(cfg, np.zeros((1, 2)), -1)


class TestColumnwise:
    def test_aggregate_lengths(self):
        cfg = ReservoirConfig.build(5, 28, 0.2, rho=0.7, density=0.5)
        imgs = np.random.default_rng(0).random((3, 28, 28))
        assert run_columnwise(cfg, imgs, [17, 24]).X.shape == (10, 3)
        assert run_columnwise(cfg, imgs, [14, 16, 20, 24]).X.shape == (20, 3)

    def test_per_column_layout(self):
        cfg = ReservoirConfig.build(5, 28, 0.2, rho=0.7, density=0.5)
        imgs = np.random.default_rng(0).random((3, 28, 28))
        h = run_columnwise(cfg, imgs)
        assert h.X.shape == (5, 3 * 28)
        assert h.item.tolist() == sum([[i] * 28 for i in range(3)], [])
        assert h.timestep.tolist()[:28] == list(range(1, 29))
        agg = run_columnwise(cfg, imgs, [17, 24]).X
        np.testing.assert_array_equal(agg[:5, 1], h.X[:, 28 + 16])
        np.testing.assert_array_equal(agg[5:, 1], h.X[:, 28 + 23])

    @pytest.mark.parametrize("bad", [[], [0, 3], [3, 29], [5, 5], [9, 4]])
    def test_invalid_indices(self, bad):
        cfg = ReservoirConfig.build(3, 28, 0.2)
        with pytest.raises(ValueError):
            run_columnwise(cfg, np.zeros((1, 28, 28)), bad)

    def test_needs_28_columns(self):
        cfg = ReservoirConfig.build(3, 28, 0.2)
        with pytest.raises(ValueError):
            run_columnwise(cfg, np.zeros((1, 28, 27)), [3])


# -- properties --------------------------------------------------------------------------

@pytest.mark.parametrize("trial", range(100))
def test_all_modes_match_scalar_reference(trial):
    result = compare_modes(np.random.default_rng(1000 + trial))
    assert all(result.values()), result


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 40), st.floats(0.0, 1.5), st.floats(0.0, 3.0))
def test_quantization_closure(seed, n, rho, beta):
    rng = np.random.default_rng(seed)
    cfg = ReservoirConfig.build(n, 28, beta, rho=rho, density=0.5, seed=seed) if rho > 0 and n > 1 \
        else ReservoirConfig.build(n, 28, beta, rho=0.0, seed=seed)
    X = run_columnwise(cfg, rng.random((3, 28, 28))).X
    assert X.min() >= 0.0 and X.max() <= 1.0
    k = X * (INTENSITY_QUANT.levels - 1)
    assert np.all(np.abs(k - np.round(k)) < 1e-9)


def test_zero_gain_stays_at_origin():
    cfg = ReservoirConfig.build(30, 28, 0.0, rho=0.9, density=0.2)
    assert not run_columnwise(cfg, np.random.default_rng(0).random((4, 28, 28))).X.any()
    assert not run_recurrent_full(ReservoirConfig.build(30, 5, 0.0, rho=0.9, density=0.2),
                                  np.ones((2, 5)), 3).X.any()


def test_large_reservoir_uses_sparse_feedback():
    cfg = ReservoirConfig.build(5000, 4, 0.3, rho=0.9, density=0.001)
    assert sp.issparse(cfg._res_op)
    x = np.random.default_rng(0).random(5000)
    np.testing.assert_allclose(cfg.feedback(x), cfg.w_res @ x)
