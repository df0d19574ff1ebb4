import numpy as np
import pytest

from pgdenoise import autodiff as ad
from pgdenoise import regularizers as rg
from pgdenoise.errors import ConfigurationError
from pgdenoise.network import Mlp
from pgdenoise.optim import AdamState, CosineSchedule, adam_step


class FnNet:
    """Test shim: exposes an arbitrary column function as a network."""

    def __init__(self, fn):
        self.fn = fn

    def forward_cols(self, cols, params=None, mode="eval", rng=None):
        return self.fn(cols)


def no_context(n):
    return np.zeros((n, 0))


class TestPartition:
    def test_constant_energy_gives_m_dr(self):
        model = rg.EbmModel(FnNet(lambda cols: cols[-1] * 0.0), grid_size=32)
        r = np.array([-1.0, 0.5, 2.0])
        z = rg.ebm_partition(model, no_context(3), r)
        grid, dr = rg.residual_grid(r, 32, 0.5)
        np.testing.assert_allclose(z, 32 * dr, rtol=1e-12)

    def test_gaussian_partition_matches_integral(self):
        model = rg.EbmModel(FnNet(lambda cols: cols[-1] ** 2 * -0.5), grid_size=512, grid_margin=0.0)
        r = np.array([-6.0, 6.0])  # pins the grid to [-6, 6]
        z = rg.ebm_partition(model, no_context(2), r)
        np.testing.assert_allclose(z, np.sqrt(2 * np.pi), rtol=1e-3)

    def test_doubling_grid_size_converges(self):
        f = FnNet(lambda cols: ad.sin(cols[-1]) - cols[-1] ** 2 * 0.1)
        r = np.random.default_rng(0).normal(size=50)
        z1 = rg.ebm_partition(rg.EbmModel(f, grid_size=256), no_context(50), r)[0]
        z2 = rg.ebm_partition(rg.EbmModel(f, grid_size=512), no_context(50), r)[0]
        assert abs(z2 - z1) / z1 < 1e-3

    def test_degenerate_grid_widens_symmetrically(self):
        grid, dr = rg.residual_grid(np.array([2.0, 2.0]), 11, 0.5)
        assert grid[0] == pytest.approx(1.0)
        assert grid[-1] == pytest.approx(3.0)

    def test_empty_batch_rejected(self):
        with pytest.raises(ConfigurationError):
            rg.residual_grid(np.array([]), 8, 0.5)


class TestNll:
    def test_constant_energy_nll_independent_of_r(self):
        model = rg.EbmModel(FnNet(lambda cols: cols[-1] * 0.0), grid_size=64)
        r = np.array([-0.5, 0.1, 1.2, 3.0])
        grid, dr = rg.residual_grid(r, 64, 0.5)
        nll = rg.ebm_nll(model, no_context(4), r)
        assert nll == pytest.approx(np.log(64 * dr))

    def test_mode_has_minimal_nll_on_grid(self):
        model = rg.EbmModel(FnNet(lambda cols: cols[-1] ** 2 * -0.5), grid_size=256)
        anchor = np.array([-3.0, 3.0])
        grid, _ = rg.residual_grid(anchor, 256, 0.5)
        nlls = [
            rg.ebm_nll(model, no_context(3), np.array([-3.0, 3.0, g]))
            for g in (grid[10], 0.0, grid[-10])
        ]
        assert nlls[1] < nlls[0] and nlls[1] < nlls[2]

    def test_nll_at_argmax_bounded_below_by_log_dr(self):
        # Z >= exp(F(r*)) dr, so NLL(r*) >= log dr for the grid argmax r*
        rng = np.random.default_rng(1)
        net = rg.make_reg_net(0, (np.zeros(1), np.ones(1)), seed=3)
        model = rg.EbmModel(net, grid_size=64)
        r = rng.normal(size=40)
        grid, dr = rg.residual_grid(r, 64, 0.5)
        f_on_grid = net.forward_cols([grid])
        r_star = grid[int(np.argmax(f_on_grid))]
        batch = np.concatenate([r[:-1], [r_star]])
        grid2, dr2 = rg.residual_grid(batch, 64, 0.5)
        log_z, _, _ = rg.ebm_log_partition(model, no_context(len(batch)), batch)
        f_star = net.forward_cols([np.array([r_star])])[0]
        nll_star = float(log_z[-1] - f_star)
        assert nll_star >= np.log(dr2) - 1e-10

    def test_invariance_under_constant_energy_offset(self):
        rng = np.random.default_rng(2)
        base = FnNet(lambda cols: ad.tanh(cols[-1]) - cols[-1] ** 2 * 0.3)
        r = rng.normal(size=30)
        ctx = no_context(30)
        nll0 = rg.ebm_nll(rg.EbmModel(base, grid_size=128), ctx, r)
        for offset in rng.uniform(-50, 50, size=5):
            shifted = FnNet(
                lambda cols, o=offset: ad.tanh(cols[-1]) - cols[-1] ** 2 * 0.3 + o
            )
            nll = rg.ebm_nll(rg.EbmModel(shifted, grid_size=128), ctx, r)
            assert abs(nll - nll0) < 1e-10

    def test_joint_grid_variant_runs(self):
        net = rg.make_reg_net(0, (np.zeros(1), np.ones(1)), seed=0)
        r = np.random.default_rng(3).normal(size=20)
        a = rg.ebm_nll(rg.EbmModel(net), no_context(20), r, joint_grid=False)
        b = rg.ebm_nll(rg.EbmModel(net), no_context(20), r, joint_grid=True)
        assert np.isfinite(a) and np.isfinite(b)

    def test_batch_size_mismatch_rejected(self):
        net = rg.make_reg_net(0, (np.zeros(1), np.ones(1)))
        with pytest.raises(ConfigurationError):
            rg.ebm_nll(rg.EbmModel(net), no_context(3), np.zeros(4))


class TestFisher:
    def test_constant_surrogate_zero_score(self):
        model = rg.FisherModel(FnNet(lambda cols: cols[-1] * 0.0 + 4.0), grid_size=16)
        total, score, fit = rg.fisher_loss(model, no_context(5), np.random.default_rng(0).normal(size=5))
        assert score == pytest.approx(0.0, abs=1e-14)

    def test_gaussian_score_at_mode_is_zero(self):
        model = rg.FisherModel(FnNet(lambda cols: cols[-1] ** 2 * -0.5), grid_size=16)
        total, score, fit = rg.fisher_loss(model, no_context(4), np.zeros(4))
        assert score == pytest.approx(0.0, abs=1e-14)

    def test_score_term_recovers_unit_fisher_information(self):
        # E[(d/dr of -r^2/2)^2] = E[r^2] = 1 for unit Gaussian residuals
        rng = np.random.default_rng(42)
        r = rng.normal(size=100_000)
        model = rg.FisherModel(FnNet(lambda cols: cols[-1] ** 2 * -0.5), grid_size=16)
        total, score, fit = rg.fisher_loss(model, no_context(r.size), r)
        assert score == pytest.approx(1.0, abs=0.02)

    def test_score_term_nonnegative(self):
        rng = np.random.default_rng(5)
        net = rg.make_reg_net(0, (np.zeros(1), np.ones(1)), seed=9)
        model = rg.FisherModel(net, grid_size=32)
        for _ in range(5):
            _, score, _ = rg.fisher_loss(model, no_context(20), rng.normal(size=20))
            assert score >= 0.0

    def test_invalid_score_weight_rejected(self):
        net = rg.make_reg_net(0, (np.zeros(1), np.ones(1)))
        with pytest.raises(ConfigurationError):
            rg.FisherModel(net, score_weight=0.0)


def _train_regularizer(kind: str, residuals: np.ndarray, steps: int = 400):
    """Fit a regularizer net alone on a residual sample; returns its density mode."""
    norm = (np.zeros(1), np.array([max(1.0, np.abs(residuals).max())]))
    net = rg.make_reg_net(0, norm, seed=1, hidden=(24, 24))
    params = net.params.copy()
    state = AdamState.init(params.size, schedule=CosineSchedule(lr0=3e-3, total_steps=steps))
    ctx = no_context(residuals.size)
    for _ in range(steps):
        tape = ad.Tape()
        pv = tape.leaf(params)
        if kind == "ebm":
            loss = rg.ebm_nll(rg.EbmModel(net, grid_size=96), ctx, residuals, params=pv)
        else:
            loss, _, _ = rg.fisher_loss(
                rg.FisherModel(net, grid_size=96), ctx, residuals, params=pv
            )
        g = ad.grad_params(loss, pv)
        params = adam_step(state, params, g)
    fine = np.linspace(residuals.min() - 0.5, residuals.max() + 0.5, 2001)
    f_vals = net.forward_cols([fine], params=params)
    return fine[int(np.argmax(f_vals))]


class TestLearnedDensityMode:
    @pytest.mark.parametrize("kind", ["ebm", "fisher"])
    def test_mode_matches_gaussian_mean(self, kind):
        rng = np.random.default_rng(11)
        residuals = rng.normal(loc=0.3, scale=0.2, size=256)
        mode = _train_regularizer(kind, residuals)
        assert abs(mode - 0.3) < 0.05
