import json
import math

import numpy as np
import pytest
from scipy import stats

from citeffect.errors import InitializationError, InputError
from citeffect.inference import (
    ChainConfig,
    FitSummary,
    PosteriorDraws,
    diagnostics,
    initial_point,
    map_estimate,
    percentile_summary,
    sample_posterior,
    summarize,
)
from citeffect.likelihood import PosteriorModel, SubsetData, subset_from_trajectories
from citeffect.model import JournalParams
from citeffect.simulate import SyntheticJournal, simulate_journal


@pytest.fixture(scope="module")
def small_subset():
    spec = SyntheticJournal("J0", JournalParams(math.log(0.5), 0.5, 2.0), 12, beta=1095.0)
    arts = simulate_journal(spec, seed=21)
    return subset_from_trajectories([a.trajectory for a in arts])


@pytest.fixture(scope="module")
def small_fit(small_subset):
    return sample_posterior(small_subset, config=ChainConfig(n_chains=2, n_iterations=400, seed=3))


def fake_draws(values, divergent=None):
    """Draws for a single journal with no articles."""
    values = np.asarray(values, dtype=float)
    shape = values.shape[:2]
    return PosteriorDraws(
        names=["Phi[J]", "epsilon[J]", "theta[J]"], values=values,
        divergent=np.zeros(shape, bool) if divergent is None else divergent,
        accept_stat=np.ones(shape), n_leapfrog=np.ones(shape, int), tree_depth=np.ones(shape, int),
        step_size=np.ones(shape[0]), article_ids=[], journal_ids=["J"], article_journal=[])


class TestChainConfig:
    """Defaults and validation of the sampler configuration."""

    def test_defaults(self):
        c = ChainConfig()
        assert (c.n_chains, c.n_iterations, c.target_accept, c.max_tree_depth) == (4, 1000, 0.98, 20)
        assert c.n_warmup == 500 and c.n_draws == 500

    @pytest.mark.parametrize("kw", [{"n_chains": 0}, {"warmup_fraction": 0.0},
                                    {"warmup_fraction": 1.0}, {"target_accept": 1.0},
                                    {"target_accept": 0.0}])
    def test_invalid(self, kw):
        with pytest.raises(InputError):
            ChainConfig(**kw)


class TestSampling:
    """Determinism, shapes and error handling of the sampler."""

    def test_bit_identical_with_same_seed(self, small_subset, small_fit):
        again = sample_posterior(small_subset, config=ChainConfig(n_chains=2, n_iterations=400, seed=3))
        np.testing.assert_array_equal(again.values, small_fit.values)
        np.testing.assert_array_equal(again.divergent, small_fit.divergent)

    def test_different_seed_differs(self, small_subset, small_fit):
        other = sample_posterior(small_subset, config=ChainConfig(n_chains=2, n_iterations=400, seed=4))
        assert not np.array_equal(other.values, small_fit.values)

    def test_jobs_do_not_change_draws(self, small_subset):
        cfg = dict(n_chains=2, n_iterations=60, seed=9)
        a = sample_posterior(small_subset, config=ChainConfig(**cfg))
        b = sample_posterior(small_subset, config=ChainConfig(jobs=2, **cfg))
        np.testing.assert_array_equal(a.values, b.values)

    def test_shapes_and_positivity(self, small_subset, small_fit):
        assert small_fit.values.shape == (2, 200, small_subset.dim)
        assert small_fit.divergent.dtype == bool
        for kind in ("phi", "beta", "epsilon", "theta"):
            assert np.all(small_fit.block(kind) > 0)

    def test_article_draws(self, small_fit):
        d = small_fit.article_draws("A0")
        assert set(d) == {"phi", "beta", "theta"} and d["phi"].size == 400
        with pytest.raises(KeyError):
            small_fit.article_draws("nope")

    def test_empty_subset_rejected(self):
        with pytest.raises(InputError):
            sample_posterior(SubsetData([], []))

    def test_initialization_error(self, small_subset):
        model = PosteriorModel(small_subset)
        model.log_density_and_gradient = lambda x, jacobian=True: (-math.inf, np.zeros_like(x))
        with pytest.raises(InitializationError):
            initial_point(model, np.random.default_rng(0), max_retries=3)

    def test_bad_supplied_init(self, small_subset):
        x0 = np.full(small_subset.dim, np.nan)
        with pytest.raises(InitializationError):
            sample_posterior(small_subset, config=ChainConfig(n_chains=1, n_iterations=10), init=x0)

    def test_prior_recovery_theta(self):
        # prior-only run: theta marginal against the analytic Gamma(2, rate 2)
        draws = sample_posterior(SubsetData(["J"], []),
                                 config=ChainConfig(n_chains=4, n_iterations=1000, seed=1))
        theta = draws.pooled("theta[J]")
        q = np.quantile(theta, [0.05, 0.5, 0.95])
        np.testing.assert_allclose(q, stats.gamma(2, scale=0.5).ppf([0.05, 0.5, 0.95]), atol=0.05)
        assert draws.divergent.sum() == 0

    def test_csv_round_trip(self, small_fit, tmp_path):
        path = tmp_path / "draws.csv"
        small_fit.to_csv(path)
        again = PosteriorDraws.from_csv(path)
        np.testing.assert_array_equal(again.values, small_fit.values)
        np.testing.assert_array_equal(again.divergent, small_fit.divergent)
        assert again.names == small_fit.names and again.article_journal == small_fit.article_journal

    def test_csv_is_columnar(self, small_fit, tmp_path):
        path = tmp_path / "draws.csv"
        small_fit.to_csv(path)
        lines = path.read_text().splitlines()
        assert lines[0].split(",")[:2] == ["chain", "draw"]
        assert len(lines) == 1 + small_fit.n_chains * small_fit.n_draws


class TestDiagnostics:
    """R-hat, ESS and the divergence exclusion rule."""

    def test_iid_chains_retained(self):
        rng = np.random.default_rng(0)
        diag = diagnostics(fake_draws(rng.standard_normal((4, 500, 3))))
        assert all(0.99 <= v <= 1.02 for v in diag.rhat.values())
        assert not diag.excluded and not diag.rhat_warning

    def test_offset_chain(self):
        x = np.random.default_rng(1).standard_normal((4, 500, 3))
        x[0, :, 0] += 10
        diag = diagnostics(fake_draws(x))
        assert diag.rhat["Phi[J]"] > 1.1 and diag.rhat_warning

    def test_single_divergence_excludes(self):
        x = np.random.default_rng(2).standard_normal((2, 50, 3))
        div = np.zeros((2, 50), bool)
        div[1, 7] = True
        diag = diagnostics(fake_draws(x, div))
        assert diag.n_divergent == 1 and diag.excluded

    def test_single_chain_flagged(self):
        diag = diagnostics(fake_draws(np.random.default_rng(3).standard_normal((1, 100, 3))))
        assert not diag.rhat_available and not diag.rhat_warning
        assert all(math.isnan(v) for v in diag.rhat.values())
        assert all(v > 0 for v in diag.ess.values())


class TestSummaries:
    """Percentile summaries and derived journal quantities."""

    def test_odd_median(self):
        assert percentile_summary(np.arange(1, 102))[0] == 51

    def test_linear_interpolation(self):
        med, lo, hi = percentile_summary(np.arange(1, 101))
        # rank 0.025 * 99 = 2.475 from the first order statistic
        assert lo == pytest.approx(3.475)
        assert hi == pytest.approx(97.525)
        assert med == 50.5

    def test_derived_quantities(self):
        rng = np.random.default_rng(4)
        x = np.stack([rng.normal(-1, 0.3, (2, 300)), rng.uniform(0.1, 1, (2, 300)),
                      rng.gamma(2, 1, (2, 300))], axis=-1)
        s = summarize(fake_draws(x)).journal("J")
        phi, theta = x[..., 0].reshape(-1), x[..., 2].reshape(-1)
        # exponentiate per draw, then interpolate
        assert s["exp_Phi"].lower == pytest.approx(np.percentile(np.exp(phi), 2.5), rel=1e-12)
        assert s["exp_Phi"].median == pytest.approx(np.median(np.exp(phi)), rel=1e-12)
        rate = np.exp(phi) * theta
        assert s["effective_rate"].median == pytest.approx(np.median(rate))
        assert s["effective_rate"].upper == pytest.approx(np.percentile(rate, 97.5))
        for p in s.values():
            assert p.lower <= p.median <= p.upper

    def test_exp_commutes_at_order_statistics(self):
        # 201 draws: the 2.5/50/97.5 points fall exactly on order statistics
        phi = np.random.default_rng(6).normal(0, 1, 201)
        x = np.stack([phi, np.ones(201), np.ones(201)], axis=-1).reshape(1, 201, 3)
        s = summarize(fake_draws(x)).journal("J")
        med, lo, hi = percentile_summary(phi)
        assert s["exp_Phi"].median == pytest.approx(math.exp(med), rel=1e-12)
        assert s["exp_Phi"].lower == pytest.approx(math.exp(lo), rel=1e-12)
        assert s["exp_Phi"].upper == pytest.approx(math.exp(hi), rel=1e-12)

    def test_round_trip(self, small_fit):
        fs = summarize(small_fit)
        again = FitSummary.from_dict(json.loads(json.dumps(fs.to_dict())))
        assert again.params.keys() == fs.params.keys()
        assert again.journal("J0")["theta"].median == fs.journal("J0")["theta"].median
        assert again.excluded == fs.excluded

    def test_excluded_flag_follows_divergences(self):
        x = np.random.default_rng(5).standard_normal((2, 40, 3))
        div = np.zeros((2, 40), bool)
        div[0, 0] = True
        assert summarize(fake_draws(x, div)).excluded
        assert not summarize(fake_draws(x)).excluded

    def test_empty_draws(self):
        with pytest.raises(InputError):
            summarize(fake_draws(np.zeros((1, 0, 3))))


class TestMap:
    """Posterior mode search."""

    def test_empty_data_prior_modes(self):
        res = map_estimate(SubsetData.prior_only(1, 1))
        assert res.converged and res.grad_norm <= 1e-6
        assert res.params["theta"][0] == pytest.approx(0.5, rel=1e-6)
        assert res.params["beta"][0] == pytest.approx(365.0, rel=1e-6)

    def test_no_articles_hyperprior_modes(self):
        res = map_estimate(SubsetData(["J"], []))
        assert res.params["Phi"][0] == pytest.approx(0.0, abs=1e-6)
        # InvGamma(2, 1) mode
        assert res.params["epsilon"][0] == pytest.approx(1 / 3, rel=1e-6)

    def test_non_convergence_falls_back(self, small_subset):
        res = map_estimate(small_subset, max_iter=1)
        assert not res.converged
        assert np.isfinite(PosteriorModel(small_subset).log_density(res.x))

    def test_stationary_on_data(self, small_subset):
        res = map_estimate(small_subset)
        assert res.converged and res.grad_norm <= 1e-6
        assert np.all(np.abs(PosteriorModel(small_subset).gradient(res.x, jacobian=False)) <= 1e-6)

    def test_unique_mode_from_truth_and_default_start(self, small_subset):
        a = map_estimate(small_subset)
        x0 = a.x + np.random.default_rng(0).normal(0, 0.3, a.x.size)
        b = map_estimate(small_subset, x0=x0)
        assert b.params["theta"][0] == pytest.approx(a.params["theta"][0], rel=1e-5)

    @pytest.mark.slow
    @pytest.mark.xfail(strict=True, reason="joint mode collapses the latent-rate spread; "
                       "theta compensates and leaves the marginal interval")
    def test_map_theta_inside_posterior_interval(self):
        spec = SyntheticJournal("J0", JournalParams(math.log(0.2), 0.5, 2.0), 50, beta=1095.0)
        data = subset_from_trajectories([a.trajectory for a in simulate_journal(spec, seed=0)])
        res = map_estimate(data)
        assert res.converged
        s = summarize(sample_posterior(data, config=ChainConfig(seed=0))).journal("J0")["theta"]
        assert s.lower <= res.params["theta"][0] <= s.upper
