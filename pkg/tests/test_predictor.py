import math

import numpy as np
import pytest
from scipy import stats
from scipy.special import expit

from heapsae import likelihood as lk
from heapsae.coarsening import FULL, REDUCED, HeapingParams
from heapsae.model import LNM, IntensityParams
from heapsae.predictor import (
    HS_THRESHOLD,
    DomainEstimate,
    PopulationFrame,
    direct_estimates,
    frame_remainder,
    hb_intensity_simulation,
    hb_intensity_survey,
    hb_wbar,
    ppc_stats,
    predict_g,
    predict_w,
    predict_z,
    predict_zstar,
    summarize,
)
from heapsae.sampler import chain_rng


def fake_theta_draws(B=400, D=2, p=1, seed=0, mixture=True):
    """Synthetic posterior draw arrays with realistic scales."""
    rng = chain_rng(seed, 400)
    out = {
        "beta0_mu1": rng.normal(1.7, 0.05, B),
        "beta_mu": rng.normal(0.05, 0.02, (B, p)),
        "u_mu": rng.normal(0, 0.1, (B, D)),
        "sigma1": np.abs(rng.normal(0.5, 0.03, B)),
        "tau_mu": np.abs(rng.normal(0.25, 0.03, B)),
    }
    if mixture:
        out.update(
            beta0_mu2=out["beta0_mu1"] + np.abs(rng.normal(1.0, 0.05, B)),
            sigma2=np.abs(rng.normal(0.25, 0.02, B)),
            beta0_pi=rng.normal(0.4, 0.1, B),
            beta_pi=rng.normal(0.2, 0.05, (B, p)),
            u_pi=rng.normal(0, 0.1, (B, D)),
            tau_pi=np.abs(rng.normal(0.3, 0.03, B)),
        )
    return out


def fake_delta_draws(B=400, D=2, p=1, seed=1):
    rng = chain_rng(seed, 401)
    return {
        "beta0_nu": rng.normal(-0.6, 0.1, B),
        "beta_nu": rng.normal(0.4, 0.05, (B, p)),
        "u_nu": rng.normal(0, 0.15, (B, D)),
        "tau_nu": np.abs(rng.normal(0.3, 0.05, B)),
    }


class TestSummarize:
    def test_constant_draws(self):
        s = summarize(np.full(50, 3.3))
        assert s.mean == pytest.approx(3.3, abs=1e-14)
        assert s.sd == pytest.approx(0.0, abs=1e-14)
        assert s.q95 - s.q05 == 0.0

    def test_quantile_convention(self):
        s = summarize(np.arange(1.0, 101.0))
        assert s.q05 == pytest.approx(5.95)
        assert s.q95 == pytest.approx(95.05)

    def test_mean_matches_compensated_sum(self):
        rng = chain_rng(2, 402)
        draws = np.exp(rng.normal(10, 3, 5000))
        s = summarize(draws)
        assert s.mean == pytest.approx(math.fsum(draws) / len(draws), rel=1e-12)

    def test_errors(self):
        with pytest.raises(ValueError):
            summarize([])
        with pytest.raises(ValueError):
            summarize([1.0])


class TestUnitPredictions:
    def test_w_frequency_matches_posterior_mean(self):
        delta = fake_delta_draws(B=200_000, D=1)
        x = np.array([0.7])
        nu = expit(delta["beta0_nu"] + delta["beta_nu"][:, 0] * 0.7 + delta["u_nu"][:, 0])
        draws = predict_w(x, 0, delta, chain_rng(0, 403))
        p = nu.mean()
        se = math.sqrt(p * (1 - p) / len(draws))
        assert abs(draws.mean() - p) < 3 * se + nu.std() / math.sqrt(len(draws)) * 3

    def test_w_degenerate(self):
        delta = fake_delta_draws(B=500)
        delta["beta0_nu"] = np.full(500, 40.0)
        assert predict_w(np.zeros(1), 0, delta, chain_rng(1, 403)).all()

    def test_z_positive_and_mixture_cdf(self):
        theta = fake_theta_draws(B=100_000, D=1)
        x = np.zeros(1)
        draws = predict_z(x, 0, theta, chain_rng(2, 404))
        assert np.all(draws > 0)
        # empirical CDF against the posterior-averaged mixture CDF
        grid = np.array([2.0, 5.0, 9.0, 15.0, 25.0])
        pi = expit(theta["beta0_pi"] + theta["u_pi"][:, 0])
        mu1 = theta["beta0_mu1"] + theta["u_mu"][:, 0]
        mu2 = theta["beta0_mu2"] + theta["u_mu"][:, 0]
        for z in grid:
            ref = np.mean(
                pi * stats.norm.cdf((math.log(z) - mu1) / theta["sigma1"])
                + (1 - pi) * stats.norm.cdf((math.log(z) - mu2) / theta["sigma2"])
            )
            assert abs(np.mean(draws <= z) - ref) < 0.01

    def test_z_single_component_degenerate(self):
        theta = fake_theta_draws(B=50_000, D=1)
        theta["beta0_pi"] = np.full(50_000, 40.0)  # always component 1
        draws = predict_z(np.zeros(1), 0, theta, chain_rng(3, 404))
        logd = np.log(draws)
        mu = theta["beta0_mu1"] + theta["u_mu"][:, 0]
        assert abs(logd.mean() - mu.mean()) < 0.02
        assert abs(logd.var() - (theta["sigma1"] ** 2 + mu.var()).mean()) < 0.05

    def test_g_degenerate_and_coarsen(self):
        B = 1000
        gam = np.column_stack([np.full(B, 40.0), np.zeros(B)])
        z = np.full(B, 12.3)
        g = predict_g(z, gam, REDUCED, chain_rng(4, 405))
        assert np.all(g == 1)
        assert np.all(predict_zstar(z, g, REDUCED) == 12)
        assert np.all(predict_zstar(np.full(3, 12.7), np.full(3, 5)) == 15)

    def test_draw_index_mismatch(self):
        with pytest.raises(ValueError):
            predict_g(np.zeros(5) + 1, np.zeros((4, 2)), REDUCED, chain_rng(5, 405))
        with pytest.raises(ValueError):
            predict_zstar(np.ones(4), np.ones(3))

    def test_zstar_distribution_matches_enumeration(self):
        # replicated reports must follow the outcome table averaged over
        # the (here degenerate) posterior draws
        theta_d = {
            "beta0_mu1": np.full(100_000, 1.9),
            "beta_mu": np.zeros((100_000, 1)),
            "u_mu": np.zeros((100_000, 1)),
            "sigma1": np.full(100_000, 0.55),
            "tau_mu": np.full(100_000, 0.2),
        }
        gam_d = np.tile([7.0, 9.7, -3.4], (100_000, 1))
        rng = chain_rng(6, 406)
        z = predict_z(np.zeros(1), 0, theta_d, rng)
        g = predict_g(z, gam_d, FULL, rng)
        zs = predict_zstar(z, g, FULL)
        theta = IntensityParams(
            family="ln", beta0_mu1=1.9, beta_mu=np.zeros(1), u_mu=np.zeros(1), sigma1=0.55, tau_mu=0.2
        )
        table = lk.outcome_distribution(np.zeros(1), 0, theta, HeapingParams.full(7.0, 9.7, -3.4))
        probs = table.probabilities()
        counts = np.bincount(zs, minlength=22)[1:]
        mask = probs > 1e-6
        chi2 = float(np.sum((counts[mask] - len(zs) * probs[mask]) ** 2 / (len(zs) * probs[mask])))
        pval = 1 - stats.chi2.cdf(chi2, df=int(mask.sum()) - 1)
        assert pval > 0.01


class TestFrames:
    def test_sizes_and_compress(self):
        frame = PopulationFrame.from_units([0, 0, 1, 1, 1], np.array([[0.0], [0.0], [1.0], [1.0], [0.0]]), 2)
        comp = frame.compress()
        assert comp.domain.shape[0] == 3
        assert frame.sizes().tolist() == [2, 3] == comp.sizes().tolist()

    def test_remainder(self):
        frame = PopulationFrame(np.array([0, 0, 1]), np.array([[0.0], [1.0], [0.0]]), np.array([5, 3, 4]), 2)
        rest = frame_remainder(frame, [0, 0, 1], np.array([[0.0], [0.0], [0.0]]))
        assert rest.sizes().tolist() == [6, 3]
        with pytest.raises(ValueError):
            frame_remainder(frame, [1] * 5, np.zeros((5, 1)))

    def test_validation(self):
        with pytest.raises(ValueError):
            PopulationFrame(np.array([2]), np.zeros((1, 1)), np.array([1]), 2)
        with pytest.raises(ValueError):
            PopulationFrame(np.array([0]), np.zeros((1, 1)), np.array([-1]), 1)


class TestHbEstimators:
    def test_census_domain_zero_width(self):
        delta = fake_delta_draws(B=300, D=2)
        frame = PopulationFrame(np.array([0, 1]), np.array([[0.0], [0.0]]), np.array([4, 3]), 2)
        sample_domain = np.array([0, 0, 0, 0, 1, 1, 1])
        sample_X = np.zeros((7, 1))
        w = np.array([1, 0, 1, 1, 0, 1, 1])
        rest = frame_remainder(frame, sample_domain, sample_X)
        assert rest.sizes().tolist() == [0, 0]
        ests = hb_wbar(sample_domain, w, rest, delta, seed=0)
        for e in ests:
            n_d = (sample_domain == e.domain).sum()
            assert e.ci90[0] == e.ci90[1] == e.point == pytest.approx(w[sample_domain == e.domain].mean())

    def test_empty_sample_domain_is_pure_prediction(self):
        delta = fake_delta_draws(B=2000, D=2)
        frame = PopulationFrame(np.array([0, 1]), np.zeros((2, 1)), np.array([50, 80]), 2)
        ests = hb_wbar(np.array([0, 0]), np.array([1, 0]), frame_remainder(frame, [0, 0], np.zeros((2, 1))), delta, seed=1)
        e1 = [e for e in ests if e.domain == 1][0]
        nu = expit(delta["beta0_nu"] + delta["u_nu"][:, 1])
        assert abs(e1.point - nu.mean()) < 4 * nu.std() / math.sqrt(len(nu)) + 0.01
        assert e1.ci90[0] < e1.point < e1.ci90[1]

    def test_simulation_mode_matches_brute_force(self):
        # independent recomputation: regenerate the same per-domain streams
        # and apply the textbook formulas unit by unit
        theta = fake_theta_draws(B=50, D=2)
        frame = PopulationFrame(
            np.array([0, 0, 1]), np.array([[0.0], [1.0], [0.0]]), np.array([3, 2, 4]), 2
        )
        seed = 99
        zbar, hsbar = hb_intensity_simulation(frame, theta, seed)
        from heapsae.predictor import _REALM_Z, _z_block

        for d in range(2):
            rng = chain_rng(seed, _REALM_Z, d)
            total = np.zeros(50)
            heavy = np.zeros(50)
            n = 0
            for i in np.flatnonzero(frame.domain == d):
                block = _z_block(frame.X[i], d, theta, int(frame.count[i]), rng)
                total += block.sum(axis=1)
                heavy += (block >= HS_THRESHOLD).sum(axis=1)
                n += int(frame.count[i])
            zd = [e for e in zbar if e.domain == d][0]
            hd = [e for e in hsbar if e.domain == d][0]
            assert np.allclose(zd.draws, total / n, atol=1e-12)
            assert np.allclose(hd.draws, heavy / n, atol=1e-12)
            assert zd.point == pytest.approx(float(np.mean(total / n)), abs=1e-12)

    def test_survey_mode_matches_brute_force(self):
        theta = fake_theta_draws(B=40, D=2)
        delta = fake_delta_draws(B=40, D=2)
        frame_rest = PopulationFrame(np.array([0, 1]), np.array([[0.5], [0.2]]), np.array([3, 2]), 2)
        sample_domain = np.array([0, 0, 1, 1])
        sample_X = np.array([[0.1], [0.3], [-0.2], [0.0]])
        sample_w = np.array([1, 0, 1, 1])
        seed = 123
        zbar, hsbar = hb_intensity_survey(sample_domain, sample_X, sample_w, frame_rest, delta, theta, seed)
        from heapsae.predictor import _REALM_Z, _participation_nu, _z_block

        for d in range(2):
            rng = chain_rng(seed, _REALM_Z, d)
            num_z = np.zeros(40)
            num_hs = np.zeros(40)
            smokers = (sample_domain == d) & (sample_w == 1)
            den = np.full(40, float(smokers.sum()))
            for x in sample_X[smokers]:
                z = _z_block(x, d, theta, 1, rng)[:, 0]
                num_z += z
                num_hs += z >= HS_THRESHOLD
            for i in np.flatnonzero(frame_rest.domain == d):
                m = int(frame_rest.count[i])
                nu = _participation_nu(frame_rest.X[i], d, delta)
                w = rng.uniform(size=(40, m)) < nu[:, None]
                z = _z_block(frame_rest.X[i], d, theta, m, rng)
                num_z += (w * z).sum(axis=1)
                num_hs += (w & (z >= HS_THRESHOLD)).sum(axis=1)
                den += w.sum(axis=1)
            zd = [e for e in zbar if e.domain == d][0]
            hd = [e for e in hsbar if e.domain == d][0]
            assert np.allclose(zd.draws, num_z / den, atol=1e-12)
            assert np.allclose(hd.draws, num_hs / den, atol=1e-12)

    def test_no_smoker_domain_is_hard_error(self):
        theta = fake_theta_draws(B=20, D=2)
        delta = fake_delta_draws(B=20, D=2)
        frame_rest = PopulationFrame(np.array([0, 1]), np.zeros((2, 1)), np.array([2, 2]), 2)
        with pytest.raises(ValueError, match="domain 1"):
            hb_intensity_survey(
                np.array([0, 1]), np.zeros((2, 1)), np.array([1, 0]), frame_rest, delta, theta, 0
            )

    def test_point_inside_draw_range_and_bounds(self):
        theta = fake_theta_draws(B=200, D=2)
        frame = PopulationFrame(np.array([0, 1]), np.zeros((2, 1)), np.array([10, 10]), 2)
        zbar, hsbar = hb_intensity_simulation(frame, theta, 5)
        for e in zbar + hsbar:
            assert e.draws.min() <= e.point <= e.draws.max()
        for e in hsbar:
            assert np.all((e.draws >= 0) & (e.draws <= 1))
        for e in zbar:
            assert np.all(e.draws > 0)


class TestPpc:
    def test_bands_are_ordered_integers(self):
        theta = fake_theta_draws(B=200, D=2)
        gam = np.tile([7.0, 9.7, -3.4], (200, 1))
        rng = chain_rng(9, 407)
        domain = rng.integers(0, 2, 60)
        X = rng.normal(size=(60, 1))
        zstar = rng.integers(1, 22, 60)
        rep = ppc_stats(domain, X, sample_zstar=zstar, theta_draws=theta, gamma_draws=gam, mode=FULL, seed=3)
        counts = rep["counts"]
        assert (counts["lo"] <= counts["hi"]).all()
        assert (counts["lo"] >= 0).all()
        assert counts["lo"].dtype.kind == "i" and counts["hi"].dtype.kind == "i"
        assert len(counts) == 21
        cdf = rep["cdf"]
        assert ((cdf["lo"] <= cdf["hi"]) | cdf["lo"].isna()).all()

    def test_participation_band(self):
        delta = fake_delta_draws(B=500, D=2)
        rng = chain_rng(10, 408)
        domain = rng.integers(0, 2, 300)
        X = rng.normal(size=(300, 1))
        nu = expit(delta["beta0_nu"].mean() + delta["beta_nu"][:, 0].mean() * X[:, 0])
        w = rng.binomial(1, nu)
        rep = ppc_stats(domain, X, sample_w=w, delta_draws=delta, seed=4)
        part = rep["participation"]
        assert part["lo"] <= part["hi"]
        assert isinstance(part["inside"], bool)


class TestDirectEstimates:
    def test_census_equals_truth(self):
        rng = chain_rng(11, 409)
        domain = np.repeat([0, 1], 50)
        z = np.exp(rng.normal(2.0, 0.5, 100))
        table = direct_estimates(domain, z, 2, sizes=np.array([50, 50]))
        for d in range(2):
            assert table.loc[table.domain == d, "zbar"].iloc[0] == pytest.approx(z[domain == d].mean())
            truth_hs = (z[domain == d] >= 20).mean()
            assert table.loc[table.domain == d, "hsbar"].iloc[0] == pytest.approx(truth_hs)

    def test_all_heavy(self):
        table = direct_estimates([0, 0, 0], [20.0, 21.0, 20.0], 1)
        assert table["hsbar"].iloc[0] == 1.0

    def test_no_smokers_flagged_missing(self):
        table = direct_estimates([0, 0], [0.0, 0.0], 1, sample_w=np.array([0, 0]))
        assert bool(table["missing_intensity"].iloc[0])
        assert np.isnan(table["zbar"].iloc[0])

    def test_w_share(self):
        table = direct_estimates([0, 0, 0, 0], [5.0, 0, 7.0, 0], 1, sample_w=np.array([1, 0, 1, 0]))
        assert table["wbar"].iloc[0] == 0.5
        assert table["n_smokers"].iloc[0] == 2
