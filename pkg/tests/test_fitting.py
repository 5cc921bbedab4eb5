import math

import numpy as np
import pytest
from scipy.special import expit

from heapsae import likelihood as lk
from heapsae.coarsening import FULL, REDUCED, HeapingParams, coarsen_values, heaping_probs_discrete
from heapsae.fitting import (
    IntensitySpec,
    IntensityTarget,
    ParticipationTarget,
    fit_intensity,
    fit_participation,
)
from heapsae.model import LNM, PriorConfig
from heapsae.sampler import ChainConfig, chain_rng

PRIOR = PriorConfig(mu_center=2.0, mu_scale=0.6)


def synthetic_reports(n=120, D=3, seed=0, scenario=HeapingParams.full(7.0, 9.7, -3.4)):
    rng = chain_rng(seed, 900)
    dom = rng.integers(0, D, n)
    x = rng.binomial(1, 0.4, n).astype(float)
    comp1 = rng.uniform(size=n) < expit(0.4 + 0.2 * x)
    mu = np.where(comp1, 1.7, 2.7) + 0.05 * x + rng.normal(0, 0.25, D)[dom]
    z = np.exp(rng.normal(mu, np.where(comp1, 0.5, 0.25)))
    probs = heaping_probs_discrete(z, scenario)
    L = probs.shape[1]
    levels = np.asarray((1, 5, 10)[:L])[(rng.uniform(size=n)[:, None] > np.cumsum(probs, 1)[:, :-1]).sum(1)]
    zstar = coarsen_values(z, levels, scenario.mode)
    return dom, x[:, None], zstar


def make_target(model, mode=FULL, n=120, D=3, seed=0):
    scenario = HeapingParams.full(7.0, 9.7, -3.4) if mode == FULL else HeapingParams.reduced(2.0, 0.0)
    dom, X, zstar = synthetic_reports(n=n, D=D, seed=seed, scenario=scenario)
    spec = IntensitySpec.from_code(model, mode=mode)
    data = lk.IntensityData.build(dom, X, zstar, mode if spec.coarsened else FULL, D)
    return IntensityTarget(data, spec, PRIOR)


class TestTransforms:
    @pytest.mark.parametrize("model,mode", [("LNM-C", FULL), ("LN-C", REDUCED), ("LNM", FULL), ("LN", FULL)])
    def test_round_trip(self, model, mode):
        target = make_target(model, mode)
        rng = chain_rng(3, 1)
        for _ in range(10):
            x = rng.uniform(-1.5, 1.5, target.dim)
            theta, gamma, _ = target.vector_to_state(x)
            back = target.state_to_vector(theta, gamma)
            assert np.allclose(back, x, atol=1e-12)

    def test_ordered_pair_example(self):
        target = make_target("LNM-C", FULL)
        x = target.state_to_vector(*target.vector_to_state(np.zeros(target.dim))[:2])
        theta, gamma, _ = target.vector_to_state(np.zeros(target.dim))
        gamma2 = HeapingParams.full(7.0, 9.7, gamma.gamma1)
        vec = target.state_to_vector(theta, gamma2)
        assert vec[target.idx["g01"]] == pytest.approx(7.0)
        assert vec[target.idx["lgap_g"]] == pytest.approx(math.log(2.7))

    def test_unit_scale_maps_to_zero_with_zero_jacobian(self):
        target = make_target("LN", FULL)
        x = np.zeros(target.dim)
        theta, _, logjac_at_zero = target.vector_to_state(x)
        assert theta.sigma1 == pytest.approx(1.0)
        x2 = x.copy()
        x2[target.idx["ls1"]] = 0.7
        _, _, logjac_shifted = target.vector_to_state(x2)
        assert logjac_shifted - logjac_at_zero == pytest.approx(0.7)

    def test_every_draw_satisfies_invariants(self):
        target = make_target("LNM-C", FULL, n=60)
        fit_cfg = ChainConfig(chains=2, iterations=160, warmup=80, seed=4, max_depth=5)
        dom, X, zstar = synthetic_reports(n=60)
        fit = fit_intensity(dom, X, zstar, 3, model="LNM-C", mode=FULL, config=fit_cfg, prior=PRIOR)
        d = fit.draws
        assert np.all(d.pooled("beta0_mu1") < d.pooled("beta0_mu2"))
        for name in ("sigma1", "sigma2", "tau_mu", "tau_pi"):
            assert np.all(d.pooled(name) > 0)
        assert np.all(d.pooled("gamma01") < d.pooled("gamma02"))
        assert d.n_draws == fit_cfg.chains * fit_cfg.kept


class TestGradients:
    @pytest.mark.parametrize("model,mode", [("LNM-C", FULL), ("LN-C", REDUCED), ("LNM", FULL), ("LN", FULL)])
    def test_finite_differences(self, model, mode):
        target = make_target(model, mode)
        rng = chain_rng(5, 2)
        h = 1e-5
        for _ in range(3):
            x0 = rng.uniform(-1.0, 1.0, target.dim)
            x0[target.idx["b0mu1"]] += PRIOR.mu_center
            _, grad = target.logp_and_grad(x0)
            for k in range(target.dim):
                e = np.zeros(target.dim)
                e[k] = h
                fd = (target.logp(x0 + e) - target.logp(x0 - e)) / (2 * h)
                denom = max(1.0, abs(grad[k]))
                assert abs(fd - grad[k]) / denom < 1e-4, (model, k)

    def test_second_order_fd_convergence(self):
        target = make_target("LNM-C", FULL)
        rng = chain_rng(6, 3)
        x0 = rng.uniform(-0.5, 0.5, target.dim)
        x0[target.idx["b0mu1"]] += PRIOR.mu_center
        _, grad = target.logp_and_grad(x0)
        k = int(np.argmax(np.abs(grad)))
        errs = []
        for h in (1e-3, 1e-4, 1e-5):
            e = np.zeros(target.dim)
            e[k] = h
            fd = (target.logp(x0 + e) - target.logp(x0 - e)) / (2 * h)
            errs.append(abs(fd - grad[k]))
        # central differences converge at second order until roundoff
        assert errs[1] < errs[0] / 20 or errs[1] < 1e-9
        assert errs[2] < errs[1] or errs[2] < 1e-7

    def test_participation_gradient(self):
        rng = chain_rng(7, 4)
        n, D = 80, 3
        dom = rng.integers(0, D, n)
        X = rng.normal(size=(n, 2))
        w = rng.integers(0, 2, n)
        target = ParticipationTarget(dom, X, w, D, PRIOR)
        x0 = rng.uniform(-1, 1, target.dim)
        _, grad = target.logp_and_grad(x0)
        h = 1e-5
        for k in range(target.dim):
            e = np.zeros(target.dim)
            e[k] = h
            fd = (target.logp(x0 + e) - target.logp(x0 - e)) / (2 * h)
            assert abs(fd - grad[k]) / max(1.0, abs(grad[k])) < 1e-4

    def test_absurd_coordinates_rejected_not_raised(self):
        target = make_target("LNM-C", FULL)
        x = np.zeros(target.dim)
        x[target.idx["ls1"]] = 400.0
        lp, grad = target.logp_and_grad(x)
        assert lp == -np.inf and np.all(grad == 0)


class TestFitDrivers:
    def test_fit_recovers_heaping_sign(self):
        dom, X, zstar = synthetic_reports(n=500, D=3, seed=8)
        fit = fit_intensity(
            dom, X, zstar, 3, model="LN-C", mode=FULL,
            config=ChainConfig(chains=2, iterations=500, warmup=250, seed=1, max_depth=6),
        )
        assert fit.draws.pooled("gamma1").mean() < -1.0
        assert fit.spec.code == "LN-C"
        assert fit.wall_time > 0

    def test_pointwise_shape_and_finiteness(self):
        dom, X, zstar = synthetic_reports(n=60)
        cfg = ChainConfig(chains=2, iterations=120, warmup=60, seed=2, max_depth=5)
        fit = fit_intensity(dom, X, zstar, 3, model="LNM-C", mode=FULL, config=cfg, pointwise=True)
        assert fit.pointwise.shape == (cfg.chains * cfg.kept, 60)
        assert np.all(np.isfinite(fit.pointwise))

    def test_prior_override(self):
        dom, X, zstar = synthetic_reports(n=60)
        cfg = ChainConfig(chains=2, iterations=60, warmup=30, seed=3, max_depth=4)
        fit = fit_intensity(dom, X, zstar, 3, model="LN", config=cfg, prior=PRIOR)
        assert fit.prior is PRIOR

    def test_participation_fit(self):
        rng = chain_rng(11, 6)
        n, D = 400, 4
        dom = rng.integers(0, D, n)
        X = rng.normal(size=(n, 1))
        w = rng.binomial(1, expit(-0.5 + 0.8 * X[:, 0]))
        fit = fit_participation(
            dom, X, w, D, config=ChainConfig(chains=2, iterations=400, warmup=200, seed=5, max_depth=6)
        )
        assert fit.draws.pooled("beta_nu[0]").mean() > 0.3
        assert fit.draws.pooled("beta0_nu").mean() < 0.1
        pd = fit.param_draws()
        assert pd["u_nu"].shape == (fit.draws.n_draws, D)

    def test_unknown_model_code(self):
        with pytest.raises(ValueError):
            IntensitySpec.from_code("GAMMA")
