import numpy as np
import pandas as pd
import pytest
from scipy import stats
from scipy.special import expit

from heapsae import likelihood as lk
from heapsae.coarsening import CENSORED_VALUE, FULL, HeapingParams
from heapsae.model import LN, IntensityParams
from heapsae.simstudy import (
    SCENARIOS,
    Population,
    PopulationSpec,
    StudyConfig,
    apply_heaping,
    compute_metrics,
    draw_heaping_levels,
    draw_sample,
    generate_population,
    run_direct_study,
    run_study,
)

SPEC = PopulationSpec()


@pytest.fixture(scope="module")
def population():
    return generate_population(SPEC, 7)


class TestPopulation:
    def test_sizes(self, population):
        assert population.n == 30_000
        assert population.spec.n_domains == 30
        sizes = population.sizes()
        assert sorted(set(sizes.tolist())) == [700, 1000, 1300]
        assert (np.bincount(sizes) > 0).sum() == 3
        assert sizes.sum() == 30_000

    def test_component_probability(self, population):
        # P(component 1 | x = 1) = expit(0.6)
        m = population.x == 1
        frac = np.mean(population.component[m] == 1)
        p = expit(0.6)
        assert p == pytest.approx(0.6457, abs=5e-5)
        assert abs(frac - p) < 3 * np.sqrt(p * (1 - p) / m.sum())

    def test_reproducible(self):
        a = generate_population(SPEC, 7)
        b = generate_population(SPEC, 7)
        assert np.array_equal(a.z, b.z)
        assert np.array_equal(a.x, b.x)
        pd.testing.assert_frame_equal(a.truths(), b.truths())

    def test_truths_exact(self, population):
        t = population.truths()
        d0 = population.domain == 0
        assert t.zbar[0] == pytest.approx(population.z[d0].mean())
        assert t.hsbar[0] == pytest.approx((population.z[d0] >= 20).mean())

    def test_truth_invariance_across_scenarios(self, population):
        before = population.truths()
        idx = draw_sample(population, 0.03, 0)
        apply_heaping(population.z[idx], SCENARIOS[4], 0)
        pd.testing.assert_frame_equal(population.truths(), before)


class TestSampling:
    def test_stratum_sizes(self, population):
        idx = draw_sample(population, 0.03, 1)
        per_domain = np.bincount(population.domain[idx], minlength=30)
        for d, size in enumerate(population.sizes()):
            assert per_domain[d] == {700: 21, 1000: 30, 1300: 39}[size]

    def test_no_duplicates(self, population):
        idx = draw_sample(population, 0.03, 2)
        assert len(np.unique(idx)) == len(idx)

    def test_full_fraction_is_census(self, population):
        idx = draw_sample(population, 1.0, 3)
        assert len(idx) == population.n

    def test_deterministic(self, population):
        assert np.array_equal(draw_sample(population, 0.03, 4), draw_sample(population, 0.03, 4))

    def test_bad_fraction(self, population):
        with pytest.raises(ValueError):
            draw_sample(population, 0.0, 0)


class TestHeaping:
    def test_scenario1_multiple_of_five_rate(self, population):
        # ignorable two-level heaping: the rate of multiple-of-5 reports
        # follows from the outcome enumeration averaged over sampled units
        idx = draw_sample(population, 0.03, 5)
        z = population.z[idx]
        zs = apply_heaping(z, SCENARIOS[1], 6)
        mult5 = (zs % 5 == 0) & (zs <= 20)
        # enumeration oracle on a subsample of units
        rng = np.random.default_rng(0)
        some = rng.choice(len(z), 250, replace=False)
        expected = 0.0
        for i in some:
            theta = IntensityParams(
                family=LN, beta0_mu1=float(np.log(z[i])), beta_mu=np.zeros(1),
                u_mu=np.zeros(1), sigma1=1e-9, tau_mu=0.1,
            )
            table = lk.outcome_distribution(np.zeros(1), 0, theta, SCENARIOS[1])
            probs = table.probabilities()
            expected += sum(probs[v - 1] for v in (5, 10, 15, 20))
        expected /= len(some)
        assert abs(mult5.mean() - expected) < 0.05

    def test_ignorable_heaping_level_independent_of_z(self, population):
        idx = draw_sample(population, 0.03, 7)
        z = population.z[idx]
        g = draw_heaping_levels(z, SCENARIOS[1], 8)
        lo, hi = z < np.median(z), z >= np.median(z)
        table = np.array([
            [np.sum((g == 1) & lo), np.sum((g == 5) & lo)],
            [np.sum((g == 1) & hi), np.sum((g == 5) & hi)],
        ])
        _, pval, _, _ = stats.chi2_contingency(table)
        assert pval > 0.01

    def test_informative_heaping_level_depends_on_z(self, population):
        idx = draw_sample(population, 0.03, 9)
        z = population.z[idx]
        g = draw_heaping_levels(z, SCENARIOS[4], 10)
        lo, hi = z < np.median(z), z >= np.median(z)
        table = np.array([
            [np.sum((g == 1) & lo), np.sum((g != 1) & lo)],
            [np.sum((g == 1) & hi), np.sum((g != 1) & hi)],
        ])
        _, pval, _, _ = stats.chi2_contingency(table)
        assert pval < 1e-6

    def test_deterministic(self, population):
        idx = draw_sample(population, 0.03, 11)
        z = population.z[idx]
        assert np.array_equal(apply_heaping(z, SCENARIOS[2], 12), apply_heaping(z, SCENARIOS[2], 12))

    def test_scenario_nesting(self):
        # pushing the second cutpoint to infinity removes level 10
        rng = np.random.default_rng(13)
        theta = IntensityParams(
            family=LN, beta0_mu1=2.0, beta_mu=np.zeros(1), u_mu=np.zeros(1), sigma1=0.5, tau_mu=0.1
        )
        full = HeapingParams.full(0.5, 30.0, 0.0)
        red = HeapingParams.reduced(0.5, 0.0)
        t_full = lk.outcome_distribution(np.zeros(1), 0, theta, full)
        t_red = lk.outcome_distribution(np.zeros(1), 0, theta, red)
        assert np.allclose(t_full.probabilities(), t_red.probabilities(), atol=1e-9)


class TestMetrics:
    def _estimates(self, points, lo, hi, truth=2.0, scenario=1, model="LN", indicator="zbar"):
        rows = []
        for r, (p, l, h) in enumerate(zip(points, lo, hi)):
            rows.append(
                {
                    "scenario": scenario, "replication": r, "model": model,
                    "indicator": indicator, "domain": 0,
                    "point": p, "lo": l, "hi": h, "truth": truth, "excluded": False,
                }
            )
        return pd.DataFrame(rows)

    def test_perfect_estimator(self):
        est = self._estimates([2.0] * 10, [1.9] * 10, [2.1] * 10)
        per_domain, avg = compute_metrics(est)
        assert avg.arb.iloc[0] == 0.0
        assert avg.arrmse.iloc[0] == 0.0
        assert avg.acov.iloc[0] == 1.0
        assert avg.aw.iloc[0] == pytest.approx(0.2)

    def test_ten_percent_bias(self):
        est = self._estimates([2.2] * 8, [0.0] * 8, [1.0] * 8)
        _, avg = compute_metrics(est)
        assert avg.arb.iloc[0] == pytest.approx(0.1)
        assert avg.arrmse.iloc[0] == pytest.approx(0.1)
        assert avg.acov.iloc[0] == 0.0

    def test_identity_rrmse_decomposition(self):
        rng = np.random.default_rng(14)
        pts = 2.0 * (1 + 0.1 * rng.standard_normal(200))
        est = self._estimates(pts, pts - 1, pts + 1)
        per_domain, _ = compute_metrics(est)
        rel = pts / 2.0 - 1
        rb = rel.mean()
        assert per_domain.rrmse.iloc[0] ** 2 == pytest.approx(rb**2 + rel.var(), abs=1e-10)

    def test_rrmse_bounds_rb(self):
        rng = np.random.default_rng(15)
        pts = 2.0 + rng.standard_normal(50) * 0.3
        est = self._estimates(pts, pts - 0.1, pts + 0.1)
        per_domain, _ = compute_metrics(est)
        assert per_domain.rrmse.iloc[0] >= abs(per_domain.rb.iloc[0])

    def test_excluded_dropped_and_counted(self):
        est = self._estimates([2.0] * 5, [1.9] * 5, [2.1] * 5)
        est.loc[0, "excluded"] = True
        per_domain, avg = compute_metrics(est)
        assert per_domain.n_reps.iloc[0] == 4


class TestDirectStudy:
    def test_true_z_unbiased_and_coarsened_hs_biased(self, population):
        per_domain, avg = run_direct_study(population, (4,), replications=120, fraction=0.03, seed=3)
        truez = avg[(avg.variant == "true-z") & (avg.indicator == "zbar")]
        assert abs(truez.arb.iloc[0]) < 0.02
        coarse_hs = avg[(avg.variant == "scenario-4") & (avg.indicator == "hsbar")]
        assert abs(coarse_hs.arb.iloc[0]) > 0.05


class TestStudyOrchestration:
    @pytest.fixture(scope="class")
    def mini_config(self):
        return StudyConfig(
            seed=5,
            replications=2,
            scenarios=(1,),
            models=("LN",),
            chains=2,
            iterations=400,
            warmup=200,
            max_depth=5,
            rhat_threshold=1.2,
            direct_replications=5,
        )

    def test_run_and_resume_bitwise(self, mini_config, tmp_path):
        out1 = tmp_path / "a"
        est1, _, _, wide1 = run_study(mini_config, out1)
        # a resumed run over the same directory reuses checkpoints bit-for-bit
        est2, _, _, wide2 = run_study(mini_config, out1)
        pd.testing.assert_frame_equal(est1, est2)
        # and a fresh run reproduces the same numbers from seeds alone
        out2 = tmp_path / "b"
        est3, _, _, _ = run_study(mini_config, out2)
        pd.testing.assert_frame_equal(est1, est3)
        assert (out1 / "study_manifest.json").exists()
        assert (out1 / "summary_table.csv").exists()

    def test_partial_checkpoint_resume(self, mini_config, tmp_path):
        out1 = tmp_path / "full"
        run_study(mini_config, out1)
        out2 = tmp_path / "partial"
        (out2 / "raws").mkdir(parents=True)
        # pre-seed the directory with one finished replication, as if the
        # run had been interrupted after it
        first = out1 / "raws" / "scenario1_rep0000.csv"
        (out2 / "raws" / "scenario1_rep0000.csv").write_text(first.read_text())
        run_study(mini_config, out2)
        a = (out1 / "estimates.csv").read_text()
        b = (out2 / "estimates.csv").read_text()
        assert a == b

    def test_row_bookkeeping(self, population, mini_config):
        from heapsae.simstudy import run_replication

        idx = draw_sample(population, 0.03, 0)
        frame = run_replication(population, idx, 1, ("LN",), mini_config, 0)
        assert len(frame) == 30 * 2 * 1
        assert set(frame.indicator) == {"zbar", "hsbar"}
