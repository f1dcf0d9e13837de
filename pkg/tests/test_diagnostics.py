"""Oracles for the distribution metrics, probes, and selective evaluation."""

import math
from types import SimpleNamespace

import numpy as np
import pytest

from varjepa.datagen import gen_pairs, sample_sim_process
from varjepa.gaussian import DiagGaussian
from varjepa.model import build_model, embed, infer_forward
from varjepa.numeric import InputError, NumericalFailure, philox_stream
from varjepa.objective import LossWeights, elbo_loss
from varjepa.diagnostics import (
    DIAG_COLUMNS,
    DiagnosticsRecord,
    ProbeConfig,
    aggregated_kl,
    cov_metrics,
    coupling_kl,
    elbo_surgery_estimate,
    epoch_diagnostics,
    risk_coverage,
    roc_auc,
    selective_accuracy,
    sigreg_mse,
    train_linear_probe,
    write_curve_csv,
    write_diagnostics_csv,
)
from varjepa.sigreg import EppsPulleyConfig, sample_directions


def exact_moments(rng, n, d, mean=None, cov_scale=1.0):
    """Sample with the empirical mean/covariance forced to target values."""
    x = rng.normal(size=(n, d))
    x = x - x.mean(axis=0)
    cov = np.atleast_2d(np.cov(x, rowvar=False, ddof=1))
    x = x @ np.linalg.inv(np.linalg.cholesky(cov)).T * math.sqrt(cov_scale)
    if mean is not None:
        x = x + mean
    return x


class TestAggregatedKl:
    def test_exact_standard_moments_give_zero(self):
        x = exact_moments(np.random.default_rng(0), 200, 3)
        assert abs(aggregated_kl(x)) < 1e-8

    def test_mean_shift_quadratic(self):
        mu = np.array([1.0, -2.0, 0.5, 0.0])
        x = exact_moments(np.random.default_rng(1), 300, 4, mean=mu)
        assert aggregated_kl(x) == pytest.approx(0.5 * mu @ mu, abs=1e-6)

    def test_doubled_covariance_closed_form(self):
        rng = philox_stream(7, "eval")
        x = rng.normal(size=(100_000, 16)) * math.sqrt(2.0)
        expected = 0.5 * 16 * (2.0 - math.log(2.0) - 1.0)
        assert expected == pytest.approx(2.4548, abs=1e-3)
        assert aggregated_kl(x) == pytest.approx(expected, rel=0.05)

    def test_needs_more_samples_than_dims(self):
        with pytest.raises(InputError):
            aggregated_kl(np.zeros((4, 4)))

    def test_permutation_invariant(self):
        rng = np.random.default_rng(2)
        x = rng.normal(size=(50, 3))
        perm = rng.permutation(50)
        assert aggregated_kl(x) == aggregated_kl(x[perm])


class TestCovMetrics:
    def test_exact_standard_moments(self):
        x = exact_moments(np.random.default_rng(3), 100, 4)
        frob, norm = cov_metrics(x)
        assert frob < 1e-9
        assert norm < 1e-9

    def test_doubled_covariance_frobenius(self):
        x = exact_moments(np.random.default_rng(4), 200, 16, cov_scale=2.0)
        frob, _ = cov_metrics(x)
        assert frob == pytest.approx(4.0, abs=1e-9)

    def test_mean_norm(self):
        mu = np.zeros(5)
        mu[0] = 3.0
        x = exact_moments(np.random.default_rng(5), 100, 5, mean=mu)
        _, norm = cov_metrics(x)
        assert norm == pytest.approx(3.0, abs=1e-9)

    def test_single_sample_rejected(self):
        with pytest.raises(InputError):
            cov_metrics(np.zeros((1, 3)))


def tiny_model(seed=0, d_obs=4, d_s=2, d_z=2):
    return build_model(d_obs, d_s, d_z, rng=np.random.default_rng(seed),
                       hidden=(8,))


def forward_batch(model, seed, n=6):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, model.d_obs))
    y = rng.normal(size=(n, model.d_obs))
    noise = (rng.normal(size=(n, model.d_s)), rng.normal(size=(n, model.d_z)),
             rng.normal(size=(n, model.d_s)))
    return x, y, infer_forward(model, x, y, noise)


class TestCouplingKl:
    def test_matched_distributions_zero(self):
        m = tiny_model()
        for _, p in m.params.items():
            p.data[...] = 0.0
        _, _, bundle = forward_batch(m, 1)
        assert coupling_kl(bundle) == 0.0

    def test_equals_objective_term(self):
        m = tiny_model(2)
        x, y, bundle = forward_batch(m, 3)
        breakdown = elbo_loss(m, bundle, x, y, LossWeights())
        assert coupling_kl(bundle) == breakdown.kl_sy

    def test_two_scalar_bundles(self):
        q = DiagGaussian(np.array([[0.5], [1.0]]), np.array([[0.0], [-1.0]]))
        p = DiagGaussian(np.array([[0.0], [0.2]]), np.array([[0.3], [0.0]]))

        def scalar_kl(mq, lq, mp, lp):
            return 0.5 * (math.exp(lq - lp) + (mp - mq) ** 2 * math.exp(-lp)
                          - (lq - lp) - 1.0)

        expected = 0.5 * (scalar_kl(0.5, 0.0, 0.0, 0.3)
                          + scalar_kl(1.0, -1.0, 0.2, 0.0))
        bundle = SimpleNamespace(q_sy=q, p_sy=p)
        assert coupling_kl(bundle) == pytest.approx(expected, abs=1e-12)


class TestSurgery:
    def test_single_posterior_has_no_information(self):
        post = DiagGaussian(np.array([[1.0, -0.5]]), np.array([[0.2, -0.3]]))
        est = elbo_surgery_estimate(post, 5000, seed=0)
        assert abs(est.mutual_info) < 1e-12
        assert est.agg_mixture_kl == pytest.approx(
            est.per_sample_kl, abs=3 * est.identity_se + 1e-9)

    def test_identical_posteriors_no_information(self):
        mean = np.tile([0.7, 0.1], (8, 1))
        log_var = np.tile([-0.2, 0.4], (8, 1))
        est = elbo_surgery_estimate(DiagGaussian(mean, log_var), 1000, seed=1)
        assert abs(est.mutual_info) < 1e-9

    def test_decomposition_identity(self):
        rng = np.random.default_rng(6)
        post = DiagGaussian(rng.normal(size=(16, 2)),
                            rng.normal(scale=0.5, size=(16, 2)))
        est = elbo_surgery_estimate(post, 10_000, seed=2)
        gap = est.per_sample_kl - (est.agg_mixture_kl + est.mutual_info)
        assert abs(gap) <= 3 * est.identity_se
        assert est.mutual_info > 0.0
        assert est.agg_mixture_kl > 0.0

    def test_deterministic_given_seed(self):
        rng = np.random.default_rng(7)
        post = DiagGaussian(rng.normal(size=(4, 3)), rng.normal(size=(4, 3)))
        a = elbo_surgery_estimate(post, 500, seed=3)
        b = elbo_surgery_estimate(post, 500, seed=3)
        assert a == b


class TestLinearProbe:
    def test_separable_clusters(self):
        rng = np.random.default_rng(8)
        n = 2000
        labels = rng.integers(0, 2, size=n)
        emb = rng.normal(size=(n, 4)) * 0.5
        emb[:, 0] += np.where(labels == 1, 5.0, -5.0)
        result = train_linear_probe(emb, labels)
        assert result.eval_accuracy >= 0.99

    def test_shuffled_labels_chance_level(self):
        rng = np.random.default_rng(9)
        n = 2000
        emb = rng.normal(size=(n, 8))
        labels = rng.permutation(np.repeat([0, 1], n // 2))
        result = train_linear_probe(emb, labels)
        assert abs(result.eval_accuracy - 0.5) <= 0.05

    def test_constant_embeddings_fall_back_to_majority(self):
        n = 1000
        rng = np.random.default_rng(10)
        labels = (rng.random(n) < 0.3).astype(int)
        emb = np.ones((n, 4)) * 2.5
        result = train_linear_probe(emb, labels)
        order = philox_stream(0, "probe").permutation(n)
        tr, ev = order[: int(0.8 * n)], order[int(0.8 * n) :]
        counts = np.bincount(labels[tr], minlength=2)
        major = int(np.argmax(counts))
        assert result.eval_accuracy == pytest.approx(
            float(np.mean(labels[ev] == major)))

    def test_single_class_rejected(self):
        with pytest.raises(InputError):
            train_linear_probe(np.zeros((50, 2)), np.zeros(50, dtype=int))

    def test_deterministic(self):
        rng = np.random.default_rng(11)
        emb = rng.normal(size=(200, 3))
        labels = rng.integers(0, 3, size=200)
        a = train_linear_probe(emb, labels)
        b = train_linear_probe(emb, labels)
        assert a.eval_accuracy == b.eval_accuracy
        assert np.array_equal(a.weights, b.weights)


class TestSelectiveAccuracy:
    def test_zero_drop_is_plain_accuracy(self):
        pred = np.array([0, 1, 1, 0, 2])
        lab = np.array([0, 1, 0, 0, 1])
        u = np.array([0.1, 0.2, 0.3, 0.4, 0.5])
        assert selective_accuracy(pred, lab, u, 0.0) == pytest.approx(3 / 5)

    def test_oracle_abstention_reaches_one(self):
        rng = np.random.default_rng(12)
        lab = rng.integers(0, 2, size=10)
        pred = lab.copy()
        wrong = [1, 4, 7]
        pred[wrong] = 1 - pred[wrong]
        u = np.zeros(10)
        u[wrong] = 1.0
        assert selective_accuracy(pred, lab, u, 0.3) == 1.0

    def test_uniform_uncertainty_tie_rule(self):
        # All ties: the stable order is by original index, so drop=0.4
        # removes indices 0 and 1 exactly.
        pred = np.array([0, 0, 1, 1, 0])
        lab = np.array([1, 0, 1, 0, 0])
        u = np.full(5, 0.5)
        # kept {2, 3, 4}: correct, wrong, correct
        assert selective_accuracy(pred, lab, u, 0.4) == pytest.approx(2 / 3)

    def test_ceil_count_without_float_drift(self):
        pred = np.zeros(5, dtype=int)
        lab = np.zeros(5, dtype=int)
        u = np.arange(5.0)
        # 0.2 * 5 is 1.0000000000000002 in floats; exactly one sample
        # must be dropped, not two.
        assert selective_accuracy(pred, lab, u, 0.2) == 1.0
        lab2 = lab.copy()
        lab2[4] = 1  # most uncertain, gets dropped
        assert selective_accuracy(pred, lab2, u, 0.2) == 1.0
        assert selective_accuracy(pred, lab2, u, 0.0) == pytest.approx(4 / 5)

    def test_bad_fraction_rejected(self):
        with pytest.raises(InputError):
            selective_accuracy(np.zeros(3), np.zeros(3), np.zeros(3), 1.0)
        with pytest.raises(InputError):
            selective_accuracy(np.zeros(3), np.zeros(3), np.zeros(3), -0.1)

    def test_empty_remainder_rejected(self):
        with pytest.raises(InputError):
            selective_accuracy(np.zeros(1), np.zeros(1), np.zeros(1), 0.5)


class TestRiskCoverage:
    def test_all_correct_constant_curve(self):
        flags = np.ones(100)
        u = np.random.default_rng(13).random(100)
        curve = risk_coverage(flags, u)
        assert len(curve) == 20
        assert curve[0][0] == 1.0
        assert curve[-1][0] == 0.05
        assert all(acc == 1.0 for _, acc in curve)

    def test_oracle_uncertainty_monotone(self):
        rng = np.random.default_rng(14)
        flags = (rng.random(200) < 0.7).astype(float)
        u = np.where(flags == 1, rng.random(200) * 0.4,
                     0.6 + rng.random(200) * 0.4)
        curve = risk_coverage(flags, u)
        accs = [acc for _, acc in curve]
        assert all(b >= a - 1e-12 for a, b in zip(accs, accs[1:]))

    def test_hand_case_n4(self):
        flags = np.array([1.0, 0.0, 1.0, 1.0])
        u = np.array([0.9, 0.8, 0.2, 0.1])
        curve = risk_coverage(flags, u)
        expected = [(1.0, 0.75)]
        expected += [(c, 2 / 3) for c in (0.95, 0.9, 0.85, 0.8, 0.75)]
        expected += [(c, 1.0) for c in (0.7, 0.65, 0.6, 0.55, 0.5)]
        expected += [(c, 1.0) for c in (0.45, 0.4, 0.35, 0.3, 0.25)]
        assert len(curve) == len(expected)
        for (gc, ga), (ec, ea) in zip(curve, expected):
            assert gc == ec
            assert ga == pytest.approx(ea, abs=1e-12)


class TestRocAuc:
    def test_perfect_separation(self):
        flags = np.array([0, 0, 1, 1])
        assert roc_auc(flags.astype(float), flags) == 1.0

    def test_random_scores_near_half(self):
        rng = np.random.default_rng(15)
        scores = rng.random(400)
        flags = np.repeat([0, 1], 200)
        n_pos = n_neg = 200
        sigma = math.sqrt((n_pos + n_neg + 1) / (12 * n_pos * n_neg))
        assert abs(roc_auc(scores, flags) - 0.5) <= 3 * sigma

    def test_four_point_enumeration(self):
        scores = np.array([0.1, 0.4, 0.35, 0.8])
        flags = np.array([0, 0, 1, 1])
        assert roc_auc(scores, flags) == pytest.approx(0.75)

    def test_all_ties_half(self):
        assert roc_auc(np.ones(10), np.repeat([0, 1], 5)) == 0.5

    def test_one_class_rejected(self):
        with pytest.raises(InputError):
            roc_auc(np.arange(4.0), np.ones(4))


FAST_PROBE = ProbeConfig(epochs=5)
SMALL_EP = EppsPulleyConfig(n_frequencies=8, max_frequency=3.0)


def small_eval_dataset(seed=0, n=64, d_obs=4):
    process = sample_sim_process(seed, d_obs=d_obs, d_s=3, d_z=2, gen_hidden=8)
    return gen_pairs(process, n, rng=seed + 1)


class TestEpochDiagnostics:
    def test_zero_weight_model(self):
        m = tiny_model(d_obs=4, d_s=2, d_z=2)
        for _, p in m.params.items():
            p.data[...] = 0.0
        ds = small_eval_dataset()
        proj = sample_directions(np.random.default_rng(0), 4, 2)
        rec = epoch_diagnostics(m, ds, proj, epoch=1, probe_config=FAST_PROBE,
                                ep_config=SMALL_EP)
        assert rec.sx_mean_norm == 0.0
        assert rec.sx_cov_frob_dev == pytest.approx(math.sqrt(2.0))
        assert rec.coupling_kl == 0.0
        assert 0.0 <= rec.probe_acc_sx <= 1.0

    def test_fields_reproduce_component_metrics(self):
        m = tiny_model(seed=3, d_obs=4, d_s=2, d_z=2)
        ds = small_eval_dataset(seed=2)
        proj = sample_directions(np.random.default_rng(1), 4, 2)
        rec = epoch_diagnostics(m, ds, proj, epoch=7, probe_config=FAST_PROBE,
                                ep_config=SMALL_EP)
        sx, _, sy, _ = embed(m, ds.x, ds.y)
        assert rec.epoch == 7
        assert rec.sx_agg_kl == float(aggregated_kl(sx))
        assert rec.sy_agg_kl == float(aggregated_kl(sy))
        assert rec.sx_sigreg_mse == sigreg_mse(sx, proj, SMALL_EP)
        assert rec.sy_sigreg_mse == sigreg_mse(sy, proj, SMALL_EP)
        assert (rec.sx_cov_frob_dev, rec.sx_mean_norm) == cov_metrics(sx)
        assert (rec.sy_cov_frob_dev, rec.sy_mean_norm) == cov_metrics(sy)
        zero = (np.zeros((ds.n, 2)), np.zeros((ds.n, 2)), np.zeros((ds.n, 2)))
        bundle = infer_forward(m, ds.x, ds.y, zero)
        assert rec.coupling_kl == coupling_kl(bundle)
        assert rec.probe_acc_sx == train_linear_probe(
            sx, ds.c, FAST_PROBE).eval_accuracy

    def test_deterministic(self):
        m = tiny_model(seed=4, d_obs=4, d_s=2, d_z=2)
        ds = small_eval_dataset(seed=3)
        proj = sample_directions(np.random.default_rng(2), 4, 2)
        a = epoch_diagnostics(m, ds, proj, probe_config=FAST_PROBE,
                              ep_config=SMALL_EP)
        b = epoch_diagnostics(m, ds, proj, probe_config=FAST_PROBE,
                              ep_config=SMALL_EP)
        assert a == b


class TestRecordValidation:
    def test_nonfinite_rejected(self):
        with pytest.raises(NumericalFailure):
            DiagnosticsRecord(
                epoch=1, sx_agg_kl=float("nan"), sx_sigreg_mse=0.0,
                sx_cov_frob_dev=0.0, sx_mean_norm=0.0, sy_agg_kl=0.0,
                sy_sigreg_mse=0.0, sy_cov_frob_dev=0.0, sy_mean_norm=0.0,
                coupling_kl=0.0, probe_acc_sx=0.5, probe_acc_sy=0.5,
            )

    def test_negative_metric_rejected(self):
        with pytest.raises(NumericalFailure):
            DiagnosticsRecord(
                epoch=1, sx_agg_kl=-0.1, sx_sigreg_mse=0.0,
                sx_cov_frob_dev=0.0, sx_mean_norm=0.0, sy_agg_kl=0.0,
                sy_sigreg_mse=0.0, sy_cov_frob_dev=0.0, sy_mean_norm=0.0,
                coupling_kl=0.0, probe_acc_sx=0.5, probe_acc_sy=0.5,
            )


class TestCsvWriters:
    def test_diagnostics_round_trip(self, tmp_path):
        rec = DiagnosticsRecord(
            epoch=3, sx_agg_kl=0.25, sx_sigreg_mse=1e-4,
            sx_cov_frob_dev=0.5, sx_mean_norm=0.1, sy_agg_kl=3.5,
            sy_sigreg_mse=2e-3, sy_cov_frob_dev=1.5, sy_mean_norm=0.2,
            coupling_kl=2.0, probe_acc_sx=0.99, probe_acc_sy=0.97,
        )
        path = tmp_path / "diagnostics.csv"
        write_diagnostics_csv([rec], path)
        lines = path.read_text().strip().split("\n")
        assert lines[0] == ",".join(DIAG_COLUMNS)
        cells = lines[1].split(",")
        assert int(cells[0]) == 3
        for cell, col in zip(cells[1:], DIAG_COLUMNS[1:]):
            assert float(cell) == getattr(rec, col)

    def test_curve_round_trip(self, tmp_path):
        curve = [(1.0, 0.75), (0.95, 2 / 3)]
        path = tmp_path / "curve.csv"
        write_curve_csv(curve, path)
        lines = path.read_text().strip().split("\n")
        assert lines[0] == "coverage,accuracy"
        got = [tuple(float(c) for c in ln.split(",")) for ln in lines[1:]]
        assert got == curve
