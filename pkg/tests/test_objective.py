"""Loss terms, annealing, variant table, and the training loop."""

import csv
import math
from dataclasses import dataclass

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from varjepa.model import build_model, infer_forward
from varjepa.numeric import InputError, NumericalFailure, Tensor, finite_diff_check, philox_stream
from varjepa.objective import (
    LOSS_COLUMNS,
    AnnealSchedule,
    LossBreakdown,
    LossWeights,
    SigregSettings,
    VARIANT_IDS,
    anneal_weight,
    effective_weights,
    elbo_loss,
    elbo_terms,
    jepa_baseline_loss,
    train_run,
    variant_config,
    write_losses_csv,
)
from varjepa.sigreg import sample_directions, sigreg


@dataclass
class FakeDataset:
    x: np.ndarray
    y: np.ndarray

    @property
    def n(self):
        return self.x.shape[0]

    @property
    def d_obs(self):
        return self.x.shape[1]


def random_dataset(seed, n, d_obs):
    rng = np.random.default_rng(seed)
    return FakeDataset(x=rng.normal(size=(n, d_obs)),
                       y=rng.normal(size=(n, d_obs)))


def tiny_model(seed=0, d_obs=3, d_s=2, d_z=2, hidden=(4,)):
    return build_model(d_obs, d_s, d_z, rng=np.random.default_rng(seed),
                       hidden=hidden)


def random_bundle(model, seed, n=4):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, model.d_obs))
    y = rng.normal(size=(n, model.d_obs))
    noise = (rng.normal(size=(n, model.d_s)), rng.normal(size=(n, model.d_z)),
             rng.normal(size=(n, model.d_s)))
    return x, y, noise, infer_forward(model, x, y, noise)


class TestLossWeights:
    def test_defaults_all_one_no_penalty(self):
        w = LossWeights()
        assert (w.alpha_rec, w.alpha_gen, w.alpha_kl_sx, w.alpha_kl_z,
                w.alpha_kl_sy) == (1.0, 1.0, 1.0, 1.0, 1.0)
        assert (w.lambda_sx, w.lambda_sy) == (0.0, 0.0)

    def test_negative_rejected(self):
        with pytest.raises(InputError):
            LossWeights(alpha_rec=-0.1)

    def test_nan_rejected(self):
        with pytest.raises(InputError):
            LossWeights(lambda_sy=float("nan"))


class TestAnnealing:
    def test_zero_at_ramp_start(self):
        assert anneal_weight(AnnealSchedule(1.0, anneal_steps=10), 0) == 0.0

    def test_final_at_ramp_end(self):
        sched = AnnealSchedule(0.3, anneal_steps=10, start_step=5)
        assert anneal_weight(sched, 15) == 0.3
        assert anneal_weight(sched, 500) == 0.3

    def test_halfway_linearity(self):
        sched = AnnealSchedule(1e-4, anneal_steps=15, start_step=0)
        assert anneal_weight(sched, 7.5) == pytest.approx(0.5e-4, rel=1e-12)

    def test_zero_length_ramp_is_step_function(self):
        sched = AnnealSchedule(2.0, anneal_steps=0, start_step=3)
        assert anneal_weight(sched, 2) == 0.0
        assert anneal_weight(sched, 3) == 2.0

    def test_negative_t_rejected(self):
        with pytest.raises(InputError):
            anneal_weight(AnnealSchedule(1.0), -1)

    @given(
        final=st.floats(0.0, 10.0),
        steps=st.integers(0, 50),
        start=st.integers(0, 50),
        t1=st.integers(0, 200),
        dt=st.integers(0, 200),
    )
    @settings(max_examples=200, deadline=None)
    def test_monotone_and_bounded(self, final, steps, start, t1, dt):
        sched = AnnealSchedule(final, anneal_steps=steps, start_step=start)
        w1 = anneal_weight(sched, t1)
        w2 = anneal_weight(sched, t1 + dt)
        assert w1 <= w2 + 1e-15
        assert w2 <= final + 1e-15
        assert anneal_weight(sched, start + steps) == pytest.approx(final)

    def test_effective_weights_applies_schedules(self):
        cfg = variant_config(
            "A", anneal_kl_sy=AnnealSchedule(0.5, anneal_steps=10),
            anneal_kl_sx=AnnealSchedule(2.0, anneal_steps=0, start_step=4),
        )
        w = effective_weights(cfg, 5)
        assert w.alpha_kl_sy == pytest.approx(0.25)
        assert w.alpha_kl_sx == 2.0
        assert w.alpha_kl_z == 1.0
        assert w.alpha_rec == 1.0


class TestVariantTable:
    EXPECTED = {
        "A": (1, 1, 1, 1, 1, 0, 0),
        "B": (1, 1, 1, 1, 1, 10, 0),
        "C": (1, 1, 1, 1, 1, 0, 10),
        "D": (1, 1, 1, 1, 1, 10, 10),
        "E": (1, 1, 0, 1, 1, 0, 0),
        "F": (1, 1, 1, 1, 0, 0, 0),
        "G": (0, 0, 1, 1, 1, 0, 0),
        "H": (0, 0, 1, 1, 1, 10, 10),
        "I": (1, 1, 0, 0, 0, 0, 0),
        "J": (1, 1, 0, 0, 0, 10, 10),
    }

    def test_all_ten_variants(self):
        assert set(VARIANT_IDS) == set(self.EXPECTED)
        for vid, row in self.EXPECTED.items():
            w = variant_config(vid).weights
            got = (w.alpha_rec, w.alpha_gen, w.alpha_kl_sx, w.alpha_kl_z,
                   w.alpha_kl_sy, w.lambda_sx, w.lambda_sy)
            assert got == row, vid

    def test_lowercase_accepted(self):
        assert variant_config("g").variant == "G"

    def test_unknown_rejected(self):
        with pytest.raises(InputError):
            variant_config("K")

    def test_simulation_defaults(self):
        cfg = variant_config("A")
        assert cfg.lr == 1e-3
        assert cfg.weight_decay == 1e-6
        assert cfg.epochs == 40
        assert cfg.batch_size == 512
        assert cfg.anneal_kl_sx is None
        assert cfg.anneal_kl_z is None
        assert cfg.anneal_kl_sy is None


class TestElboLoss:
    def test_zero_weights_zero_total(self):
        m = tiny_model(1)
        x, y, _, bundle = random_bundle(m, 2)
        zero = LossWeights(0, 0, 0, 0, 0, 0, 0)
        out = elbo_loss(m, bundle, x, y, zero)
        assert out.total == 0.0
        assert out.rec > 0.0

    def test_matched_posterior_prior_kills_coupling_term(self):
        m = tiny_model(3)
        for _, p in m.params.items():
            p.data[...] = 0.0
        x, y, _, bundle = random_bundle(m, 4)
        out = elbo_loss(m, bundle, x, y, LossWeights())
        assert out.kl_sy == 0.0

    def test_scalar_formula_cross_check(self):
        m = tiny_model(5, d_obs=1, d_s=1, d_z=1, hidden=(3,))
        x, y, _, bundle = random_bundle(m, 7, n=2)
        out = elbo_loss(m, bundle, x, y, LossWeights())

        def nll(v, mu, var):
            return 0.5 * (np.log(2.0 * np.pi * var) + (v - mu) ** 2 / var)

        mu_x = m.net("dcx", bundle.s_x).data
        mu_y = m.net("dcy", bundle.s_y).data
        rec = nll(x, mu_x, 1.0).sum(axis=1).mean()
        gen = nll(y, mu_y, 1.0).sum(axis=1).mean()

        def kl_std(mu, lv):
            return 0.5 * (np.exp(lv) + mu**2 - lv - 1.0).sum(axis=1).mean()

        kl_sx = kl_std(bundle.q_sx.mean.data, bundle.q_sx.log_var.data)
        kl_z = kl_std(bundle.q_z.mean.data, bundle.q_z.log_var.data)
        dq, dp = bundle.q_sy, bundle.p_sy
        dlv = dq.log_var.data - dp.log_var.data
        kl_sy = 0.5 * (
            np.exp(dlv) + (dp.mean.data - dq.mean.data) ** 2
            / np.exp(dp.log_var.data) - dlv - 1.0
        ).sum(axis=1).mean()

        assert out.rec == pytest.approx(rec, abs=1e-12)
        assert out.gen == pytest.approx(gen, abs=1e-12)
        assert out.kl_sx == pytest.approx(kl_sx, abs=1e-12)
        assert out.kl_z == pytest.approx(kl_z, abs=1e-12)
        assert out.kl_sy == pytest.approx(kl_sy, abs=1e-12)
        expected_total = rec + gen + kl_sx + kl_z + kl_sy
        assert out.total == pytest.approx(expected_total, abs=1e-10)

    def test_weighted_sum_identity(self):
        m = tiny_model(8)
        x, y, _, bundle = random_bundle(m, 9)
        w = LossWeights(0.5, 2.0, 0.1, 3.0, 0.7, 0.0, 0.0)
        out = elbo_loss(m, bundle, x, y, w)
        assert abs(out.total - out.recombine(w)) < 1e-12

    def test_end_to_end_gradient_with_penalties(self):
        m = tiny_model(11)
        x, y, noise, _ = random_bundle(m, 12)
        w = LossWeights(1.0, 1.0, 1.0, 1.0, 1.0, 2.0, 2.0)
        proj_a = sample_directions(np.random.default_rng(0), 3, m.d_s)
        proj_b = sample_directions(np.random.default_rng(1), 3, m.d_s)
        from varjepa.sigreg import EppsPulleyConfig

        ep = EppsPulleyConfig(n_frequencies=5, max_frequency=3.0)

        def loss_fn(params):
            b = infer_forward(m, x, y, noise)
            terms = elbo_terms(m, b, x, y)
            total = (w.alpha_rec * terms["rec"] + w.alpha_gen * terms["gen"]
                     + w.alpha_kl_sx * terms["kl_sx"]
                     + w.alpha_kl_z * terms["kl_z"]
                     + w.alpha_kl_sy * terms["kl_sy"])
            total = total + w.lambda_sx * sigreg(b.s_x, proj_a, ep)
            total = total + w.lambda_sy * sigreg(b.s_y, proj_b, ep)
            return total

        assert finite_diff_check(loss_fn, m.params) < 1e-4


class TestBaselineLoss:
    def test_equal_inputs_zero(self):
        a = np.random.default_rng(0).normal(size=(5, 16))
        assert jepa_baseline_loss(a, a.copy()).item() == 0.0

    def test_unit_difference_d16(self):
        a = np.zeros((3, 16))
        b = np.ones((3, 16))
        assert jepa_baseline_loss(a, b).item() == pytest.approx(16.0)

    def test_target_gradient_exactly_zero(self):
        rng = np.random.default_rng(1)
        pred = Tensor(rng.normal(size=(4, 8)), requires_grad=True)
        target = Tensor(rng.normal(size=(4, 8)), requires_grad=True)
        loss = jepa_baseline_loss(pred, target)
        loss.backward()
        assert pred.grad is not None
        assert np.any(pred.grad != 0.0)
        assert target.grad is None

    def test_shape_mismatch_rejected(self):
        with pytest.raises(InputError):
            jepa_baseline_loss(np.zeros((2, 3)), np.zeros((2, 4)))


def small_config(variant="A", seed=0, epochs=2, **kw):
    kw.setdefault("batch_size", 16)
    kw.setdefault("d_s", 2)
    kw.setdefault("d_z", 2)
    kw.setdefault("hidden", (8,))
    return variant_config(variant, seed=seed, epochs=epochs, **kw)


SMALL_SIGREG = SigregSettings(n_directions=4, n_frequencies=8,
                              max_frequency=3.0)


class TestTrainRun:
    def test_zero_epochs_returns_initialization(self):
        cfg = small_config(epochs=0)
        ds = random_dataset(0, 32, 5)
        result = train_run(cfg, ds, SMALL_SIGREG)
        ref = build_model(5, 2, 2, rng=philox_stream(0, "init"), hidden=(8,))
        for name, p in result.model.params.items():
            assert np.array_equal(p.data, ref.params[name].data)
        assert result.records == []
        assert result.loss_rows == []
        assert result.steps == 0

    def test_same_seed_identical_sequences(self):
        cfg = small_config("D", seed=4, epochs=2)
        ds = random_dataset(1, 48, 5)
        r1 = train_run(cfg, ds, SMALL_SIGREG)
        r2 = train_run(cfg, ds, SMALL_SIGREG)
        assert r1.loss_rows == r2.loss_rows
        for name, p in r1.model.params.items():
            assert np.array_equal(p.data, r2.model.params[name].data)

    def test_weighted_sum_identity_every_batch(self):
        cfg = small_config("D", seed=2, epochs=2)
        ds = random_dataset(2, 40, 5)
        result = train_run(cfg, ds, SMALL_SIGREG)
        w = cfg.weights
        for row in result.loss_rows:
            breakdown = LossBreakdown(
                rec=row["rec"], gen=row["gen"], kl_sx=row["kl_sx"],
                kl_z=row["kl_z"], kl_sy=row["kl_sy"],
                sigreg_sx=row["sigreg_sx"], sigreg_sy=row["sigreg_sy"],
                total=row["total"],
            )
            assert abs(row["total"] - breakdown.recombine(w)) < 1e-12
            assert row["sigreg_sx"] > 0.0
            assert row["sigreg_sy"] > 0.0

    def test_epoch_step_bookkeeping_and_remainder_kept(self):
        # 40 samples, batch 16: 3 batches per epoch including the short one.
        cfg = small_config(seed=3, epochs=2)
        ds = random_dataset(3, 40, 5)
        result = train_run(cfg, ds, SMALL_SIGREG)
        assert result.steps == 6
        assert [r["epoch"] for r in result.loss_rows] == [1, 1, 1, 2, 2, 2]
        assert [r["step"] for r in result.loss_rows] == [1, 2, 3, 4, 5, 6]

    def test_hook_runs_each_epoch(self):
        cfg = small_config(seed=5, epochs=3)
        ds = random_dataset(5, 32, 5)
        seen = []

        def hook(model, epoch):
            seen.append(epoch)
            return {"epoch": epoch} if epoch % 2 == 1 else None

        result = train_run(cfg, ds, SMALL_SIGREG, hook=hook)
        assert seen == [1, 2, 3]
        assert result.records == [{"epoch": 1}, {"epoch": 3}]

    def test_loss_decreases(self):
        cfg = small_config(seed=6, epochs=5, batch_size=32)
        ds = random_dataset(6, 128, 5)
        result = train_run(cfg, ds, SMALL_SIGREG)
        first = np.mean([r["total"] for r in result.loss_rows
                         if r["epoch"] == 1])
        last = np.mean([r["total"] for r in result.loss_rows
                        if r["epoch"] == 5])
        assert last < first

    def test_annealed_weights_enter_total(self):
        sched = AnnealSchedule(1.0, anneal_steps=4, start_step=0)
        cfg = small_config(seed=7, epochs=1, anneal_kl_sx=sched)
        ds = random_dataset(7, 48, 5)
        result = train_run(cfg, ds, SMALL_SIGREG)
        # Step t uses the weight at the *pre-increment* counter value.
        for i, row in enumerate(result.loss_rows):
            w_t = effective_weights(cfg, i)
            breakdown = LossBreakdown(
                rec=row["rec"], gen=row["gen"], kl_sx=row["kl_sx"],
                kl_z=row["kl_z"], kl_sy=row["kl_sy"],
                sigreg_sx=row["sigreg_sx"], sigreg_sy=row["sigreg_sy"],
                total=row["total"],
            )
            assert abs(row["total"] - breakdown.recombine(w_t)) < 1e-12

    @pytest.mark.filterwarnings("ignore:overflow")
    def test_nonfinite_aborts_with_location(self):
        cfg = small_config(seed=8, epochs=1)
        huge = np.full((16, 5), 1e200)
        ds = FakeDataset(x=huge, y=huge.copy())
        with pytest.raises(NumericalFailure, match=r"epoch 1, batch 0"):
            train_run(cfg, ds, SMALL_SIGREG)

    def test_empty_dataset_rejected(self):
        cfg = small_config()
        ds = FakeDataset(x=np.zeros((0, 5)), y=np.zeros((0, 5)))
        with pytest.raises(InputError):
            train_run(cfg, ds, SMALL_SIGREG)


class TestLossCsv:
    def test_columns_and_round_trip(self, tmp_path):
        cfg = small_config(seed=9, epochs=1)
        ds = random_dataset(9, 32, 5)
        result = train_run(cfg, ds, SMALL_SIGREG)
        path = tmp_path / "losses.csv"
        write_losses_csv(result.loss_rows, path)
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        assert list(rows[0].keys()) == list(LOSS_COLUMNS)
        assert len(rows) == len(result.loss_rows)
        for got, want in zip(rows, result.loss_rows):
            assert int(got["epoch"]) == want["epoch"]
            assert float(got["total"]) == want["total"]
            assert float(got["rec"]) == want["rec"]
