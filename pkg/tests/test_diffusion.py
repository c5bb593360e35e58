"""Trainer, guided prediction, and implicit sampler tests.

The sampler inversion uses an oracle noise source: given the true clean
image x*, the exact noise at any x_t is (x_t - sqrt(ab)*x*) / sqrt(1-ab),
and a correct reverse step must reproduce x* from it.
"""

import numpy as np
import pytest

from synthsup.conditioning import ConditionVector, N_CONDITION_ROWS, NULL_ROW
from synthsup.denoiser import Denoiser, DenoiserConfig
from synthsup.diffusion import (
    DiffusionTrainConfig,
    DiffusionTrainer,
    SampleRequest,
    ddim_sample,
    generate_replicas,
    guided_epsilon,
    replica_seed,
    sample_timesteps,
)
from synthsup.schedule import make_schedule
from synthsup.toydata import LabelState, builtin_site, generate_site, labels_matrix

TINY = DenoiserConfig(image_size=8, base_channels=8, channel_multipliers=(1, 2),
                      time_embed_dim=8, cond_embed_dim=8)


class _OracleDenoiser:
    """Returns the exact noise for a fixed clean image."""

    def __init__(self, x_star, schedule):
        self.x_star = x_star
        self.schedule = schedule
        self.config = DenoiserConfig(image_size=x_star.shape[0], base_channels=8,
                                     channel_multipliers=(1,), time_embed_dim=8,
                                     cond_embed_dim=8)
        self.eval_count = 0

    def predict(self, x_t, t, cond):
        self.eval_count += 1
        ab = self.schedule.alpha_bars[int(t)]
        return (np.asarray(x_t, dtype=np.float64) - np.sqrt(ab) * self.x_star) \
            / np.sqrt(1.0 - ab)


class _ConstantDenoiser:
    """Distinct constant outputs for conditional and null rows."""

    def __init__(self, size, eps_c, eps_u):
        self.config = DenoiserConfig(image_size=size, base_channels=8,
                                     channel_multipliers=(1,), time_embed_dim=8,
                                     cond_embed_dim=8)
        self.eps_c, self.eps_u = eps_c, eps_u
        self.eval_count = 0

    def predict(self, x_t, t, cond):
        self.eval_count += 1
        rows = np.atleast_2d(np.asarray(cond))
        is_null = rows[:, NULL_ROW] == 1.0
        x = np.asarray(x_t, dtype=np.float64)
        batch = x if x.ndim == 3 else x[None]
        out = np.where(is_null[:, None, None], self.eps_u, self.eps_c) \
            * np.ones_like(batch)
        return out if x.ndim == 3 else out[0]


class TestSampleTimesteps:
    def test_full_sequence(self):
        np.testing.assert_array_equal(sample_timesteps(10, 10), np.arange(9, -1, -1))

    def test_strided_subsequence_properties(self):
        ts = sample_timesteps(1000, 200)
        assert ts[0] == 999 and ts[-1] == 0
        assert np.all(np.diff(ts) < 0)
        assert len(ts) == 200

    def test_bounds_checked(self):
        with pytest.raises(ValueError):
            sample_timesteps(10, 11)
        with pytest.raises(ValueError):
            sample_timesteps(10, 0)


class TestGuidedEpsilon:
    def test_hand_computed_blend(self):
        model = _ConstantDenoiser(8, eps_c=2.0, eps_u=0.5)
        x = np.zeros((8, 8))
        cond = ConditionVector(labels=(1,) + (0,) * 13)
        out = guided_epsilon(model, x, 3, cond.to_multihot(), cfg_scale=4.0)
        # 2.0 + 4.0 * (2.0 - 0.5) = 8.0
        np.testing.assert_allclose(out, 8.0)

    def test_scale_zero_is_single_conditional_pass(self):
        model = _ConstantDenoiser(8, eps_c=1.0, eps_u=-1.0)
        cond = ConditionVector(labels=(1,) + (0,) * 13)
        out = guided_epsilon(model, np.zeros((8, 8)), 3, cond.to_multihot(), 0.0)
        assert model.eval_count == 1
        np.testing.assert_allclose(out, 1.0)

    def test_positive_scale_costs_two_passes(self):
        model = _ConstantDenoiser(8, eps_c=1.0, eps_u=-1.0)
        cond = ConditionVector(labels=(1,) + (0,) * 13)
        guided_epsilon(model, np.zeros((8, 8)), 3, cond.to_multihot(), 7.5)
        assert model.eval_count == 2

    def test_negative_scale_rejected(self):
        model = _ConstantDenoiser(8, eps_c=1.0, eps_u=-1.0)
        with pytest.raises(ValueError):
            guided_epsilon(model, np.zeros((8, 8)), 3, np.zeros(N_CONDITION_ROWS), -1.0)


class TestSamplerInversion:
    def test_oracle_denoiser_recovers_original_full_steps(self):
        sched = make_schedule("cosine", 1000)
        rng = np.random.default_rng(4)
        x_star = rng.uniform(-0.9, 0.9, (8, 8))
        model = _OracleDenoiser(x_star, sched)
        img = ddim_sample(model, SampleRequest(cond=ConditionVector.null(),
                                               cfg_scale=0.0, n_steps=1000,
                                               seed=1), sched)
        np.testing.assert_allclose(img, (x_star + 1.0) / 2.0, atol=1e-5)

    def test_oracle_denoiser_recovers_original_strided(self):
        sched = make_schedule("cosine", 1000)
        rng = np.random.default_rng(5)
        x_star = rng.uniform(-0.9, 0.9, (8, 8))
        model = _OracleDenoiser(x_star, sched)
        img = ddim_sample(model, SampleRequest(cond=ConditionVector.null(),
                                               cfg_scale=0.0, n_steps=50,
                                               seed=2), sched)
        np.testing.assert_allclose(img, (x_star + 1.0) / 2.0, atol=1e-4)

    def test_eval_count_matches_step_count(self):
        sched = make_schedule("cosine", 100)
        model = _OracleDenoiser(np.zeros((8, 8)), sched)
        ddim_sample(model, SampleRequest(cond=ConditionVector.null(),
                                         cfg_scale=0.0, n_steps=40, seed=0), sched)
        assert model.eval_count == 40

    def test_output_in_unit_range_and_deterministic(self):
        sched = make_schedule("cosine", 50)
        model = Denoiser.create(TINY, seed=1)
        req = SampleRequest(cond=ConditionVector(labels=(1,) * 14), cfg_scale=1.5,
                            n_steps=10, seed=7)
        a = ddim_sample(model, req, sched)
        b = ddim_sample(model, req, sched)
        np.testing.assert_array_equal(a, b)
        assert a.min() >= 0.0 and a.max() <= 1.0
        diff_seed = ddim_sample(model, SampleRequest(cond=req.cond, cfg_scale=1.5,
                                                     n_steps=10, seed=8), sched)
        assert not np.array_equal(a, diff_seed)


class TestTrainer:
    def _corpus(self, n=24):
        recs = generate_site(builtin_site("siteA", n_images=n, image_size=8), seed=3)
        images = np.stack([r.pixels for r in recs])
        conds = [r.condition_vector() for r in recs]
        return images, conds

    def test_step_returns_finite_loss_and_updates_params(self):
        model = Denoiser.create(TINY, seed=0)
        before = {n: p.detach().clone() for n, p in model.params.tensors().items()}
        trainer = DiffusionTrainer(model, make_schedule("cosine", 10),
                                   DiffusionTrainConfig(steps=1, batch_size=4,
                                                        learning_rate=1e-3, seed=0))
        images, conds = self._corpus(8)
        loss = trainer.train_step(images[:4], conds[:4])
        assert np.isfinite(loss) and loss > 0
        changed = any(not np.allclose(before[n], p.detach())
                      for n, p in model.params.tensors().items())
        assert changed

    def test_training_is_deterministic_given_seed(self):
        def run():
            model = Denoiser.create(TINY, seed=5)
            cfg = DiffusionTrainConfig(steps=6, batch_size=4, learning_rate=1e-3,
                                       seed=11)
            trainer = DiffusionTrainer(model, make_schedule("cosine", 10), cfg)
            images, conds = self._corpus(8)
            return trainer.fit(images, conds)

        np.testing.assert_array_equal(run(), run())

    def test_loss_drops_on_desk_corpus(self):
        # 2000 steps over a 200-image corpus: late loss under 70% of early loss
        recs = generate_site(builtin_site("siteA", n_images=200), seed=21)
        images = np.stack([r.pixels for r in recs])
        conds = [r.condition_vector() for r in recs]
        cfg = DenoiserConfig(image_size=32, base_channels=16,
                             channel_multipliers=(1, 2), time_embed_dim=32,
                             cond_embed_dim=32)
        model = Denoiser.create(cfg, seed=1)
        trainer = DiffusionTrainer(model, make_schedule("cosine", 1000),
                                   DiffusionTrainConfig(steps=2000, batch_size=16,
                                                        learning_rate=1e-4, seed=2))
        losses = trainer.fit(images, conds)
        early = float(np.mean(losses[:100]))
        late = float(np.mean(losses[-100:]))
        assert late <= 0.7 * early, f"early {early:.4f} late {late:.4f}"

    def test_rejects_bad_batches(self):
        model = Denoiser.create(TINY, seed=0)
        trainer = DiffusionTrainer(model, make_schedule("cosine", 10),
                                   DiffusionTrainConfig(steps=1, batch_size=2, seed=0))
        with pytest.raises(ValueError):
            trainer.train_step(np.zeros((0, 8, 8)), [])
        with pytest.raises(ValueError):
            trainer.train_step(np.zeros((2, 8, 8)), [ConditionVector.null()])

    def test_config_validation(self):
        with pytest.raises(ValueError):
            DiffusionTrainConfig(steps=0)
        with pytest.raises(ValueError):
            DiffusionTrainConfig(guidance_drop_rate=1.0)
        with pytest.raises(ValueError):
            DiffusionTrainConfig(ema_decay=1.0)
        with pytest.raises(ValueError):
            SampleRequest(cond=ConditionVector.null(), cfg_scale=-0.5)

    def test_ema_model_differs_from_raw_after_training(self):
        model = Denoiser.create(TINY, seed=5)
        trainer = DiffusionTrainer(model, make_schedule("cosine", 10),
                                   DiffusionTrainConfig(steps=5, batch_size=4,
                                                        learning_rate=1e-2, seed=1))
        images, conds = self._corpus(8)
        trainer.fit(images, conds)
        ema = trainer.ema_model()
        raw = model.params.tensors()
        assert any(not np.allclose(p.detach(), raw[n].detach())
                   for n, p in ema.params.tensors().items())


class TestGenerateReplicas:
    def test_seed_derivation_is_frozen(self):
        assert replica_seed(7, 3, 2) == 6211333317197239358
        assert replica_seed(0, 0, 1) == 11566106937896339926
        assert replica_seed(7, 3, 2) != replica_seed(7, 3, 1)
        assert replica_seed(7, 3, 2) != replica_seed(7, 2, 2)

    def _sources(self, n=6):
        return generate_site(builtin_site("siteA", n_images=n, image_size=8), seed=13)

    def test_labels_demographics_and_provenance_copied(self):
        sched = make_schedule("cosine", 10)
        model = Denoiser.create(TINY, seed=2)
        sources = self._sources()
        out = generate_replicas(model, sources, n_replicas=2, cfg_scale=0.0,
                                base_seed=9, schedule=sched, n_steps=4,
                                batch_size=4)
        assert len(out) == 12
        # replica-major order: first pass covers every source in order
        for j, rec in enumerate(out[:6]):
            src = sources[j]
            assert rec.label_states == src.label_states
            assert (rec.age_decade, rec.sex, rec.race) == \
                (src.age_decade, src.sex, src.race)
            assert rec.patient_id == src.patient_id
            prov = rec.provenance
            assert prov.kind == "synthetic"
            assert prov.replica_index == 1 and prov.source_index == j
            assert prov.cfg_scale == 0.0
            assert prov.seed == replica_seed(9, j, 1)
        assert all(r.provenance.replica_index == 2 for r in out[6:])
        np.testing.assert_array_equal(labels_matrix(out[:6]), labels_matrix(sources))

    def test_marginal_prevalence_preserved_exactly(self):
        sched = make_schedule("cosine", 10)
        model = Denoiser.create(TINY, seed=2)
        sources = self._sources()
        out = generate_replicas(model, sources, n_replicas=3, cfg_scale=0.0,
                                base_seed=1, schedule=sched, n_steps=2,
                                batch_size=8)
        np.testing.assert_array_equal(labels_matrix(out).mean(axis=0),
                                      labels_matrix(sources).mean(axis=0))

    def test_reproducible_and_replicas_differ(self):
        sched = make_schedule("cosine", 10)
        model = Denoiser.create(TINY, seed=2)
        sources = self._sources(3)
        a = generate_replicas(model, sources, 2, 0.0, 5, sched, n_steps=3,
                              batch_size=2)
        b = generate_replicas(model, sources, 2, 0.0, 5, sched, n_steps=3,
                              batch_size=2)
        for ra, rb in zip(a, b):
            np.testing.assert_array_equal(ra.pixels, rb.pixels)
        assert not np.array_equal(a[0].pixels, a[3].pixels)

    def test_validates_arguments(self):
        sched = make_schedule("cosine", 10)
        model = Denoiser.create(TINY, seed=2)
        with pytest.raises(ValueError):
            generate_replicas(model, [], 1, 0.0, 0, sched)
        with pytest.raises(ValueError):
            generate_replicas(model, self._sources(2), 0, 0.0, 0, sched)
