"""Generative contact-map model: architecture, gradients, training, sampling."""

import numpy as np
import pytest

from artmanip.articulated import (
    STATIC_PART_ID,
    SceneConfig,
    make_pliers,
    make_table,
    observe_scene,
)
from artmanip.cvae import (
    GaussianLatent,
    NetworkConfig,
    SaLevel,
    TrainConfig,
    build_dataset,
    build_structure,
    declare_params,
    decode,
    default_config,
    elbo_loss,
    encode_geometry,
    encode_posterior,
    grad,
    init_params,
    kl_divergence,
    load_params,
    model_forward,
    reparameterize,
    sample_contacts,
    save_params,
    tiny_config,
    train,
)
from artmanip.cvae.train import write_curve
from artmanip.errors import InvalidArgumentError, TrainingDivergedError
from artmanip.explore import Demonstration, LabelPool
from artmanip.grasp import FingerContact, GripperContact
from artmanip.rng import derive_seed


@pytest.fixture(scope="module")
def pliers():
    return make_pliers()


@pytest.fixture(scope="module")
def scene(pliers):
    obj, _ = pliers
    return SceneConfig(obj, obj.reference_root_pose(), obj.reference_angles(),
                       (make_table(),))


@pytest.fixture(scope="module")
def observed64(scene):
    return observe_scene(scene, 64, seed=0)


@pytest.fixture(scope="module")
def cfg():
    return tiny_config()


@pytest.fixture(scope="module")
def structure(observed64, cfg):
    return build_structure(observed64.cloud.positions, cfg)


@pytest.fixture(scope="module")
def fresh_store(cfg):
    store = declare_params(cfg)
    init_params(store, seed=0)
    return store


@pytest.fixture(scope="module")
def perturbed_store(cfg):
    # Zero-initialized heads make half the network inactive; shake every
    # parameter so gradient and sensitivity tests exercise all paths.
    store = declare_params(cfg)
    init_params(store, seed=0)
    store.values += 0.1 * np.random.default_rng(42).standard_normal(len(store))
    return store


def antipodal_pair(part, region):
    pos, nrm = part.cloud.positions, part.normals
    plus = [i for i in region.indices if nrm[i][1] > 0.9]
    minus = [i for i in region.indices if nrm[i][1] < -0.9]
    pair = None
    for i in plus:
        for j in minus:
            if (abs(pos[i][0] - pos[j][0]) < 1e-9
                    and abs(pos[i][2] - pos[j][2]) < 1e-9):
                if pair is None or pos[i][0] > pos[pair[0]][0]:
                    pair = (i, j)
    return pair


@pytest.fixture(scope="module")
def pool(pliers, scene):
    obj, regions = pliers
    entries = []
    for order in ((0, 1), (1, 0)):
        contacts = []
        for part in obj.parts:
            i, j = antipodal_pair(part, regions[part.part_id])
            pos, nrm = part.cloud.positions, part.normals
            contacts.append(GripperContact((
                FingerContact(part.part_id, i, tuple(pos[i]), tuple(nrm[i])),
                FingerContact(part.part_id, j, tuple(pos[j]), tuple(nrm[j])))))
        entries.append(Demonstration(tuple(contacts), scene, order))
    return LabelPool(tuple(entries), capacity=len(entries))


class TestConfig:
    def test_default_counts_strictly_decrease(self):
        counts = [lvl.count for lvl in default_config().levels]
        assert all(a > b for a, b in zip(counts, counts[1:]))

    def test_json_round_trip(self):
        cfg = default_config()
        assert NetworkConfig.from_json(cfg.to_json()) == cfg
        tiny = tiny_config(latent_dim=6)
        assert NetworkConfig.from_json(tiny.to_json()) == tiny

    def test_non_decreasing_counts_rejected(self):
        with pytest.raises(InvalidArgumentError):
            NetworkConfig(levels=(SaLevel(16, 0.3, 8, (8,)),
                                  SaLevel(16, 0.6, 4, (8,))),
                          decoder_widths=((8,), (8,)))

    def test_decoder_stage_count_must_match_levels(self):
        with pytest.raises(InvalidArgumentError):
            NetworkConfig(levels=(SaLevel(16, 0.3, 8, (8,)),
                                  SaLevel(8, 0.6, 4, (8,))),
                          decoder_widths=((8,),))

    def test_bad_level_fields_rejected(self):
        with pytest.raises(InvalidArgumentError):
            SaLevel(0, 0.3, 8, (8,))
        with pytest.raises(InvalidArgumentError):
            SaLevel(16, 0.0, 8, (8,))
        with pytest.raises(InvalidArgumentError):
            SaLevel(16, 0.3, 8, ())


class TestParams:
    def test_views_alias_the_flat_vector(self, cfg):
        store = declare_params(cfg)
        name = store.names[0]
        store.view(name)[...] = 7.0
        assert np.all(store.view(name) == 7.0)
        assert store.values[: store.view(name).size].max() == 7.0

    def test_head_layers_start_at_zero(self, fresh_store):
        for name in ("c/head_mu/W", "c/head_mu/b",
                     "c/head_logsig/W", "c/head_logsig/b",
                     "g/head/W", "g/head/b"):
            assert np.all(fresh_store.view(name) == 0.0)

    def test_untrained_posterior_is_standard_normal(self, cfg, structure,
                                                    observed64, fresh_store):
        rgb = observed64.cloud.rgb()
        target = np.zeros((len(observed64), 2))
        latent, _ = encode_posterior(fresh_store, cfg, structure, rgb, target)
        assert np.array_equal(latent.mu, np.zeros(cfg.latent_dim))
        assert np.array_equal(latent.sigma, np.ones(cfg.latent_dim))

    def test_checkpoint_round_trip_is_bit_exact(self, cfg, perturbed_store,
                                                tmp_path):
        prefix = str(tmp_path / "model")
        save_params(perturbed_store, cfg, prefix)
        loaded, loaded_cfg = load_params(prefix)
        assert loaded_cfg == cfg
        assert loaded.names == perturbed_store.names
        assert np.array_equal(loaded.values, perturbed_store.values)


class TestStructure:
    def test_cloud_smaller_than_first_level_rejected(self, cfg):
        pts = np.random.default_rng(0).standard_normal((cfg.levels[0].count - 1, 3))
        with pytest.raises(InvalidArgumentError):
            build_structure(pts, cfg)

    def test_shapes_match_config(self, structure, cfg, observed64):
        assert len(structure.levels) == len(cfg.levels)
        for lvl, spec in zip(structure.levels, cfg.levels):
            assert lvl.positions.shape == (spec.count, 3)
            assert lvl.groups.shape == (spec.count, spec.neighbors)
            assert lvl.rel.shape == (spec.count, spec.neighbors, 3)
        assert len(structure.ups) == len(cfg.levels)
        assert structure.ups[-1].idx.shape[0] == len(observed64)

    def test_groups_stay_inside_radius_or_pad_with_center(self, structure, cfg,
                                                          observed64):
        src = np.asarray(observed64.cloud.positions, dtype=float)
        for lvl, spec in zip(structure.levels, cfg.levels):
            for i in range(spec.count):
                center = lvl.positions[i]
                for member in lvl.groups[i]:
                    d = np.linalg.norm(src[member] - center)
                    assert d <= spec.radius + 1e-12 or member == lvl.indices[i]
            src = lvl.positions

    def test_interpolation_weights_normalized(self, structure):
        for up in structure.ups:
            assert np.allclose(up.w.sum(axis=1), 1.0, atol=1e-12)
            assert np.all(up.w >= 0)

    def test_translation_invariant_features(self, cfg, fresh_store):
        # A generic cloud: box-sampled scenes have exactly equidistant
        # symmetric pairs whose ranking can flip at ulp level under shifts.
        rng = np.random.default_rng(17)
        pos = rng.standard_normal((64, 3)) * 0.2
        rgb = rng.random((64, 3))
        s_a = build_structure(pos, cfg)
        s_b = build_structure(pos + np.array([0.3, -0.2, 0.5]), cfg)
        h_a, _ = encode_geometry(fresh_store, cfg, s_a, rgb)
        h_b, _ = encode_geometry(fresh_store, cfg, s_b, rgb)
        for a, b in zip(h_a, h_b):
            assert np.allclose(a, b, atol=1e-12)

    def test_permutation_invariant_features(self, cfg, observed64, fresh_store):
        pos = np.asarray(observed64.cloud.positions, dtype=float)
        rgb = observed64.cloud.rgb()
        perm = np.random.default_rng(3).permutation(len(pos))
        s_a = build_structure(pos, cfg)
        s_b = build_structure(pos[perm], cfg)
        h_a, _ = encode_geometry(fresh_store, cfg, s_a, rgb)
        h_b, _ = encode_geometry(fresh_store, cfg, s_b, rgb[perm])
        for a, b, la, lb in zip(h_a, h_b, s_a.levels, s_b.levels):
            assert np.allclose(la.positions, lb.positions, atol=1e-12)
            assert np.allclose(a, b, atol=1e-10)


class TestLatentOps:
    def test_zero_eps_returns_mu(self):
        latent = GaussianLatent(np.array([0.3, -1.2]), np.array([0.5, -0.5]))
        assert np.array_equal(reparameterize(latent, np.zeros(2)), latent.mu)

    def test_standard_latent_returns_eps(self):
        latent = GaussianLatent(np.zeros(3), np.zeros(3))
        eps = np.array([0.7, -0.1, 2.0])
        assert np.array_equal(reparameterize(latent, eps), eps)

    def test_eps_shape_mismatch_rejected(self):
        latent = GaussianLatent(np.zeros(3), np.zeros(3))
        with pytest.raises(InvalidArgumentError):
            reparameterize(latent, np.zeros(4))

    def test_kl_zero_at_standard_normal(self):
        assert kl_divergence(np.zeros(5), np.zeros(5)) == 0.0

    def test_kl_closed_form_unit_mean(self):
        assert abs(kl_divergence(np.array([1.0]), np.array([0.0])) - 0.5) < 1e-12

    def test_kl_non_negative_on_random_draws(self):
        rng = np.random.default_rng(11)
        for _ in range(200):
            mu = rng.standard_normal(4) * 3
            log_sig = rng.standard_normal(4) * 2
            assert kl_divergence(mu, log_sig) >= 0.0

    def test_total_is_exact_sum(self):
        rng = np.random.default_rng(5)
        y = (rng.random((40, 2)) < 0.3).astype(float)
        p = rng.random((40, 2))
        latent = GaussianLatent(rng.standard_normal(4), rng.standard_normal(4))
        loss = elbo_loss(y, p, latent)
        assert loss.total == loss.recon + loss.latent

    def test_perfect_prediction_has_tiny_recon(self):
        y = np.array([[0.0, 1.0], [1.0, 0.0]])
        latent = GaussianLatent(np.zeros(2), np.zeros(2))
        loss = elbo_loss(y, y, latent)
        assert loss.recon < 1e-6
        assert loss.latent == 0.0

    def test_shape_mismatch_rejected(self):
        latent = GaussianLatent(np.zeros(2), np.zeros(2))
        with pytest.raises(InvalidArgumentError):
            elbo_loss(np.zeros((3, 2)), np.zeros((4, 2)), latent)


class TestDecode:
    def test_probabilities_cover_cloud(self, cfg, structure, observed64,
                                       perturbed_store):
        rgb = observed64.cloud.rgb()
        hs, _ = encode_geometry(perturbed_store, cfg, structure, rgb)
        probs, _ = decode(perturbed_store, cfg, structure,
                          np.zeros(cfg.latent_dim), hs, rgb)
        assert probs.shape == (len(observed64), 2)
        assert np.all(probs > 0) and np.all(probs < 1)

    def test_distinct_latents_give_distinct_maps(self, cfg, structure,
                                                 observed64, perturbed_store):
        rgb = observed64.cloud.rgb()
        hs, _ = encode_geometry(perturbed_store, cfg, structure, rgb)
        a, _ = decode(perturbed_store, cfg, structure,
                      np.zeros(cfg.latent_dim), hs, rgb)
        z = np.zeros(cfg.latent_dim)
        z[0] = 1.0
        b, _ = decode(perturbed_store, cfg, structure, z, hs, rgb)
        assert np.max(np.abs(a - b)) > 1e-6

    def test_wrong_latent_size_rejected(self, cfg, structure, observed64,
                                        fresh_store):
        rgb = observed64.cloud.rgb()
        hs, _ = encode_geometry(fresh_store, cfg, structure, rgb)
        with pytest.raises(InvalidArgumentError):
            decode(fresh_store, cfg, structure,
                   np.zeros(cfg.latent_dim + 1), hs, rgb)


class TestGradient:
    def test_analytic_gradient_matches_finite_differences(self, cfg, structure,
                                                          observed64,
                                                          perturbed_store):
        rng = np.random.default_rng(9)
        rgb = observed64.cloud.rgb()
        target = np.zeros((len(observed64), 2))
        target[rng.integers(0, len(observed64), 4), rng.integers(0, 2, 4)] = 1.0
        eps = rng.standard_normal(cfg.latent_dim)
        store = perturbed_store.clone()
        _, g, _ = grad(store, cfg, structure, rgb, target, eps)

        def total(values):
            store.values[...] = values
            loss, _, _ = model_forward(store, cfg, structure, rgb, target, eps)
            return loss.total

        base = store.values.copy()
        step = 1e-5
        for k in rng.choice(len(store), size=6, replace=False):
            plus, minus = base.copy(), base.copy()
            plus[k] += step
            minus[k] -= step
            fd = (total(plus) - total(minus)) / (2 * step)
            rel = abs(g[k] - fd) / max(1e-6, abs(g[k]) + abs(fd))
            assert rel < 1e-4, f"param {k}: analytic {g[k]} vs fd {fd}"
        store.values[...] = base

    def test_kl_gradient_vanishes_at_standard_posterior(self, cfg, structure,
                                                        observed64, fresh_store):
        # With zero-initialized heads the posterior is exactly N(0, I), a
        # stationary point of the KL term, so weighting it cannot matter.
        rgb = observed64.cloud.rgb()
        target = np.zeros((len(observed64), 2))
        target[3, 0] = 1.0
        eps = np.random.default_rng(1).standard_normal(cfg.latent_dim)
        _, g_on, _ = grad(fresh_store, cfg, structure, rgb, target, eps,
                          kl_weight=1.0)
        _, g_off, _ = grad(fresh_store, cfg, structure, rgb, target, eps,
                           kl_weight=0.0)
        assert np.array_equal(g_on, g_off)


class TestTraining:
    def test_dataset_one_sample_per_gripper(self, pool, cfg):
        dataset = build_dataset(pool, cfg, sample_size=64)
        assert len(dataset) == sum(len(e.contacts) for e in pool.entries)
        for sample in dataset:
            n = len(sample.structure.positions)
            assert sample.rgb.shape == (n, 3)
            assert sample.target.shape == (n, 2)
            assert np.isclose(sample.target.max(), 1.0)

    def test_dataset_shares_structure_per_scene(self, pool, cfg):
        dataset = build_dataset(pool, cfg, sample_size=64)
        assert all(s.structure is dataset[0].structure for s in dataset)

    def test_training_is_bit_exact_deterministic(self, pool, cfg):
        tc = TrainConfig(steps=5, batch_size=2, seed=3, sample_size=64)
        store_a, curve_a = train(pool, cfg, tc)
        store_b, curve_b = train(pool, cfg, tc)
        assert np.array_equal(store_a.values, store_b.values)
        assert curve_a == curve_b

    def test_zero_learning_rate_keeps_initial_params(self, pool, cfg):
        tc = TrainConfig(steps=3, batch_size=2, learning_rate=0.0, seed=5,
                         sample_size=64)
        store, _ = train(pool, cfg, tc)
        ref = declare_params(cfg)
        init_params(ref, derive_seed(5, "init"))
        assert np.array_equal(store.values, ref.values)

    def test_divergence_cap_aborts(self, pool, cfg):
        tc = TrainConfig(steps=3, batch_size=2, divergence_cap=1e-6,
                         sample_size=64)
        with pytest.raises(TrainingDivergedError):
            train(pool, cfg, tc)

    def test_loss_decreases_on_small_pool(self, pool, cfg):
        small = LabelPool(pool.entries[:1], capacity=1)
        tc = TrainConfig(steps=60, batch_size=2, seed=7, sample_size=64)
        _, curve = train(small, cfg, tc)
        last = float(np.mean([l.recon for l in curve[-5:]]))
        assert last < 0.8 * curve[0].recon

    def test_curve_file_format(self, pool, cfg, tmp_path):
        path = tmp_path / "curve.csv"
        tc = TrainConfig(steps=4, batch_size=2, seed=3, sample_size=64,
                         curve_path=str(path))
        _, curve = train(pool, cfg, tc)
        lines = path.read_text().strip().splitlines()
        assert lines[0] == "epoch,recon,latent,total"
        assert len(lines) == len(curve) + 1
        first = lines[1].split(",")
        assert int(first[0]) == 0
        assert float(first[3]) == curve[0].total


class TestSampling:
    def test_two_point_affordance_forces_the_pair(self, pliers, observed64,
                                                  cfg, fresh_store):
        obj, _ = pliers
        part0 = observed64.indices_for_part(0)[:2]
        contact = sample_contacts(observed64, obj, fresh_store, cfg,
                                  part0, "top1")
        chosen = {f.point_index for f in contact.fingers}
        expected = {int(observed64.source_indices[i]) for i in part0}
        assert chosen == expected
        assert contact.part_id == 0

    def test_static_points_never_selected(self, pliers, observed64, cfg,
                                          fresh_store):
        obj, _ = pliers
        statics = observed64.indices_for_part(STATIC_PART_ID)[:3]
        part1 = observed64.indices_for_part(1)[:2]
        allowed = np.concatenate([statics, part1])
        contact = sample_contacts(observed64, obj, fresh_store, cfg,
                                  allowed, "top1")
        assert contact.part_id == 1

    def test_only_static_points_rejected(self, pliers, observed64, cfg,
                                         fresh_store):
        obj, _ = pliers
        statics = observed64.indices_for_part(STATIC_PART_ID)[:3]
        with pytest.raises(InvalidArgumentError):
            sample_contacts(observed64, obj, fresh_store, cfg, statics, "top1")

    def test_top1_is_deterministic(self, pliers, observed64, cfg,
                                   perturbed_store, structure):
        obj, _ = pliers
        allowed = np.flatnonzero(observed64.part_ids != STATIC_PART_ID)
        a = sample_contacts(observed64, obj, perturbed_store, cfg, allowed,
                            "top1", structure=structure)
        b = sample_contacts(observed64, obj, perturbed_store, cfg, allowed,
                            "top1", structure=structure)
        assert a == b

    def test_prior_mode_reproducible_with_seeded_rng(self, pliers, observed64,
                                                     cfg, perturbed_store,
                                                     structure):
        obj, _ = pliers
        allowed = np.flatnonzero(observed64.part_ids != STATIC_PART_ID)
        a = sample_contacts(observed64, obj, perturbed_store, cfg, allowed,
                            "prior", rng=np.random.default_rng(7),
                            structure=structure)
        b = sample_contacts(observed64, obj, perturbed_store, cfg, allowed,
                            "prior", rng=np.random.default_rng(7),
                            structure=structure)
        assert a == b

    def test_mode_argument_validation(self, pliers, observed64, cfg,
                                      fresh_store):
        obj, _ = pliers
        allowed = observed64.indices_for_part(0)[:2]
        with pytest.raises(InvalidArgumentError):
            sample_contacts(observed64, obj, fresh_store, cfg, allowed, "prior")
        with pytest.raises(InvalidArgumentError):
            sample_contacts(observed64, obj, fresh_store, cfg, allowed,
                            "latent-sweep")
        with pytest.raises(InvalidArgumentError):
            sample_contacts(observed64, obj, fresh_store, cfg, allowed, "best")

    def test_fingers_share_a_part(self, pliers, observed64, cfg,
                                  perturbed_store, structure):
        obj, _ = pliers
        allowed = np.flatnonzero(observed64.part_ids != STATIC_PART_ID)
        for z_value in (-1.0, -0.5, 0.5, 1.0):
            contact = sample_contacts(observed64, obj, perturbed_store, cfg,
                                      allowed, "latent-sweep", z_value=z_value,
                                      structure=structure)
            parts = {f.part_id for f in contact.fingers}
            assert len(parts) == 1
