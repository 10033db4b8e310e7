"""Training loop: determinism, resume equivalence, schedules, and the
simulated-only segmentation supervision."""

import json

import numpy as np
import pytest
import torch

from floodgen.errors import EmptyDomain, MissingMetadata, NonFiniteLoss, OutOfRange
from floodgen.sim_dataset import BatchItem, DomainSpec, BatchSampler, build_index, IndexConfig
from floodgen.trainer import (
    CollatedBatch,
    TrainConfig,
    collate,
    grl_schedule,
    heights_for_item,
    init_train_state,
    train,
    train_height,
    train_step,
)

from conftest import TINY_ARCH, build_scene, make_dataset_root, write_sim_dir


def tiny_config(**overrides) -> TrainConfig:
    defaults = dict(
        arch=TINY_ARCH,
        image_size=32,
        batch_size=2,
        total_steps=4,
        checkpoint_every=2,
        sim_fraction=1.0,
        grl_warmup_steps=10,
        seed=0,
    )
    defaults.update(overrides)
    return TrainConfig(**defaults)


@pytest.fixture
def sim_index(tmp_path):
    root = tmp_path / "data"
    for i in range(3):
        write_sim_dir(root / "sim" / f"s{i}", build_scene(size=32, seed=i, level_m=0.5 + 0.3 * i))
    return build_index(root, IndexConfig(require_real=False))


@pytest.fixture
def mixed_index(tmp_path):
    return build_index(make_dataset_root(tmp_path / "data", n_sim=2, size=32))


def _batch(sampler, config, n=2):
    return collate([sampler.draw() for _ in range(n)], config)


class TestGrlSchedule:
    def test_endpoints_and_plateau(self):
        cfg = tiny_config(grl_initial=0.0, grl_final=1.0, grl_warmup_steps=100)
        assert grl_schedule(0, cfg) == 0.0
        assert grl_schedule(50, cfg) == pytest.approx(0.5)
        assert grl_schedule(100, cfg) == 1.0
        assert grl_schedule(10_000, cfg) == 1.0

    def test_nondecreasing(self):
        cfg = tiny_config(grl_initial=0.1, grl_final=0.9, grl_warmup_steps=37)
        values = [grl_schedule(s, cfg) for s in range(60)]
        assert all(b >= a for a, b in zip(values, values[1:]))

    def test_decreasing_schedule_rejected(self):
        with pytest.raises(OutOfRange):
            tiny_config(grl_initial=1.0, grl_final=0.0)


class TestConfig:
    def test_file_round_trip(self, tmp_path):
        cfg = tiny_config(w_cycle=3.5)
        path = tmp_path / "cfg.json"
        cfg.to_file(path)
        assert TrainConfig.from_file(path) == cfg

    def test_unknown_keys_ignored(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps({"total_steps": 2, "mystery": 1}))
        assert TrainConfig.from_file(path).total_steps == 2

    def test_env_seed_override(self, monkeypatch):
        from floodgen.trainer import effective_seed

        cfg = tiny_config(seed=5)
        assert effective_seed(cfg) == 5
        monkeypatch.setenv("FLOODGEN_SEED", "77")
        assert effective_seed(cfg) == 77


class TestTrainStep:
    def test_zero_steps_leaves_parameters_unchanged(self, sim_index, tmp_path):
        cfg = tiny_config(total_steps=0)
        before = init_train_state(cfg).bundle.state_dict()
        final = train(cfg, sim_index, tmp_path / "run")
        payload = torch.load(final, weights_only=False)
        for name, sd in before.items():
            for key in sd:
                assert torch.equal(sd[key], payload["networks"][name][key])

    def test_step_produces_finite_report(self, sim_index):
        cfg = tiny_config()
        state = init_train_state(cfg)
        sampler = BatchSampler(sim_index, DomainSpec(1.0, 32), seed=0)
        report = train_step(state, _batch(sampler, cfg), cfg)
        assert state.step == 1
        for name, value in report.parts().items():
            assert np.isfinite(value), name
        assert report.seg_sup > 0  # sim items carry labels

    def test_seg_term_zero_on_real_only_batch(self, mixed_index):
        cfg = tiny_config(sim_fraction=0.0)
        state = init_train_state(cfg)
        sampler = BatchSampler(mixed_index, DomainSpec(0.0, 32), seed=0)
        report = train_step(state, _batch(sampler, cfg), cfg)
        assert report.seg_sup == 0.0

    def test_seg_gradients_exactly_zero_on_real_only_batch(self, mixed_index):
        cfg = tiny_config(sim_fraction=0.0)
        state = init_train_state(cfg)
        sampler = BatchSampler(mixed_index, DomainSpec(0.0, 32), seed=0)
        train_step(state, _batch(sampler, cfg), cfg)
        for p in state.bundle.seg_head.parameters():
            assert p.grad is None or torch.all(p.grad == 0)

    def test_optimizers_share_no_parameters(self, sim_index):
        state = init_train_state(tiny_config())
        gen_ids = {id(p) for group in state.optim_gen.param_groups for p in group["params"]}
        disc_ids = {id(p) for group in state.optim_disc.param_groups for p in group["params"]}
        assert gen_ids and disc_ids
        assert gen_ids.isdisjoint(disc_ids)

    def test_nan_input_raises_with_component_name(self, sim_index):
        cfg = tiny_config()
        state = init_train_state(cfg)
        sampler = BatchSampler(sim_index, DomainSpec(1.0, 32), seed=0)
        batch = _batch(sampler, cfg)
        batch.x_a[0, 0, 0, 0] = float("nan")
        with pytest.raises(NonFiniteLoss, match="recon_image|disc_A"):
            train_step(state, batch, cfg)

    def test_semantic_term_active_with_provider(self, sim_index):
        cfg = tiny_config()
        state = init_train_state(cfg)
        sampler = BatchSampler(sim_index, DomainSpec(1.0, 32), seed=0)
        frozen = torch.nn.Conv2d(3, 10, 3, padding=1)
        torch.manual_seed(4)
        torch.nn.init.normal_(frozen.weight, std=0.5)
        report = train_step(state, _batch(sampler, cfg), cfg, semantic_segmenter=frozen)
        assert report.semantic_consistency > 0


class TestTrain:
    def test_same_seed_gives_identical_metrics(self, sim_index, tmp_path):
        cfg = tiny_config(total_steps=3)
        train(cfg, sim_index, tmp_path / "a")
        train(cfg, sim_index, tmp_path / "b")
        assert (tmp_path / "a" / "metrics.jsonl").read_bytes() == (
            tmp_path / "b" / "metrics.jsonl"
        ).read_bytes()

    def test_resume_matches_uninterrupted_run(self, sim_index, tmp_path):
        cfg = tiny_config(total_steps=6, checkpoint_every=3)
        train(cfg, sim_index, tmp_path / "full")
        full_lines = (tmp_path / "full" / "metrics.jsonl").read_text().splitlines()

        train(cfg, sim_index, tmp_path / "resumed", resume=tmp_path / "full" / "ckpt_step3.pt")
        resumed_lines = (tmp_path / "resumed" / "metrics.jsonl").read_text().splitlines()

        assert resumed_lines == full_lines[3:]

    def test_missing_domain_fails_before_any_step(self, tmp_path):
        root = make_dataset_root(tmp_path / "data", n_sim=1, size=32)
        index = build_index(root)
        index = type(index)(index.real_flooded, index.real_non_flooded, {}, (), index.palette)
        with pytest.raises(EmptyDomain):
            train(tiny_config(sim_fraction=1.0), index, tmp_path / "run")

    def test_checkpoints_written_at_interval(self, sim_index, tmp_path):
        cfg = tiny_config(total_steps=4, checkpoint_every=2)
        final = train(cfg, sim_index, tmp_path / "run")
        names = {p.name for p in (tmp_path / "run").glob("*.pt")}
        assert {"ckpt_step2.pt", "ckpt_step4.pt", "ckpt_final.pt"} <= names
        assert final.name == "ckpt_final.pt"


class TestCollate:
    def test_annotation_source_defaults_to_empty_mask(self, mixed_index):
        cfg = tiny_config(mask_source="annotation", sim_fraction=0.0)
        sampler = BatchSampler(mixed_index, DomainSpec(0.0, 32), seed=1)
        batch = collate([sampler.draw()], cfg)
        assert torch.all(batch.mask_a == 0)

    def test_geometry_percentile_masks_nontrivial(self, mixed_index):
        cfg = tiny_config(mask_source="geometry_percentile", sim_fraction=0.0, flood_fraction=0.3)
        sampler = BatchSampler(mixed_index, DomainSpec(0.0, 32), seed=1)
        batch = collate([sampler.draw()], cfg)
        area = batch.mask_a.sum().item() / batch.mask_a.numel()
        assert 0.1 < area < 0.5

    def test_sim_masks_come_from_water_labels(self, sim_index):
        cfg = tiny_config()
        sampler = BatchSampler(sim_index, DomainSpec(1.0, 32), seed=1)
        item = sampler.draw()
        batch = collate([item], cfg)
        assert torch.equal(batch.mask_a, torch.from_numpy(item.mask_a).float().unsqueeze(0))


class TestTrainHeight:
    def test_zero_steps_unchanged(self, sim_index, tmp_path):
        cfg = tiny_config(total_steps=0)
        before = init_train_state(cfg).bundle.height_net.state_dict()
        final = train_height(cfg, sim_index, tmp_path / "h")
        payload = torch.load(final, weights_only=False)
        for key in before:
            assert torch.equal(before[key], payload["networks"]["height_net"][key])

    def test_short_run_writes_metrics(self, sim_index, tmp_path):
        cfg = tiny_config(total_steps=3, batch_size=1, lr_gen=1e-3)
        train_height(cfg, sim_index, tmp_path / "h")
        lines = (tmp_path / "h" / "metrics.jsonl").read_text().splitlines()
        assert len(lines) == 3
        assert all(json.loads(l)["height_l2"] >= 0 for l in lines)

    def test_missing_metadata_raises(self):
        item = BatchItem(
            image_a=np.zeros((8, 8, 3), np.float32),
            image_b=np.zeros((8, 8, 3), np.float32),
            is_sim=True,
            depth=np.ones((8, 8)),
            meta=None,
        )
        with pytest.raises(MissingMetadata):
            heights_for_item(item, tiny_config())

    def test_ground_truth_heights_match_geometry(self, sim_index):
        from floodgen import geometry
        from floodgen.sim_dataset import DepthMap

        sampler = BatchSampler(sim_index, DomainSpec(1.0, None), seed=0)
        item = sampler.draw()
        heights = heights_for_item(item, tiny_config())
        camera = geometry.CameraModel.from_meta(item.meta)
        expected = geometry.backproject_heights(
            DepthMap(item.depth, is_metric=True), camera
        ).values
        assert np.allclose(heights, expected)
