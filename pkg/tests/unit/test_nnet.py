"""
Tests for the policy/value networks, training step and checkpoint format
"""

import numpy as np
import pytest
import torch
from pydantic import ValidationError

from api.services import nnet
from api.services.features import NUM_GLOBALS, NUM_PLANES, encode, symmetric_state, transform_policy
from api.services.rules import Move, apply_move, new_game
from utils.errors import CorruptCheckpoint, NonFiniteLoss, ShapeMismatch, VersionMismatch


def random_batch(rng, size=5, rows=6):
    planes = (rng.random((rows, NUM_PLANES, size, size)) < 0.3).astype(np.float32)
    planes[:, 0] = 1.0
    globals_ = rng.random((rows, NUM_GLOBALS)).astype(np.float32)
    logits = rng.normal(size=(rows, size * size + 1))
    policy = np.exp(logits) / np.exp(logits).sum(axis=1, keepdims=True)
    values = rng.uniform(-1, 1, size=rows)
    return nnet.TrainingBatch.from_arrays(planes, globals_, policy, values)


def directional_check(params, batch, rng, checks, eps=1e-6):
    params = params.to_dtype(torch.float64)
    grads = nnet.gradients(params, batch)
    errors = []
    for _ in range(checks):
        direction = {name: torch.randn_like(t) for name, t in params.tensors.items()}
        analytic = sum((grads[n] * d).sum().item() for n, d in direction.items())
        with torch.no_grad():
            for name, t in params.tensors.items():
                t.add_(eps * direction[name])
            plus = nnet.batch_loss(params, batch).item()
            for name, t in params.tensors.items():
                t.sub_(2 * eps * direction[name])
            minus = nnet.batch_loss(params, batch).item()
            for name, t in params.tensors.items():
                t.add_(eps * direction[name])
        numeric = (plus - minus) / (2 * eps)
        errors.append(abs(numeric - analytic) / max(abs(numeric), abs(analytic), 1e-8))
    return max(errors)


class TestConfig:
    def test_vit_heads_must_divide_embedding(self):
        with pytest.raises(ValidationError):
            nnet.NetworkConfig(backbone="vit", channels=30, heads=4)

    def test_unknown_preset(self):
        with pytest.raises(ValueError):
            nnet.NetworkConfig.preset("b99c1")

    def test_presets_scale_up(self):
        desk = nnet.count_parameters(nnet.NetworkConfig.preset("desk-cnn"))
        bigger = nnet.count_parameters(nnet.NetworkConfig.preset("b6c96"))
        assert bigger > desk
        vit = nnet.NetworkConfig.preset("vit-b4")
        assert (vit.channels, vit.heads, vit.patch_size, vit.mlp_dim) == (384, 6, 2, 1536)


class TestForward:
    def test_zero_heads_give_uniform_policy(self, tiny_config):
        params = nnet.create_network(tiny_config, seed=3, zero_heads=True)
        planes, globals_ = encode(new_game(5))
        out = nnet.forward(params, planes.planes, globals_.values)
        np.testing.assert_allclose(out.policy().detach().numpy(), np.full((1, 26), 1 / 26), atol=1e-6)
        assert out.value.item() == pytest.approx(0.0)

    @pytest.mark.parametrize("size", [5, 7, 9])
    def test_output_shapes_for_each_board(self, tiny_net, tiny_vit_config, size):
        planes, globals_ = encode(new_game(size))
        for params in (tiny_net, nnet.create_network(tiny_vit_config)):
            out = nnet.forward(params, planes.planes, globals_.values)
            assert out.policy_logits.shape == (1, size * size + 1)
            assert out.value.shape == (1,)
            assert -1.0 <= out.value.item() <= 1.0

    def test_vit_backbone_grid_matches_board(self, tiny_vit_config):
        params = nnet.create_network(tiny_vit_config)
        planes, globals_ = encode(new_game(7))
        grid = nnet.vit_backbone(params, planes.planes, globals_.values)
        assert grid.shape == (1, 7, 7, tiny_vit_config.channels)

    def test_wrong_plane_count(self, tiny_net):
        with pytest.raises(ShapeMismatch):
            nnet.forward(tiny_net, np.zeros((1, 3, 5, 5)), np.zeros((1, NUM_GLOBALS)))

    def test_board_larger_than_max(self):
        params = nnet.create_network(nnet.NetworkConfig(blocks=1, channels=4, max_board=7))
        with pytest.raises(ShapeMismatch):
            nnet.forward(params, np.zeros((1, NUM_PLANES, 9, 9)), np.zeros((1, NUM_GLOBALS)))

    def test_same_seed_same_network(self, tiny_config):
        a = nnet.create_network(tiny_config, seed=11)
        b = nnet.create_network(tiny_config, seed=11)
        assert a.fingerprint() == b.fingerprint()
        assert nnet.create_network(tiny_config, seed=12).fingerprint() != a.fingerprint()

    @pytest.mark.parametrize("k", range(8))
    def test_symmetrized_cnn_is_equivariant(self, tiny_config, k):
        params = nnet.symmetrize_cnn_weights(nnet.create_network(tiny_config, seed=5))
        state = apply_move(apply_move(new_game(5), Move.play(0, 1)), Move.play(3, 2))
        planes, globals_ = encode(state)
        sym_planes, sym_globals = encode(symmetric_state(state, k))
        base = nnet.forward(params, planes.planes, globals_.values)
        moved = nnet.forward(params, sym_planes.planes, sym_globals.values)
        expected = transform_policy(base.policy_logits[0].detach().numpy(), 5, k)
        np.testing.assert_allclose(moved.policy_logits[0].detach().numpy(), expected, atol=1e-5)
        assert moved.value.item() == pytest.approx(base.value.item(), abs=1e-5)


class TestTraining:
    @pytest.mark.parametrize("backbone", ["cnn", "vit"])
    def test_gradients_match_finite_differences(self, tiny_config, tiny_vit_config, rng, backbone):
        config = tiny_config if backbone == "cnn" else tiny_vit_config
        params = nnet.create_network(config, seed=2)
        assert directional_check(params, random_batch(rng), rng, checks=5) <= 1e-4

    @pytest.mark.slow
    @pytest.mark.parametrize("preset", ["desk-cnn", "desk-vit"])
    def test_gradients_match_finite_differences_desk_dims(self, rng, preset):
        params = nnet.create_network(nnet.NetworkConfig.preset(preset), seed=2)
        assert directional_check(params, random_batch(rng, size=7), rng, checks=50) <= 1e-4

    def test_duplicated_batch_has_same_gradient(self, tiny_net, rng):
        batch = random_batch(rng)
        single = nnet.gradients(tiny_net, batch)
        double = nnet.gradients(tiny_net, batch.duplicated())
        for name in single:
            torch.testing.assert_close(single[name], double[name], rtol=1e-4, atol=1e-6)

    def test_mixed_size_batch(self, tiny_net, rng):
        a, b = random_batch(rng, size=5, rows=3), random_batch(rng, size=7, rows=2)
        batch = nnet.TrainingBatch(a.groups + b.groups)
        assert len(batch) == 5
        grads = nnet.gradients(tiny_net, batch)
        assert set(grads) == set(tiny_net.tensors)

    def test_empty_batch(self, tiny_net):
        with pytest.raises(ValueError):
            nnet.gradients(tiny_net, nnet.TrainingBatch())

    def test_nan_targets_raise(self, tiny_net, rng):
        batch = random_batch(rng)
        batch.groups[0].value_targets[0] = np.nan
        with pytest.raises(NonFiniteLoss):
            nnet.gradients(tiny_net, batch)

    def test_sgd_reduces_loss_on_a_fixed_batch(self, tiny_net, rng):
        batch = random_batch(rng)
        before = nnet.batch_loss(tiny_net, batch).item()
        for _ in range(30):
            nnet.sgd_step(tiny_net, nnet.gradients(tiny_net, batch), lr=0.01, momentum=0.9)
        assert nnet.batch_loss(tiny_net, batch).item() < before
        assert tiny_net.step_count == 30

    def test_zero_learning_rate_changes_nothing(self, tiny_net, rng):
        before = tiny_net.fingerprint()
        nnet.sgd_step(tiny_net, nnet.gradients(tiny_net, random_batch(rng)), lr=0.0)
        assert tiny_net.fingerprint() == before


class TestCheckpoints:
    def test_round_trip(self, tiny_net, tmp_path):
        tiny_net.step_count = 17
        path = nnet.save_checkpoint(tiny_net, tmp_path / "net.ckpt")
        loaded = nnet.load_checkpoint(path)
        assert loaded.fingerprint() == tiny_net.fingerprint()
        assert loaded.step_count == 17
        assert loaded.config == tiny_net.config

    def test_flipped_byte_is_corrupt(self, tiny_net, tmp_path):
        path = nnet.save_checkpoint(tiny_net, tmp_path / "net.ckpt")
        raw = bytearray(path.read_bytes())
        raw[len(raw) // 2] ^= 0xFF
        path.write_bytes(bytes(raw))
        with pytest.raises(CorruptCheckpoint):
            nnet.load_checkpoint(path)

    def test_truncated_is_corrupt(self, tiny_net, tmp_path):
        path = nnet.save_checkpoint(tiny_net, tmp_path / "net.ckpt")
        path.write_bytes(path.read_bytes()[:-40])
        with pytest.raises(CorruptCheckpoint):
            nnet.load_checkpoint(path)

    def test_other_version(self, tiny_net, tmp_path):
        path = nnet.save_checkpoint(tiny_net, tmp_path / "net.ckpt")
        raw = bytearray(path.read_bytes())
        raw[4:8] = (99).to_bytes(4, "little")
        path.write_bytes(bytes(raw))
        with pytest.raises(VersionMismatch):
            nnet.load_checkpoint(path)

    def test_expected_config_mismatch(self, tiny_net, tmp_path):
        path = nnet.save_checkpoint(tiny_net, tmp_path / "net.ckpt")
        with pytest.raises(ShapeMismatch):
            nnet.load_checkpoint(path, expected=nnet.NetworkConfig(blocks=2, channels=8))
