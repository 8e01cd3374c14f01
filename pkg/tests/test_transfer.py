import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from smartattack.attack import AttackConfig, AttackStrategy
from smartattack.errors import ConfigError
from smartattack.models import TrainConfig, predict, train
from smartattack.skeleton import standard_skeleton
from smartattack.transfer import (evaluate_transfer, joint_displacements,
                                  joint_mean_derivative_norm, pearson_correlation_maps,
                                  pearson_matrix, read_matrix_csv, transfer_attack, write_reports)

import oracles
from conftest import random_frames


class TestJointDisplacements:
    def test_identical_is_zero(self, rng):
        q = random_frames(rng)
        np.testing.assert_array_equal(joint_displacements(q, q), np.zeros(25))

    def test_single_offset(self, rng):
        q = random_frames(rng)
        qh = q.copy()
        qh[4, 3 * 7 + 1] += 0.1
        d = joint_displacements(q, qh)
        assert abs(d[7] - 0.1) < 1e-12
        assert np.count_nonzero(d > 1e-12) == 1

    def test_naive_oracle(self, rng):
        for _ in range(20):
            q = random_frames(rng)
            qh = q + rng.normal(0, 0.03, q.shape)
            np.testing.assert_allclose(joint_displacements(q, qh),
                                       oracles.joint_displacements_loop(q, qh), rtol=1e-12)

    @given(st.floats(-10, 10), st.floats(-10, 10), st.floats(-10, 10))
    @settings(max_examples=30, deadline=None)
    def test_translation_equivariant(self, x, y, z):
        rng = np.random.default_rng(0)
        q = random_frames(rng)
        qh = q + rng.normal(0, 0.03, q.shape)
        shift = np.tile([x, y, z], 25)
        np.testing.assert_allclose(joint_displacements(q + shift, qh + shift),
                                   joint_displacements(q, qh), atol=1e-9)

    def test_bad_shape(self):
        with pytest.raises(ConfigError):
            joint_displacements(np.zeros((10, 74)), np.zeros((10, 74)))


class TestPearson:
    def test_identity_and_negation(self, rng):
        x = rng.normal(size=(30, 1))
        assert abs(pearson_matrix(x, x)[0, 0] - 1) < 1e-12
        assert abs(pearson_matrix(x, -x)[0, 0] + 1) < 1e-12

    def test_naive_oracle(self, rng):
        a, b = rng.normal(size=(40, 5)), rng.normal(size=(40, 4))
        r = pearson_matrix(a, b)
        for i in range(5):
            for j in range(4):
                assert abs(r[i, j] - oracles.pearson_loop(a[:, i], b[:, j])) < 1e-12

    def test_zero_variance_is_undefined(self, rng):
        a = rng.normal(size=(10, 3))
        a[:, 1] = 0.7
        r = pearson_matrix(a, a)
        assert np.isnan(r[1]).all() and np.isnan(r[:, 1]).all()
        assert np.isfinite(r[0, 0])

    def test_needs_two_samples(self):
        with pytest.raises(ConfigError):
            pearson_matrix(np.ones((1, 2)), np.ones((1, 2)))


def _fake_set(rng, n=30):
    """Motions whose attacked displacement grows with per-joint acceleration."""
    originals, adversarials = [], []
    for _ in range(n):
        q = random_frames(rng, 16, scale=rng.uniform(0.05, 0.5))
        acc = joint_mean_derivative_norm(q, 2)
        noise = rng.normal(size=q.shape) * np.repeat(acc, 3)[None]
        originals.append(q)
        adversarials.append(q + 0.5 * noise)
    return originals, adversarials


class TestCorrelationMaps:
    def test_properties(self, rng):
        orig, adv = _fake_set(rng)
        rep = pearson_correlation_maps(orig, adv)
        dd = rep.disp_disp
        np.testing.assert_allclose(dd, dd.T, atol=1e-12)
        np.testing.assert_allclose(np.diag(dd), 1.0, atol=1e-12)
        for m in rep.maps().values():
            assert m.shape == (25, 25)
            assert np.nanmin(m) >= -1 and np.nanmax(m) <= 1
        assert rep.displacement_mean.shape == (25,) and rep.displacement_std.shape == (25,)
        assert rep.diagonal_margin("disp_acc") > 0

    def test_empty(self):
        with pytest.raises(ConfigError):
            pearson_correlation_maps([], [])

    def test_group_by_label(self, small_dataset, rng):
        motions = small_dataset.motions[:40]
        adv = [m.with_frames(m.frames + rng.normal(0, 0.01, m.frames.shape)) for m in motions]
        rep = pearson_correlation_maps(motions, adv, group_by_label=True)
        assert set(rep.by_label) == {m.label for m in motions}

    def test_reports_round_trip(self, rng, tmp_path):
        orig, adv = _fake_set(rng)
        rep = pearson_correlation_maps(orig, adv)
        rep.disp_vel[3, 4] = np.nan
        paths = write_reports(rep, tmp_path / "a")
        names = [p.rsplit("/", 1)[-1] for p in paths]
        assert names == ["disp_acc.csv", "disp_disp.csv", "disp_vel.csv", "long.csv", "summary.json"]
        for name, m in rep.maps().items():
            joints, back = read_matrix_csv(tmp_path / "a" / f"{name}.csv")
            assert joints == list(standard_skeleton().joint_names)
            np.testing.assert_allclose(back, m, atol=1e-9, equal_nan=True)
        assert "null" in (tmp_path / "a" / "disp_vel.csv").read_text()
        summary = json.loads((tmp_path / "a" / "summary.json").read_text())
        assert summary["schema_version"] == 1 and summary["sample_count"] == 30
        long = (tmp_path / "a" / "long.csv").read_text().splitlines()
        assert long[0] == "sample,joint,displacement,speed,acceleration"
        assert len(long) == 1 + 30 * 25
        write_reports(rep, tmp_path / "b")
        for p in paths:
            other = p.replace(str(tmp_path / "a"), str(tmp_path / "b"))
            assert open(p).read() == open(other).read()

    def test_write_empty(self, tmp_path):
        with pytest.raises(ConfigError):
            write_reports(None, tmp_path)


@pytest.fixture(scope="module")
def other_model(small_dataset):
    return train("FrameMLP", small_dataset, TrainConfig(epochs=40, seed=2))


class TestTransfer:
    def test_clean_motions_as_adversarials(self, other_model, small_dataset):
        motions = small_dataset.test
        out = evaluate_transfer(other_model, motions, motions, "ab")
        acc = np.mean(predict(other_model, np.stack([m.frames for m in motions]))
                      == [m.label for m in motions])
        assert out.success_rate == pytest.approx(1 - acc, abs=0)
        assert out.clean_accuracy == acc and out.sample_count == len(motions)

    @pytest.mark.parametrize("text", ["ab", "abn:2"])
    def test_self_transfer_equals_white_box(self, small_model, other_model, eligible, text):
        cfg = AttackConfig(AttackStrategy.parse(text), max_iters=60)
        rep, results = transfer_attack(small_model, {"self": small_model, "other": other_model},
                                       eligible[:24], cfg, return_results=True)
        assert rep.targets["self"].success_rate == rep.white_box_success_rate
        assert rep.white_box_success_rate == np.mean([r.success for r in results])
        for t in rep.targets.values():
            assert 0 <= t.success_rate <= 1 and 0 <= t.clean_accuracy <= 1 and t.sample_count == 24
        doc = rep.to_dict()
        assert doc["schema_version"] == 1 and set(doc["targets"]) == {"self", "other"}

    def test_class_count_mismatch(self, small_model, small_dataset):
        from smartattack.models import new_checkpoint
        with pytest.raises(ConfigError):
            transfer_attack(small_model, [new_checkpoint("FrameMLP", 5)], small_dataset,
                            AttackConfig(max_iters=2))

    def test_sa_transfer_uses_same_targets(self, small_model, eligible):
        cfg = AttackConfig(AttackStrategy.parse("sa:random"), max_iters=60, seed=3)
        rep = transfer_attack(small_model, [small_model], eligible[:16], cfg)
        assert rep.targets["TConvNet"].success_rate == rep.white_box_success_rate
