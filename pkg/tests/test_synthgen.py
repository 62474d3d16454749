import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from naln import synthgen as S
from naln.errors import ParameterError
from oracles import ridge_fit_predict

SMALL = dict(n_classes=16, embed_dim=8, channels=6, samples=32, n_train_reps=6, n_test_reps=2)


def oracle_top1(data, embeddings, alpha=1.0, n_test=2):
    """Held-out top-1 of the SVD ridge oracle, scored with a plain argmax."""
    train, test = S.holdout_split(data.epochs, n_test)
    Y = embeddings.vectors[train.labels]
    pred = ridge_fit_predict(train.epochs.reshape(len(train), -1), Y,
                             test.epochs.reshape(len(test), -1), alpha)
    cand = embeddings.vectors[test.labels]
    cand = cand / np.linalg.norm(cand, axis=1, keepdims=True)
    pred = pred / np.linalg.norm(pred, axis=1, keepdims=True)
    return float(np.mean(test.labels[np.argmax(pred @ cand.T, axis=1)] == test.labels))


class TestConfig:
    def test_defaults(self):
        cfg = S.SynthConfig()
        assert (cfg.n_classes, cfg.embed_dim, cfg.channels, cfg.samples) == (64, 32, 16, 64)

    @pytest.mark.parametrize("kw", [dict(n_classes=1), dict(misalignment_strength=1.5),
                                    dict(alignment_mode="rotated"), dict(noise_std=-1.0)])
    def test_rejects(self, kw):
        with pytest.raises(ParameterError):
            S.SynthConfig(**kw)


class TestGenerate:
    def test_deterministic(self):
        a, b = S.generate(S.SynthConfig(**SMALL, seed=3)), S.generate(S.SynthConfig(**SMALL, seed=3))
        assert a.epochs.epochs.tobytes() == b.epochs.epochs.tobytes()
        assert a.aligned.vectors.tobytes() == b.aligned.vectors.tobytes()
        assert a.misaligned.vectors.tobytes() == b.misaligned.vectors.tobytes()

    def test_seeds_differ(self):
        a, b = S.generate(S.SynthConfig(**SMALL, seed=3)), S.generate(S.SynthConfig(**SMALL, seed=4))
        assert not np.array_equal(a.epochs.epochs, b.epochs.epochs)

    def test_shapes(self):
        d = S.generate(S.SynthConfig(**SMALL, n_extra_images=5))
        assert d.epochs.epochs.shape == (16 * 8, 6, 32)
        assert len(d.aligned) == 21 and d.aligned.dim == 8
        assert np.bincount(d.epochs.labels).tolist() == [8] * 16

    def test_gamma_zero_coincides(self):
        d = S.generate(S.SynthConfig(**SMALL, misalignment_strength=0.0))
        assert d.aligned.vectors.tobytes() == d.misaligned.vectors.tobytes()

    def test_sigma_zero_ridge_perfect(self):
        d = S.generate(S.SynthConfig(**SMALL, noise_std=0.0))
        assert oracle_top1(d, d.aligned, alpha=1e-6) == 1.0
        train, test = S.holdout_split(d.epochs, 2)
        assert S.ridge_top1(train, test, d.aligned, alpha=1e-6) == 1.0

    def test_default_sigma_ridge_above_95(self):
        d = S.generate(S.SynthConfig())
        assert oracle_top1(d, d.aligned, alpha=10.0, n_test=4) >= 0.95

    def test_ridge_implementations_agree(self):
        d = S.generate(S.SynthConfig(**SMALL, noise_std=2.0))
        train, test = S.holdout_split(d.epochs, 2)
        assert S.ridge_top1(train, test, d.aligned, alpha=3.0) == oracle_top1(d, d.aligned, alpha=3.0)

    def test_gamma_monotone(self):
        scores = []
        for g in (0.0, 0.5, 1.0):
            d = S.generate(S.SynthConfig(**SMALL, noise_std=0.5, misalignment_strength=g, seed=1))
            scores.append(oracle_top1(d, d.misaligned, alpha=1.0))
        assert scores[0] >= scores[1] >= scores[2]
        assert scores[0] > scores[2]

    @settings(max_examples=10)
    @given(st.integers(0, 10_000))
    def test_classes_injective(self, seed):
        d = S.generate(S.SynthConfig(**SMALL, noise_std=0.0, seed=seed))
        firsts = np.stack([d.epochs.epochs[d.epochs.labels == k][0] for k in range(16)])
        dist = np.linalg.norm(firsts[:, None] - firsts[None], axis=(2, 3))
        assert (dist[~np.eye(16, dtype=bool)] > 1e-6).all()

    def test_early_envelope(self):
        d = S.generate(S.SynthConfig(noise_std=0.0))
        energy = (d.epochs.epochs ** 2).sum(axis=(0, 1))
        cut = int(S.EARLY_FRACTION * len(energy))
        assert energy[:cut].sum() / energy.sum() > 0.9

    def test_basis_unit_norm(self):
        b = S.temporal_basis(S.SynthConfig())
        np.testing.assert_allclose(np.linalg.norm(b, axis=1), 1.0, rtol=1e-14)


class TestSplits:
    def test_holdout(self):
        d = S.generate(S.SynthConfig(**SMALL))
        train, test = S.holdout_split(d.epochs, 2)
        assert len(train) == 16 * 6 and len(test) == 16
        assert train.repetition_index.max() == 5

    def test_holdout_unaveraged(self):
        d = S.generate(S.SynthConfig(**SMALL))
        _, test = S.holdout_split(d.epochs, 2, average_test=False)
        assert len(test) == 32

    def test_holdout_too_many(self):
        d = S.generate(S.SynthConfig(**SMALL))
        with pytest.raises(ParameterError):
            S.holdout_split(d.epochs, 8)

    def test_select_order(self):
        d = S.generate(S.SynthConfig(**SMALL))
        sub = S.select(d.aligned, [5, 2])
        assert sub.ids.tolist() == [5, 2]
        np.testing.assert_array_equal(sub.vectors[0], d.aligned.vectors[5])

    def test_to_recording_round_trip(self):
        d = S.generate(S.SynthConfig(**SMALL))
        rec = S.to_recording(d.epochs)
        T = d.epochs.n_samples
        for i in (0, 7, len(d.epochs) - 1):
            np.testing.assert_array_equal(rec.samples[:, rec.onsets[i]:rec.onsets[i] + T], d.epochs.epochs[i])
        assert rec.labels.tolist() == d.epochs.labels.tolist()
