"""
Desk-scale acceptance experiments.

Trains SpecTf on the default synthetic corpus once and checks validation
AUC against the band-threshold screen, cross-grid generalization on a
425-band resampling, and where the cloud-class attention peaks. These take
minutes, so they carry the ``slow`` marker and run with ``pytest -m slow``.
"""

import unittest

import numpy as np
import pytest

import sys
import os
sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from batch_inference import score_dataset
from constants import CloudLabel
from interpret import attention_batch, mean_attention
from metrics import ScoredSet, roc_auc
from models import BandGrid, LabeledDataset
from reference_models import baseline_scores, nearest_band
from spectf import SpecTfConfig, build
from spectra import aviris_ng_like_grid, resample_spectrum, sample_dataset, split_by_scene
from synthetic import SynthConfig, synth_generate
from training import TrainConfig, checkpoint_model, model_inputs, train

SEED = 0


@pytest.mark.slow
class TestSyntheticCorpus(unittest.TestCase):
    """SpecTf trained on the default synthetic corpus."""

    @classmethod
    def setUpClass(cls):
        """Generate, sample, split by scene and train once."""
        synth_config = SynthConfig()
        scenes = synth_generate(synth_config, SEED)
        dataset = sample_dataset(scenes, synth_config.cap_per_class, SEED)
        cls.train_set, cls.validation_set = split_by_scene(
            dataset, synth_config.validation_fraction, SEED)
        model = build(SpecTfConfig(), SEED)
        cls.result = train(model, cls.train_set, cls.validation_set,
                           TrainConfig(learning_rate=1e-3, batch_size=64, epochs=8, seed=SEED))
        cls.model = checkpoint_model(model, cls.result.best)

    def test_corpus_is_large_enough(self):
        """At least 20 scenes, split without shared scenes."""
        self.assertGreaterEqual(len(self.train_set.scenes) + len(self.validation_set.scenes), 20)
        self.assertFalse(set(self.train_set.scenes) & set(self.validation_set.scenes))

    def test_beats_band_threshold_screen(self):
        """Validation AUC ≥ 0.98 and above the baseline's AUC on the same records."""
        auc = self.result.best.val_auc
        baseline = roc_auc(ScoredSet(baseline_scores(self.validation_set.values,
                                                     self.validation_set.grid),
                                     self.validation_set.labels)).auc
        self.assertGreaterEqual(auc, 0.98)
        self.assertGreater(auc, baseline)

    def test_checkpoint_reproduces_best_auc(self):
        """The retained checkpoint scores the validation set at the recorded AUC."""
        scores = score_dataset(self.model, self.validation_set)
        auc = roc_auc(ScoredSet(scores, self.validation_set.labels)).auc
        self.assertAlmostEqual(auc, self.result.best.val_auc, delta=1e-9)

    def test_generalizes_to_finer_grid(self):
        """The same model on a 425-band resampling of the held-out scenes."""
        fine = aviris_ng_like_grid()
        resampled = LabeledDataset(
            resample_spectrum(self.validation_set.values, self.validation_set.grid, fine),
            self.validation_set.labels, self.validation_set.scene_ids, fine)
        self.assertEqual(fine.count, 425)
        scores = score_dataset(self.model, resampled)
        auc = roc_auc(ScoredSet(scores, resampled.labels)).auc
        self.assertGreaterEqual(auc, 0.90)

    def test_cloud_attention_peaks_at_water_vapor_trough(self):
        """The cloud-class mean attention peaks within two bands of 1380 nm."""
        validation = model_inputs(self.model, self.validation_set)
        attention = mean_attention(self.model, validation, CloudLabel.CLOUD)
        peak = int(np.argmax(attention.values))
        self.assertLessEqual(abs(peak - nearest_band(validation.grid, 1380.0)), 2)

    def test_attention_sums_to_band_count(self):
        """Every attention spectrum sums to n."""
        validation = model_inputs(self.model, self.validation_set)
        spectra = attention_batch(self.model, validation.values[:50], validation.grid.wavelengths)
        np.testing.assert_allclose(spectra.sum(axis=1), np.full(spectra.shape[0],
                                                                validation.grid.count), atol=1e-6)


@pytest.mark.slow
class TestConvergence(unittest.TestCase):
    """Training on a separable toy set."""

    def test_loss_falls_by_ninety_percent(self):
        """200 separable records: the epoch loss drops by at least 90% within 30 epochs."""
        rng = np.random.default_rng(SEED)
        grid = BandGrid(np.linspace(450.0, 2400.0, 24))
        labels = np.arange(200) % 2
        values = np.where(labels[:, None] == CloudLabel.CLOUD, 0.7, 0.1) \
            + rng.normal(0.0, 0.03, size=(200, grid.count))
        scene_ids = np.array([f"toy{i % 7}" for i in range(200)], dtype=object)
        dataset = LabeledDataset(values, labels, scene_ids, grid)
        train_set, validation_set = split_by_scene(dataset, 0.2, SEED)

        model = build(SpecTfConfig(d_model=16, heads=4), SEED)
        result = train(model, train_set, validation_set,
                       TrainConfig(learning_rate=3e-3, batch_size=32, epochs=30, dropout=0.0,
                                   seed=SEED))
        losses = result.history.losses()
        self.assertLessEqual(min(losses), 0.1 * losses[0])


if __name__ == '__main__':
    unittest.main(verbosity=2)
