"""
Test suite for spectral data operations.

Covers the reference grids, wavelength normalization, TOA reflectance,
band masking, per-scene sampling and scene-disjoint splitting.
"""

import unittest

import numpy as np

import sys
import os
sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from constants import EMIT_EXCLUSION_WINDOWS, MASK_NO_DATA, ValueKind
from errors import (
    ContractError, DimensionError, EmptySpectrumError, NightSceneError
)
from models import (
    BandGrid, GeometryRecord, LabeledDataset, LabeledScene, SpectralCube, Spectrum
)
from spectra import (
    aviris_ng_like_grid, band_mask, cube_reflectance, derive_rng, emit_like_grid,
    normalize_wavelengths, resample_spectrum, sample_dataset, split_by_scene, toa_reflectance
)


def make_scene(scene_id, labels, bands=5, seed=0):
    """Scene with seeded random reflectance and the given label raster."""
    labels = np.asarray(labels, dtype=np.uint8)
    grid = BandGrid(np.linspace(500.0, 900.0, bands))
    rng = np.random.default_rng(seed)
    values = rng.uniform(0.0, 1.0, size=labels.shape + (bands,))
    return LabeledScene(scene_id, SpectralCube(values, grid), labels)


class TestGrids(unittest.TestCase):
    """Reference instrument grids and normalization."""

    def test_emit_grid_reduces_to_268_bands(self):
        """285 EMIT-like bands minus the default windows leave 268."""
        grid = emit_like_grid()
        self.assertEqual(grid.count, 285)
        _, reduced = band_mask(Spectrum(np.zeros(285), grid))
        self.assertEqual(reduced.count, 268)

    def test_aviris_ng_grid(self):
        """425 bands at 5 nm starting at 377 nm."""
        grid = aviris_ng_like_grid()
        self.assertEqual(grid.count, 425)
        self.assertEqual(grid.span, (377.0, 2497.0))

    def test_normalization_constants(self):
        """b' = (b - 1440) / 600."""
        np.testing.assert_allclose(normalize_wavelengths(BandGrid([840.0, 1440.0, 2040.0])),
                                   [-1.0, 0.0, 1.0])

    def test_grid_must_increase(self):
        """Band centers are strictly increasing."""
        with self.assertRaises(ContractError):
            BandGrid([500.0, 500.0, 600.0])

    def test_resample_preserves_linear_spectra(self):
        """Linear interpolation reproduces a linear spectrum exactly."""
        source = BandGrid(np.linspace(400.0, 2400.0, 21))
        target = BandGrid(np.linspace(400.0, 2400.0, 57))
        values = 0.1 + 1e-4 * source.wavelengths
        np.testing.assert_allclose(resample_spectrum(values, source, target),
                                   0.1 + 1e-4 * target.wavelengths, atol=1e-12)
        batch = np.stack([values, 2 * values])
        self.assertEqual(resample_spectrum(batch, source, target).shape, (2, 57))

    def test_resample_length_mismatch(self):
        """Values must match the source grid."""
        with self.assertRaises(DimensionError):
            resample_spectrum(np.zeros(3), BandGrid([500.0, 600.0]), BandGrid([550.0]))


class TestReflectance(unittest.TestCase):
    """Radiance to TOA reflectance."""

    def setUp(self):
        """One geometry shared by the tests."""
        self.irradiance = np.array([1.5, 1.8, 1.2])
        self.geometry = GeometryRecord(0.3, 1.0, self.irradiance)

    def test_unit_reflectance(self):
        """L = E0 cos(theta) / pi at d = 1 is reflectance 1."""
        radiance = self.irradiance * np.cos(0.3) / np.pi
        np.testing.assert_allclose(toa_reflectance(radiance, self.geometry), np.ones(3))

    def test_distance_scaling(self):
        """Reflectance scales with d squared."""
        far = GeometryRecord(0.3, 1.05, self.irradiance)
        radiance = np.array([0.2, 0.3, 0.1])
        ratio = toa_reflectance(radiance, far) / toa_reflectance(radiance, self.geometry)
        np.testing.assert_allclose(ratio, np.full(3, 1.05 ** 2))

    def test_night_scene(self):
        """The sun below the horizon is rejected."""
        night = GeometryRecord(np.pi / 2 + 0.1, 1.0, self.irradiance)
        with self.assertRaises(NightSceneError):
            toa_reflectance(np.ones(3), night)

    def test_negative_radiance(self):
        """Negative radiance is a contract violation."""
        with self.assertRaises(ContractError):
            toa_reflectance(np.array([0.1, -0.1, 0.1]), self.geometry)

    def test_spectrum_in_spectrum_out(self):
        """A Spectrum comes back as a Spectrum on the same grid."""
        grid = BandGrid([500.0, 600.0, 700.0])
        out = toa_reflectance(Spectrum([0.1, 0.2, 0.3], grid), self.geometry)
        self.assertIsInstance(out, Spectrum)
        self.assertEqual(out.grid, grid)

    def test_cube_keeps_no_data(self):
        """Non-finite radiance pixels stay NaN after conversion."""
        grid = BandGrid([500.0, 600.0, 700.0])
        values = np.full((2, 2, 3), 0.2)
        values[0, 1, 2] = np.nan
        cube = SpectralCube(values, grid, ValueKind.RADIANCE, self.geometry)
        reflectance = cube_reflectance(cube)
        self.assertIs(reflectance.value_kind, ValueKind.TOA_REFLECTANCE)
        self.assertTrue(np.isnan(reflectance.values[0, 1, 2]))
        self.assertTrue(np.all(np.isfinite(reflectance.values[1])))

    def test_radiance_cube_needs_geometry(self):
        """Conversion without geometry is refused."""
        cube = SpectralCube(np.ones((1, 1, 3)), BandGrid([500.0, 600.0, 700.0]), ValueKind.RADIANCE)
        with self.assertRaises(ContractError):
            cube_reflectance(cube)


class TestBandMask(unittest.TestCase):
    """Exclusion windows."""

    def test_windows_are_closed(self):
        """Centers on a window edge are removed."""
        grid = BandGrid([379.0, 380.0, 400.0, 401.0, 1275.0, 1300.0, 1321.0])
        _, reduced = band_mask(Spectrum(np.arange(7.0), grid))
        np.testing.assert_array_equal(reduced.wavelengths, [379.0, 401.0, 1321.0])

    def test_values_follow_the_grid(self):
        """Kept values keep their order."""
        grid = BandGrid([379.0, 390.0, 401.0])
        spectrum, _ = band_mask(Spectrum([1.0, 2.0, 3.0], grid))
        np.testing.assert_array_equal(spectrum.values, [1.0, 3.0])

    def test_masking_twice_is_masking_once(self):
        """A second pass over a masked spectrum removes nothing more."""
        grid = emit_like_grid()
        values = np.linspace(0.0, 1.0, grid.count)
        once, once_grid = band_mask(Spectrum(values, grid))
        twice, twice_grid = band_mask(once)
        self.assertEqual(twice_grid, once_grid)
        np.testing.assert_array_equal(twice.values, once.values)

    def test_everything_removed(self):
        """Removing every band is an error."""
        with self.assertRaises(EmptySpectrumError):
            band_mask(Spectrum([1.0, 2.0], BandGrid([385.0, 395.0])))

    def test_reversed_window(self):
        """Windows must have low <= high."""
        with self.assertRaises(ContractError):
            band_mask(Spectrum([1.0], BandGrid([500.0])), windows=[(600.0, 550.0)])

    def test_bare_array_needs_grid(self):
        """A bare array carries no grid of its own."""
        with self.assertRaises(ContractError):
            band_mask(np.zeros((2, 3)))
        values, grid = band_mask(np.zeros((2, 3)), BandGrid([390.0, 500.0, 600.0]))
        self.assertEqual(values.shape, (2, 2))
        self.assertEqual(grid.count, 2)

    def test_cube_geometry_is_masked(self):
        """Irradiance is reduced with the bands."""
        grid = BandGrid([390.0, 500.0, 600.0])
        cube = SpectralCube(np.ones((2, 2, 3)), grid, ValueKind.RADIANCE,
                            GeometryRecord(0.2, 1.0, [1.0, 2.0, 3.0]))
        reduced, _ = band_mask(cube, windows=EMIT_EXCLUSION_WINDOWS)
        np.testing.assert_array_equal(reduced.geometry.solar_irradiance, [2.0, 3.0])


class TestSampling(unittest.TestCase):
    """Per-scene class-capped sampling."""

    def test_cap_per_class_per_scene(self):
        """At most cap records of each class come from each scene."""
        labels = np.array([[1, 1, 1, 1, 1], [1, 1, 0, 0, 0]])
        dataset = sample_dataset([make_scene("a", labels)], cap=2, seed=1)
        self.assertEqual(dataset.class_counts(), {"clear": 2, "cloud": 2})

    def test_small_classes_are_taken_whole(self):
        """A class below the cap contributes every pixel."""
        labels = np.array([[1, 0, 0, 0]])
        dataset = sample_dataset([make_scene("a", labels)], cap=10)
        self.assertEqual(len(dataset), 4)

    def test_unlabeled_pixels_are_never_sampled(self):
        """255 pixels are skipped; an all-unlabeled scene contributes nothing."""
        labels = np.array([[MASK_NO_DATA, 1], [0, MASK_NO_DATA]])
        empty = np.full((2, 2), MASK_NO_DATA)
        dataset = sample_dataset([make_scene("a", labels), make_scene("b", empty, seed=2)], cap=5)
        self.assertEqual(len(dataset), 2)
        self.assertEqual(dataset.scenes, ["a"])

    def test_sampling_is_reproducible(self):
        """The same seed draws the same records."""
        labels = np.random.default_rng(4).integers(0, 2, size=(8, 8))
        scene = make_scene("a", labels)
        first = sample_dataset([scene], cap=5, seed=7)
        second = sample_dataset([scene], cap=5, seed=7)
        np.testing.assert_array_equal(first.values, second.values)
        np.testing.assert_array_equal(first.pixel_index, second.pixel_index)

    def test_scene_draws_are_independent(self):
        """A scene's draw does not depend on which other scenes are sampled."""
        rng = np.random.default_rng(5)
        a = make_scene("a", rng.integers(0, 2, size=(6, 6)), seed=1)
        b = make_scene("b", rng.integers(0, 2, size=(6, 6)), seed=2)
        alone = sample_dataset([a], cap=3, seed=9)
        together = sample_dataset([b, a], cap=3, seed=9)
        from_a = together.subset(together.scene_ids == "a")
        np.testing.assert_array_equal(alone.values, from_a.values)

    def test_pixel_provenance(self):
        """pixel_index points back at the sampled pixel."""
        labels = np.array([[0, 1], [1, 0]])
        scene = make_scene("a", labels)
        dataset = sample_dataset([scene], cap=10)
        for row, (line, sample) in enumerate(dataset.pixel_index):
            np.testing.assert_array_equal(dataset.values[row], scene.cube.values[line, sample])
            self.assertEqual(dataset.labels[row], labels[line, sample])

    def test_invalid_cap(self):
        """The cap must be positive."""
        with self.assertRaises(ContractError):
            sample_dataset([make_scene("a", [[0]])], cap=0)

    def test_mixed_grids(self):
        """Scenes must share one band grid."""
        with self.assertRaises(ContractError):
            sample_dataset([make_scene("a", [[0]], bands=5), make_scene("b", [[1]], bands=6)])


class TestSplit(unittest.TestCase):
    """Scene-disjoint splitting."""

    def setUp(self):
        """Eight scenes of four records each."""
        grid = BandGrid([500.0, 600.0])
        scene_ids = np.repeat([f"s{i}" for i in range(8)], 4)
        labels = np.tile([0, 1, 0, 1], 8)
        self.dataset = LabeledDataset(np.zeros((32, 2)), labels, scene_ids, grid)

    def test_split_is_scene_disjoint(self):
        """No scene appears on both sides and every record is kept."""
        train, validation = split_by_scene(self.dataset, 0.25, seed=3)
        self.assertFalse(set(train.scenes) & set(validation.scenes))
        self.assertEqual(len(validation.scenes), 2)
        self.assertEqual(len(train) + len(validation), len(self.dataset))

    def test_split_is_reproducible(self):
        """The same seed gives the same partition."""
        first = split_by_scene(self.dataset, 0.5, seed=4)[1].scenes
        second = split_by_scene(self.dataset, 0.5, seed=4)[1].scenes
        self.assertEqual(first, second)

    def test_each_side_keeps_a_scene(self):
        """Extreme fractions still leave one scene per side."""
        train, validation = split_by_scene(self.dataset, 0.01)
        self.assertEqual(len(validation.scenes), 1)
        train, validation = split_by_scene(self.dataset, 0.99)
        self.assertEqual(len(train.scenes), 1)

    def test_mission_sized_split(self):
        """534 scenes at a 0.13 validation fraction give 465 train and 69 validation scenes."""
        scene_ids = np.array([f"scene{i:03d}" for i in range(534)])
        dataset = LabeledDataset(np.zeros((534, 2)), np.arange(534) % 2, scene_ids,
                                 BandGrid([500.0, 600.0]))
        train, validation = split_by_scene(dataset, 0.13, seed=1)
        self.assertEqual(len(train.scenes), 465)
        self.assertEqual(len(validation.scenes), 69)
        self.assertFalse(set(train.scenes) & set(validation.scenes))

    def test_split_preconditions(self):
        """Fractions outside (0, 1) and single-scene sets are rejected."""
        with self.assertRaises(ContractError):
            split_by_scene(self.dataset, 1.0)
        single = self.dataset.subset(self.dataset.scene_ids == "s0")
        with self.assertRaises(ContractError):
            split_by_scene(single, 0.5)


class TestDerivedStreams(unittest.TestCase):
    """Seeded generator derivation."""

    def test_same_keys_same_stream(self):
        """Streams are a function of (seed, keys)."""
        np.testing.assert_array_equal(derive_rng(3, "shuffle", 1).random(5),
                                      derive_rng(3, "shuffle", 1).random(5))

    def test_different_keys_differ(self):
        """Different keys or seeds give different streams."""
        base = derive_rng(3, "shuffle", 1).random(5)
        self.assertFalse(np.array_equal(base, derive_rng(3, "shuffle", 2).random(5)))
        self.assertFalse(np.array_equal(base, derive_rng(4, "shuffle", 1).random(5)))


if __name__ == '__main__':
    unittest.main(verbosity=2)
