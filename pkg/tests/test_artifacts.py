"""Artifact transforms: identity limits, invariants, golden references."""

from pathlib import Path

import numpy as np
import pytest

from featreplay import artifacts, datagen
from featreplay.errors import ConfigError, InputError

GOLDEN = Path(__file__).parent / "golden"


@pytest.fixture
def blob_slice():
    yy, xx = np.mgrid[0:32, 0:32]
    return 0.2 + 0.7 * np.exp(-((yy - 16) ** 2 + (xx - 14) ** 2) / 60.0)


class TestBiasField:
    def test_zero_coefficient_limit(self, blob_slice):
        out = artifacts.apply_bias_field(blob_slice, 3, 1e-12, seed=5)
        np.testing.assert_allclose(out, blob_slice, atol=1e-9)

    def test_field_strictly_positive(self, blob_slice):
        for seed in range(5):
            out = artifacts.apply_bias_field(blob_slice, 3, 0.5, seed=seed)
            assert np.all(out / blob_slice > 0)

    def test_golden(self, blob_slice):
        out = artifacts.apply_bias_field(blob_slice, 3, 0.5, seed=11)
        np.testing.assert_allclose(out, np.load(GOLDEN / "bias_order3_cr05_seed11.npy"), atol=1e-12)

    def test_rejects_nonfinite(self):
        img = np.zeros((8, 8))
        img[0, 0] = np.inf
        with pytest.raises(InputError):
            artifacts.apply_bias_field(img, 3, 0.5, seed=0)


class TestGhosting:
    def test_zero_intensity_limit(self, blob_slice):
        out = artifacts.apply_ghosting(blob_slice, 4, 0, 1e-9, seed=5)
        assert np.abs(out - blob_slice).max() < 1e-6

    def test_dc_component_preserved(self, blob_slice):
        out = artifacts.apply_ghosting(blob_slice, 4, 0, 0.7, seed=5)
        assert np.isclose(np.fft.fft2(out)[0, 0], np.fft.fft2(blob_slice)[0, 0])

    def test_golden(self, blob_slice):
        out = artifacts.apply_ghosting(blob_slice, 4, 0, 0.7, seed=11)
        np.testing.assert_allclose(out, np.load(GOLDEN / "ghost_n4_i07_seed11.npy"), atol=1e-12)

    def test_bad_axis(self, blob_slice):
        with pytest.raises(ConfigError):
            artifacts.apply_ghosting(blob_slice, 4, 2, 0.7, seed=0)

    def test_shape_and_realness(self, blob_slice):
        out = artifacts.apply_ghosting(blob_slice, 3, 1, 0.5, seed=9)
        assert out.shape == blob_slice.shape
        assert np.isrealobj(out)


class TestSpiking:
    def test_zero_amplitude_limit(self, blob_slice):
        out = artifacts.apply_spiking(blob_slice, 2, 1e-12, seed=5)
        np.testing.assert_allclose(out, blob_slice, atol=1e-9)

    def test_frequency_support(self, blob_slice):
        seed = 11
        out = artifacts.apply_spiking(blob_slice, 2, 0.3, seed=seed)
        diff_f = np.fft.fft2(out - blob_slice)
        nz = {tuple(map(int, c)) for c in np.argwhere(np.abs(diff_f) > 1e-6 * np.abs(diff_f).max())}
        chosen = artifacts.spike_coordinates(blob_slice.shape, 2, seed)
        h, w = blob_slice.shape
        expected = set(chosen) | {((-cy) % h, (-cx) % w) for cy, cx in chosen}
        assert nz == expected

    def test_golden(self, blob_slice):
        out = artifacts.apply_spiking(blob_slice, 2, 0.3, seed=11)
        np.testing.assert_allclose(out, np.load(GOLDEN / "spike_n2_a03_seed11.npy"), atol=1e-12)


class TestAugmentTestSet:
    @pytest.fixture
    def volumes(self):
        spec = datagen.DomainSpec(name="aug_dom", shape=(4, 16, 16), spacing=(3.0, 1.0, 1.0))
        return datagen.generate_domain_dataset(spec, 5, seed=1).subjects

    def test_doubles_and_flags(self, volumes):
        out = artifacts.augment_test_set(volumes, seed=3)
        assert len(out) == 2 * len(volumes)
        assert sum(flag for _, flag in out) == len(volumes)

    def test_masks_and_inputs_untouched(self, volumes):
        before = [v.voxels.copy() for v in volumes]
        out = artifacts.augment_test_set(volumes, seed=3)
        for v, b in zip(volumes, before):
            assert np.array_equal(v.voxels, b)
        originals = {id(v) for v, flag in out if not flag}
        assert originals == {id(v) for v in volumes}
        for (v, flag), orig in zip(out[len(volumes) :], volumes):
            assert flag
            assert np.array_equal(v.mask, orig.mask)
            assert not np.array_equal(v.voxels, orig.voxels)

    def test_deterministic(self, volumes):
        a = artifacts.augment_test_set(volumes, seed=3)
        b = artifacts.augment_test_set(volumes, seed=3)
        for (va, fa), (vb, fb) in zip(a, b):
            assert fa == fb
            assert np.array_equal(va.voxels, vb.voxels)

    def test_empty_input_rejected(self):
        with pytest.raises(InputError):
            artifacts.augment_test_set([], seed=0)

    def test_invalid_config_rejected_at_construction(self, volumes):
        cfg = artifacts.ArtifactConfig(ghost_intensity=0.0)
        with pytest.raises(ConfigError):
            artifacts.augment_test_set(volumes, seed=0, cfg=cfg)
