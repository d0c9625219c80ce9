import numpy as np
import pytest

from nlprfuse.linops import BlurFilter, SpectralResponse, apply_blur, downsample
from nlprfuse.simkit import (
    DegradationSpec,
    degrade,
    empirical_snr,
    make_inpainting_instance,
    make_phantom,
    sampling_for,
)


@pytest.mark.parametrize("kind", ["texture", "mondrian", "ramp"])
def test_phantom_range_and_determinism(kind):
    a = make_phantom(kind, 16, 16, 8, seed=3)
    b = make_phantom(kind, 16, 16, 8, seed=3)
    assert a.data.min() == 0.0 and a.data.max() == 1.0
    np.testing.assert_array_equal(a.data, b.data)
    assert np.linalg.matrix_rank(a.data - a.data.mean(0), tol=1e-8) <= 6


def test_noiseless_degradation_is_exact():
    Z = make_phantom("texture", 16, 16, 6)
    spec = DegradationSpec(factor=4, R=SpectralResponse.gaussian_bands(6, 2))
    Yl, Yh = degrade(Z, spec)
    np.testing.assert_array_equal(Yl, downsample(sampling_for(spec, Z.grid), apply_blur(BlurFilter.starck_murtagh(), Z)))
    np.testing.assert_allclose(Yh.data, Z.data @ spec.R.R)
    assert Yl.shape == (16, 6)


def test_empirical_snr_within_tolerance():
    # 32 x 32 x 16 = 16384 low-resolution samples
    Z = make_phantom("texture", 64, 64, 16)
    spec = DegradationSpec(factor=2, snr_l=25.0, snr_h=30.0, seed=5)
    Yl, Yh = degrade(Z, spec)
    clean_l, clean_h = degrade(Z, DegradationSpec(factor=2))
    assert Yl.size >= 10_000
    assert empirical_snr(clean_l, Yl) == pytest.approx(25.0, abs=0.2)
    assert empirical_snr(clean_h.data, Yh.data) == pytest.approx(30.0, abs=0.2)


def test_seed_controls_noise():
    Z = make_phantom("ramp", 16, 16, 4)
    a = degrade(Z, DegradationSpec(factor=2, snr_l=20, seed=1))[0]
    b = degrade(Z, DegradationSpec(factor=2, snr_l=20, seed=1))[0]
    c = degrade(Z, DegradationSpec(factor=2, snr_l=20, seed=2))[0]
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)


def test_inpainting_instance():
    Z = make_phantom("texture", 16, 16, 4)
    inst = make_inpainting_instance(Z, 0.7, seed=0)
    assert inst.mask.n_low == round(0.7 * 256)
    np.testing.assert_array_equal(inst.Y_low, Z.data[inst.mask.kept_rows])
    np.testing.assert_allclose(inst.guide.data[:, 0], Z.data.mean(axis=1))


def test_bad_inputs():
    with pytest.raises(ValueError):
        make_phantom("stripes", 16, 16, 4)
    with pytest.raises(ValueError):
        degrade(make_phantom("ramp", 16, 16, 4), DegradationSpec(R=SpectralResponse.identity(3)))
