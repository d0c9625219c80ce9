import numpy as np
import pytest

from nlprfuse.grid import MultibandImage
from nlprfuse.metrics import PSNR_CAP, MetricReport, ergas, evaluate, psnr, reports_to_csv, rmse, sam, ssim, uiqi

from reference_metrics import ref_ergas, ref_psnr, ref_rmse, ref_sam, ref_ssim, ref_uiqi


@pytest.fixture
def pair(rng):
    x = rng.uniform(0.2, 1.0, size=(9, 10, 3))
    return x, x + 0.05 * rng.standard_normal(x.shape)


def test_identical_inputs(pair):
    x, _ = pair
    r = evaluate(x, x, 4)
    assert r.values() == [0.0, 0.0, 0.0, pytest.approx(1.0, abs=1e-12), PSNR_CAP, pytest.approx(1.0, abs=1e-12)]


def test_against_loop_reference(pair):
    x, y = pair
    assert rmse(x, y) == pytest.approx(ref_rmse(x, y), rel=1e-12)
    assert ergas(x, y, 4) == pytest.approx(ref_ergas(x, y, 4), rel=1e-12)
    assert sam(x, y) == pytest.approx(ref_sam(x, y), rel=1e-9)
    assert psnr(x, y) == pytest.approx(ref_psnr(x, y), rel=1e-12)
    assert uiqi(x, y) == pytest.approx(ref_uiqi(x, y), rel=1e-9)
    assert ssim(x, y) == pytest.approx(ref_ssim(x, y), rel=1e-9)


def test_sam_scale_invariant_and_right_angle():
    x = np.zeros((2, 2, 2))
    x[..., 0] = 1.0
    y = np.zeros((2, 2, 2))
    y[..., 1] = 3.0
    assert sam(x, y) == pytest.approx(90.0)
    assert sam(x, 5 * x) == 0.0
    assert sam(x, np.zeros_like(x)) == 0.0


def test_psnr_known_value():
    x = np.ones((4, 4, 1))
    assert psnr(x, x + 0.1) == pytest.approx(20.0)


def test_ergas_zero_mean_band_warns(rng):
    x = rng.uniform(0.5, 1, size=(4, 4, 2))
    x[:, :, 1] = 0.0
    with pytest.warns(RuntimeWarning):
        val = ergas(x, x + 0.1, 2)
    assert np.isfinite(val)


def test_uiqi_constant_windows():
    x = np.full((8, 8, 1), 0.3)
    assert uiqi(x, x) == 1.0


def test_shape_mismatch():
    with pytest.raises(ValueError):
        evaluate(np.zeros((3, 3, 2)), np.zeros((3, 3, 1)))


def test_report_csv(pair):
    x, y = pair
    rep = evaluate(MultibandImage.from_cube(x), MultibandImage.from_cube(y), 2)
    head, row = rep.to_csv("C1").splitlines()
    assert head == "case,rmse,ergas,sam_degrees,uiqi,psnr_db,ssim"
    assert float(row.split(",")[1]) == rep.rmse
    assert reports_to_csv({"a": rep}).splitlines()[0] == head
    assert MetricReport.header()[0] == "rmse"
