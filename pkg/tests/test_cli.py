import numpy as np
import pytest

from nlprfuse import fileio
from nlprfuse.cli import BENCH_HEADER, SCHEMA, UsageError, cmd_bench, main, resolve

SMALL = ["--p", "16", "--q", "16", "--bands", "6", "--guide-bands", "2", "--snr-l", "30", "--snr-h", "30"]


@pytest.fixture
def sim(tmp_path):
    out = tmp_path / "sim"
    assert main(["simulate", "--out", str(out)] + SMALL) == 0
    return out


def test_simulate_writes_products(sim):
    for name in ("gt.mbi", "yl.mbi", "yh.mbi", "spec.cfg"):
        assert (sim / name).is_file()
    assert fileio.read_mbi(sim / "yl.mbi").cube.shape == (4, 4, 6)
    assert fileio.read_mbi(sim / "yh.mbi").cube.shape == (16, 16, 2)


def test_simulate_is_idempotent(tmp_path, sim):
    again = tmp_path / "again"
    assert main(["simulate", "--out", str(again)] + SMALL) == 0
    for name in ("gt.mbi", "yl.mbi", "yh.mbi", "spec.cfg"):
        assert (again / name).read_bytes() == (sim / name).read_bytes()


def test_noiseless_flag(tmp_path):
    out = tmp_path / "clean"
    assert main(["simulate", "--out", str(out), "--p", "16", "--q", "16", "--bands", "4", "--guide-bands", "1",
                 "--factor", "2", "--blur", "identity"]) == 0
    gt = fileio.read_mbi(out / "gt.mbi").cube
    np.testing.assert_array_equal(fileio.read_mbi(out / "yl.mbi").cube, gt[::2, ::2])


def test_fuse_outputs_and_metrics(tmp_path, sim, capsys):
    out = tmp_path / "fused"
    rc = main(["fuse", "--data", str(sim), "--out", str(out), "--preset", "pleiades", "--max-iters", "20"])
    assert rc == 0
    z = fileio.read_mbi(out / "zhat.mbi")
    assert z.cube.shape == (16, 16, 6)
    log = (out / "log.csv").read_text().splitlines()
    assert log[0] == "iter,objective,r1,r2,r3,ms" and len(log) == 21
    assert len(list(out.glob("zhat_b*.pgm"))) == 6
    assert "psnr_db" in capsys.readouterr().out
    cfg = fileio.parse_config((out / "run.cfg").read_text(), SCHEMA)
    assert cfg["lam2"] == 9e-3 and cfg["preset"] == "pleiades"
    assert main(["metrics", str(sim / "gt.mbi"), str(out / "zhat.mbi"), "--ratio", "4",
                 "--csv", str(tmp_path / "m.csv")]) == 0
    assert (tmp_path / "m.csv").read_text().startswith("rmse,ergas")


def test_presets_resolve_and_override():
    cfg = resolve({"preset": "cave", "lam2": 0.5})
    assert (cfg.solver.lam1, cfg.solver.lam2, cfg.solver.rho, cfg.solver.h, cfg.solver.L_s) == (0.7, 0.5, 1e-3, 0.15, 8)
    with pytest.raises(UsageError):
        resolve({"preset": "salinas"})


def test_config_file(tmp_path, sim):
    conf = tmp_path / "run.cfg"
    conf.write_text(f"data = {sim}\nout = {tmp_path / 'o'}\nmax_iters = 5\nlam3 = 1\n")
    assert main(["fuse", "--config", str(conf)]) == 1
    conf.write_text(f"data = {sim}\nout = {tmp_path / 'o'}\nmax_iters = 5\n")
    assert main(["fuse", "--config", str(conf)]) == 0


def test_exit_codes(tmp_path, capsys):
    assert main(["fuse", "--data", str(tmp_path / "nowhere")]) == 1
    err = capsys.readouterr().err.strip()
    assert err.startswith("nlprfuse: error: kind=UsageError") and "\n" not in err
    assert main(["fuse", "--bogus-flag", "1"]) == 1
    assert main(["simulate", "--rho", "-1", "--out", str(tmp_path / "x")]) == 1
    assert main(["bench", "--sizes", "128"]) == 1
    assert main(["metrics", str(tmp_path / "a.mbi"), str(tmp_path / "b.mbi")]) == 1


def test_runtime_error_exit_code(tmp_path, sim):
    (sim / "yh.mbi").write_bytes(b"garbage\n")
    assert main(["fuse", "--data", str(sim), "--out", str(tmp_path / "o")]) == 2


def test_bench_csv_schema(tmp_path):
    text = cmd_bench([16], 2, str(tmp_path / "b.csv"), repeats=1)
    lines = text.splitlines()
    assert lines[0] == BENCH_HEADER == "size,n_h,L_s,fast_ms,dense_ms,ratio"
    assert lines[1].startswith("8x8,64,2,") and lines[2].startswith("16x16,256,2,")


def test_ablate_table(tmp_path):
    out = tmp_path / "abl"
    assert main(["ablate", "--out", str(out), "--max-iters", "10"] + SMALL) == 0
    rows = (out / "ablation.csv").read_text().splitlines()
    assert rows[0] == "case,lam2,rmse,ergas,sam_degrees,uiqi,psnr_db,ssim"
    assert [r.split(",")[0] for r in rows[1:]] == ["C1", "C2", "C3", "C4", "C5"]
