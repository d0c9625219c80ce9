"""Command line: simulate, fuse, metrics, bench, ablate.

Settings are resolved as defaults < preset < config file < flags. Every
setting is a flat key; ``--config`` files use the same ``key = value`` names
and reject unknown keys. Exit codes: 0 ok, 1 usage, 2 runtime failure; on
failure a single ``nlprfuse: error: kind=<...> message=<...>`` line goes to
stderr.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import asdict, dataclass, fields
from pathlib import Path

from threadpoolctl import threadpool_limits

from . import fileio
from .dense import time_x_updates
from .frequency import plan, solve_cube
from .grid import Grid, MultibandImage
from .linops import BlurFilter, FilterBank, FusionOperators, SamplingMask, SpectralResponse, build_subspace
from .metrics import MetricReport, evaluate
from .simkit import PHANTOMS, DegradationSpec, degrade, make_phantom
from .solver import ABLATION_CASES, SolverConfig, solve

log = logging.getLogger("nlprfuse")


class UsageError(Exception):
    """Bad flags, keys, presets or missing inputs (exit code 1)."""


@dataclass(frozen=True)
class RunOptions:
    """Non-solver settings of a run."""

    preset: str = "none"
    phantom: str = "texture"
    p: int = 32
    q: int = 32
    bands: int = 16
    guide_bands: int = 4
    factor: int = 4
    blur: str = "starck_murtagh"
    snr_l: float = float("inf")
    snr_h: float = float("inf")
    sim_seed: int = 0
    data: str = ""
    out: str = "out"
    threads: int = 1
    lam2_grid: str = ""
    previews: bool = True


SOLVER_KEYS = {f.name: f.default for f in fields(SolverConfig)}
RUN_KEYS = {f.name: f.default for f in fields(RunOptions)}
SCHEMA = {**SOLVER_KEYS, **RUN_KEYS}


@dataclass
class RunConfig:
    solver: SolverConfig
    run: RunOptions

    def flat(self) -> dict:
        return {**asdict(self.solver), **asdict(self.run)}


def resolve(values: dict) -> RunConfig:
    """Build a ``RunConfig`` from already-merged flat values."""
    preset = values.get("preset", "none")
    merged = dict(SCHEMA)
    if preset not in ("none", "", None):
        if preset not in fileio.PRESETS:
            raise UsageError(f"unknown preset {preset!r}; choose from {sorted(fileio.PRESETS)}")
        merged.update(fileio.PRESETS[preset])
    merged.update(values)
    try:
        solver = SolverConfig(**{k: merged[k] for k in SOLVER_KEYS})
        run = RunOptions(**{k: merged[k] for k in RUN_KEYS})
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from None
    if run.phantom not in PHANTOMS:
        raise UsageError(f"unknown phantom {run.phantom!r}")
    if run.threads < 1:
        raise UsageError("threads must be at least 1")
    return RunConfig(solver, run)


def blur_from_name(name: str) -> BlurFilter:
    if name == "starck_murtagh":
        return BlurFilter.starck_murtagh()
    if name == "identity":
        return BlurFilter.identity()
    if name.startswith("gaussian:"):
        return BlurFilter.gaussian(float(name.split(":", 1)[1]))
    raise UsageError(f"unknown blur {name!r} (starck_murtagh, identity, gaussian:<sigma>)")


# ---------------------------------------------------------------- commands


def _simulate_instance(run: RunOptions):
    Z = make_phantom(run.phantom, run.p, run.q, run.bands, seed=run.sim_seed)
    R = SpectralResponse.gaussian_bands(run.bands, run.guide_bands)
    spec = DegradationSpec(blur_from_name(run.blur), run.factor, R, run.snr_l, run.snr_h, run.sim_seed)
    Yl, Yh = degrade(Z, spec)
    return Z, spec, Yl, Yh


def cmd_simulate(cfg: RunConfig) -> Path:
    run = cfg.run
    out = Path(run.out)
    out.mkdir(parents=True, exist_ok=True)
    Z, spec, Yl, Yh = _simulate_instance(run)
    d = run.factor
    fileio.write_mbi(out / "gt.mbi", Z)
    fileio.write_mbi(out / "yl.mbi", Yl.reshape(run.p // d, run.q // d, -1))
    fileio.write_mbi(out / "yh.mbi", Yh)
    meta = {k: getattr(run, k) for k in ("phantom", "p", "q", "bands", "guide_bands", "factor", "blur",
                                         "snr_l", "snr_h", "sim_seed")}
    meta["response"] = fileio.matrix_to_text(spec.R.R)
    (out / "spec.cfg").write_text(fileio.dump_config(meta))
    return out


SPEC_SCHEMA = {"phantom": "texture", "p": 0, "q": 0, "bands": 0, "guide_bands": 0, "factor": 1,
               "blur": "starck_murtagh", "snr_l": 0.0, "snr_h": 0.0, "sim_seed": 0, "response": ""}


def load_instance(data: Path):
    """Read ``yl.mbi``, ``yh.mbi`` and ``spec.cfg`` from a simulate output directory."""
    for name in ("yl.mbi", "yh.mbi", "spec.cfg"):
        if not (data / name).is_file():
            raise UsageError(f"missing input {data / name}")
    meta = fileio.parse_config((data / "spec.cfg").read_text(), SPEC_SCHEMA)
    Yl_img = fileio.read_mbi(data / "yl.mbi")
    Yh = fileio.read_mbi(data / "yh.mbi")
    grid = Yh.grid
    d = int(meta["factor"])
    if Yl_img.grid.p * d != grid.p or Yl_img.grid.q * d != grid.q:
        raise ValueError(f"low-resolution grid {Yl_img.grid.shape} x{d} does not match {grid.shape}")
    R = SpectralResponse(fileio.matrix_from_text(meta["response"]))
    if R.shape != (Yl_img.bands, Yh.bands):
        raise ValueError(f"response {R.shape} does not map {Yl_img.bands} bands to {Yh.bands}")
    S = SamplingMask.decimation(grid, d)
    gt = fileio.read_mbi(data / "gt.mbi") if (data / "gt.mbi").is_file() else None
    return Yl_img.data, Yh, blur_from_name(meta["blur"]), S, R, d, gt


def _operators(Yl, blur, S, R, L_s) -> FusionOperators:
    L_s = min(L_s, Yl.shape[1], Yl.shape[0])
    return FusionOperators(blur, S, R, build_subspace(Yl, L_s))


def cmd_fuse(cfg: RunConfig) -> Path:
    run = cfg.run
    if not run.data:
        raise UsageError("fuse needs data=<directory written by simulate>")
    Yl, Yh, blur, S, R, d, gt = load_instance(Path(run.data))
    ops = _operators(Yl, blur, S, R, cfg.solver.L_s)
    res = solve(Yl, Yh, ops, None, cfg.solver.replace(L_s=ops.basis.dim))
    out = Path(run.out)
    out.mkdir(parents=True, exist_ok=True)
    fileio.write_mbi(out / "zhat.mbi", res.Z)
    (out / "log.csv").write_text(res.log.to_csv(timing=not cfg.solver.deterministic))
    (out / "run.cfg").write_text(fileio.dump_config(cfg.flat()))
    if run.previews:
        cube = res.Z.cube
        lo, hi = float(cube.min()), float(cube.max())
        for c in range(cube.shape[2]):
            fileio.write_pgm(out / f"zhat_b{c:03d}.pgm", cube[:, :, c], lo, hi)
    if gt is not None:
        rep = evaluate(gt, res.Z, d)
        (out / "metrics.csv").write_text(rep.to_csv())
        print(rep.to_text(), end="")
    return out


def cmd_metrics(ref: Path, est: Path, ratio: float, csv: str | None) -> MetricReport:
    for path in (ref, est):
        if not path.is_file():
            raise UsageError(f"missing input {path}")
    rep = evaluate(fileio.read_mbi(ref), fileio.read_mbi(est), ratio)
    print(rep.to_text(), end="")
    if csv:
        Path(csv).write_text(rep.to_csv())
    return rep


BENCH_HEADER = "size,n_h,L_s,fast_ms,dense_ms,ratio"


def bench_row(side: int, L_s: int, S: int = 1, K: int = 1, repeats: int = 3) -> str:
    grid = Grid(side, side)
    B = BlurFilter.starck_murtagh()
    bank = FilterBank.from_window(S, K)
    fplan = plan(grid, B, bank.filters)
    fast_ms, dense_ms, _ = time_x_updates(grid, L_s, B, bank.shifts, K, lambda C: solve_cube(fplan, C),
                                          repeats=repeats)
    return f"{side}x{side},{grid.n},{L_s},{fast_ms:.4f},{dense_ms:.4f},{dense_ms / fast_ms:.2f}"


def cmd_bench(sizes: list[int], L_s: int, out: str | None, repeats: int = 3) -> str:
    if 8 not in sizes:
        sizes = [8] + list(sizes)
    if max(sizes) > 64:
        raise UsageError("dense benchmark sizes are capped at 64")
    lines = [BENCH_HEADER]
    print(BENCH_HEADER, flush=True)
    for side in sizes:
        lines.append(bench_row(side, L_s, repeats=repeats))
        print(lines[-1], flush=True)
    text = "\n".join(lines) + "\n"
    if out:
        Path(out).write_text(text)
    return text


def parse_grid(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"bad lam2_grid {text!r}") from None


def run_ablation(Z: MultibandImage, Yl, Yh: MultibandImage, ops: FusionOperators, d: int,
                 base: SolverConfig, lam2_grid: list[float] | None = None):
    """Run C1..C5; with a grid each case keeps its best-PSNR ``lam2``. Returns ``{case: (lam2, report)}``."""
    table = {}
    for case, switches in ABLATION_CASES.items():
        best = None
        for lam2 in lam2_grid or [base.lam2]:
            res = solve(Yl, Yh, ops, None, base.replace(lam2=lam2, **switches))
            rep = evaluate(Z, res.Z, d)
            if best is None or rep.psnr_db > best[1].psnr_db:
                best = (lam2, rep)
        table[case] = best
    return table


def cmd_ablate(cfg: RunConfig) -> str:
    run = cfg.run
    if run.data:
        Yl, Yh, blur, S, R, d, Z = load_instance(Path(run.data))
        if Z is None:
            raise UsageError("ablate needs gt.mbi next to the observations")
    else:
        Z, spec, Yl, Yh = _simulate_instance(run)
        blur, S, R, d = spec.blur, SamplingMask.decimation(Z.grid, run.factor), spec.R, run.factor
    ops = _operators(Yl, blur, S, R, cfg.solver.L_s)
    grid = parse_grid(run.lam2_grid) if run.lam2_grid else None
    table = run_ablation(Z, Yl, Yh, ops, d, cfg.solver.replace(L_s=ops.basis.dim), grid)
    lines = ["case,lam2," + ",".join(MetricReport.header())]
    for case, (lam2, rep) in table.items():
        lines.append(f"{case},{lam2!r}," + ",".join(repr(float(v)) for v in rep.values()))
    text = "\n".join(lines) + "\n"
    out = Path(run.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "ablation.csv").write_text(text)
    print(text, end="")
    return text


# ---------------------------------------------------------------- argument parsing


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _add_setting_flags(p: argparse.ArgumentParser):
    p.add_argument("--config", help="key = value file")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override any key")
    for key in SCHEMA:
        p.add_argument("--" + key.replace("_", "-"), dest="k_" + key, default=None, metavar="V")


def _collect(ns) -> dict:
    values = {}
    if ns.config:
        path = Path(ns.config)
        if not path.is_file():
            raise UsageError(f"missing config {path}")
        try:
            values.update(fileio.parse_config(path.read_text(), SCHEMA))
        except (KeyError, ValueError) as exc:
            raise UsageError(f"{path}: {exc.args[0]}") from None
    flags = []
    for item in ns.set:
        flags.append(item)
    for key in SCHEMA:
        v = getattr(ns, "k_" + key)
        if v is not None:
            flags.append(f"{key}={v}")
    try:
        values.update(fileio.parse_config("\n".join(flags), SCHEMA))
    except (KeyError, ValueError) as exc:
        raise UsageError(f"flag {exc.args[0].split(': ', 1)[-1]}") from None
    return values


def build_parser() -> argparse.ArgumentParser:
    top = _Parser(prog="nlprfuse", description=__doc__.splitlines()[0])
    top.add_argument("-v", "--verbose", action="store_true")
    sub = top.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in ("simulate", "fuse", "ablate"):
        _add_setting_flags(sub.add_parser(name))
    m = sub.add_parser("metrics")
    m.add_argument("reference")
    m.add_argument("estimate")
    m.add_argument("--ratio", type=float, default=1.0)
    m.add_argument("--csv")
    b = sub.add_parser("bench")
    b.add_argument("--sizes", default="8,16,32,64")
    b.add_argument("--ls", type=int, default=8)
    b.add_argument("--repeats", type=int, default=3)
    b.add_argument("--csv")
    b.add_argument("--threads", type=int, default=1)
    return top


def _one_line(exc: BaseException) -> str:
    msg = " ".join(str(exc).split()) or exc.__class__.__name__
    return f"nlprfuse: error: kind={exc.__class__.__name__} message={msg}"


def main(argv=None) -> int:
    try:
        ns = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if ns.verbose else logging.WARNING, format="%(message)s")
        if ns.command == "metrics":
            cmd_metrics(Path(ns.reference), Path(ns.estimate), ns.ratio, ns.csv)
            return 0
        if ns.command == "bench":
            try:
                sizes = [int(s) for s in ns.sizes.split(",") if s.strip()]
            except ValueError:
                raise UsageError(f"bad --sizes {ns.sizes!r}") from None
            with threadpool_limits(ns.threads):
                cmd_bench(sizes, ns.ls, ns.csv, ns.repeats)
            return 0
        cfg = resolve(_collect(ns))
        # one BLAS/FFT thread keeps reduction order fixed in deterministic mode
        threads = 1 if cfg.solver.deterministic else cfg.run.threads
        with threadpool_limits(threads):
            {"simulate": cmd_simulate, "fuse": cmd_fuse, "ablate": cmd_ablate}[ns.command](cfg)
        return 0
    except UsageError as exc:
        print(_one_line(exc), file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    except Exception as exc:  # noqa: BLE001
        print(_one_line(exc), file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
