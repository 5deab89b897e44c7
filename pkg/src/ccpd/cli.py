"""Command-line front end.

    ccpd decompose --config cfg.json y1.ct3 y2.ct3 y3.ct3 -o out/
    ccpd sweep     --config sweep.json y1.ct3 y2.ct3 y3.ct3 -o sweep/
    ccpd simulate  --config spec.json -o synth/
    ccpd report    out/ --labels labels.txt -o report/

Every command writes into a fresh output directory (``--force`` to reuse a
non-empty one) and leaves a ``manifest.json`` describing how the artifacts
were produced. Wall-clock timings go to ``timings.json`` so that the other
artifacts are byte-identical across repeated invocations.
"""
import argparse
import csv
import itertools
import json
import logging
import math
import os
import platform
import shutil
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, kernels
from .analysis import SyntheticSpec, generate_synthetic, snr_db, two_sample_ttest, zscore, zscore_threshold
from .compression import compress, expand_factors, fit_basis, save_basis
from .io import FormatError, dump_json, load_factors, read_ct3, save_factors, sha256_file, write_cm2, write_ct3
from .model import Ranks, SolverConfig, check_dataset, cost, identifiability_check
from .reproducibility import multi_start, rank_sweep, select_most_reproducible

log = logging.getLogger("ccpd")

DEFAULTS = {
    "lambda": 0.0,
    "max_iters": 500,
    "rel_tol": 1e-8,
    "qn_memory": 10,
    "qn_max_inner": 30,
    "seed": 0,
    "cost_floor": 1e-24,
    "n_starts": 200,
    "compress": True,
    "compress_dim": 30,
    "normalization": "column",
    "aggregate": "sum",
}
SWEEP_DEFAULTS = dict(DEFAULTS, n_sweep=10)


class CliError(Exception):
    """User-facing failure; reported without a traceback."""


def _setup_logging():
    level = os.environ.get("CCPD_LOG", "WARNING").upper()
    logging.basicConfig(
        level=getattr(logging, level, logging.WARNING),
        format="%(levelname)s %(name)s: %(message)s",
    )


def _load_config(path, defaults, args):
    cfg = dict(defaults)
    if path is not None:
        try:
            user = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise CliError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(user, dict):
            raise CliError("config must be a JSON object")
        cfg.update(user)
    if getattr(args, "seed", None) is not None:
        cfg["seed"] = args.seed
    if getattr(args, "no_compress", False):
        cfg["compress"] = False
    if getattr(args, "compress_dim", None) is not None:
        cfg["compress_dim"] = args.compress_dim
    return cfg


def _prepare_output(directory, force):
    out = Path(directory)
    if out.exists() and any(out.iterdir()) and not force:
        raise CliError(f"output directory {out} is not empty (use --force to overwrite)")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _read_inputs(paths):
    data, checksums = [], []
    for p in paths:
        try:
            data.append(read_ct3(p))
        except (OSError, FormatError) as exc:
            raise CliError(f"cannot read {p}: {exc}") from exc
        checksums.append({"file": Path(p).name, "sha256": sha256_file(p)})
    try:
        data = check_dataset(data)
    except ValueError as exc:
        raise CliError(str(exc)) from exc
    return data, checksums


def _solver_config(cfg, ranks):
    try:
        return SolverConfig(
            ranks,
            lam=float(cfg["lambda"]),
            max_iters=int(cfg["max_iters"]),
            rel_tol=float(cfg["rel_tol"]),
            qn_memory=int(cfg["qn_memory"]),
            qn_max_inner=int(cfg["qn_max_inner"]),
            seed=int(cfg["seed"]),
            cost_floor=float(cfg["cost_floor"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise CliError(f"invalid solver configuration: {exc}") from exc


def _ranks_from(cfg, K):
    if "R" not in cfg or "L" not in cfg:
        raise CliError("config must define R and L")
    L = cfg["L"]
    L = [L] * K if isinstance(L, int) else list(L)
    if len(L) != K:
        raise CliError(f"L has {len(L)} entries for {K} datasets")
    try:
        return Ranks(cfg["R"], L)
    except ValueError as exc:
        raise CliError(str(exc)) from exc


def _maybe_compress(data, cfg):
    S, V = data[0].shape[:2]
    if not cfg["compress"]:
        return data, None
    d = int(cfg["compress_dim"])
    d1, d2 = min(d, S), min(d, V)
    if (d1, d2) == (S, V):
        return data, None
    basis = fit_basis(data, d1, d2)
    return compress(data, basis), basis


def _environment():
    return {
        "tool": "ccpd",
        "version": __version__,
        "kernel_backend": kernels.BACKEND,
        "python": platform.python_version(),
        "numpy": np.__version__,
    }


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _fmt(x):
    return repr(float(x))


class _Timer:
    def __init__(self):
        self.stages = {}

    def stage(self, name):
        timer = self

        class _Ctx:
            def __enter__(self):
                self.t0 = time.perf_counter()

            def __exit__(self, *exc):
                timer.stages[name] = time.perf_counter() - self.t0

        return _Ctx()


DECOMPOSE_ARTIFACTS = ("factors", "basis", "runs", "cost_trace.csv", "runs.csv", "pairwise.csv")


def _clear_artifacts(out, names):
    # only this command's own outputs are removed; other files are left alone
    for name in names:
        p = out / name
        if p.is_dir():
            shutil.rmtree(p)
        elif p.exists():
            p.unlink()


def cmd_decompose(args):
    timer = _Timer()
    cfg = _load_config(args.config, DEFAULTS, args)
    out = _prepare_output(args.output, args.force)
    _clear_artifacts(out, DECOMPOSE_ARTIFACTS)
    with timer.stage("read"):
        data, checksums = _read_inputs(args.inputs)
    K = len(data)
    ranks = _ranks_from(cfg, K)
    config = _solver_config(cfg, ranks)
    n_starts = int(cfg["n_starts"])
    if n_starts < 1:
        raise CliError("n_starts must be at least 1")

    with timer.stage("compress"):
        work, basis = _maybe_compress(data, cfg)
    S, V = work[0].shape[:2]
    T = [Y.shape[2] for Y in work]
    ident = identifiability_check(S, V, T, ranks)
    for row in ident:
        if row["status"] == "fail":
            log.warning("dataset %d: R+L=%d exceeds uniqueness bound %.3g", row["k"], row["rank"], row["bound"])

    with timer.stage("multi_start"):
        runs = multi_start(work, config, n_starts, jobs=args.jobs)
    with timer.stage("select"):
        sel = select_most_reproducible(runs, cfg["normalization"], cfg["aggregate"])
    with timer.stage("expand"):
        theta = expand_factors(sel.run.theta, basis) if basis is not None else sel.run.theta
        full_cost = cost(theta, data, config.lam)

    with timer.stage("write"):
        save_factors(
            out / "factors", theta,
            **{"lambda": config.lam, "seed": sel.run.seed, "cost": sel.run.final_cost,
               "cost_full_space": full_cost},
        )
        if basis is not None:
            save_basis(out / "basis", basis, {c["file"]: c["sha256"] for c in checksums})
        _write_csv(out / "cost_trace.csv", ["iteration", "cost"],
                   [(i, _fmt(c)) for i, c in enumerate(sel.run.cost_trace)])
        _write_csv(
            out / "runs.csv",
            ["seed", "final_cost", "iterations", "converged", "n_stalls", "score", "selected"],
            [(r.seed, _fmt(r.final_cost), r.iterations, int(r.converged), r.n_stalls,
              _fmt(sel.scores[i]), int(i == sel.index)) for i, r in enumerate(runs.runs)],
        )
        seeds = [r.seed for r in runs.runs]
        _write_csv(out / "pairwise.csv", ["seed"] + seeds,
                   [[s] + [_fmt(x) for x in row] for s, row in zip(seeds, sel.pairwise)])
        if args.save_runs:
            for r in runs.runs:
                rd = out / "runs" / f"seed_{r.seed}"
                save_factors(rd, r.theta, **{"lambda": config.lam, "seed": r.seed,
                                             "cost": r.final_cost, "iterations": r.iterations,
                                             "converged": r.converged})
                _write_csv(rd / "cost_trace.csv", ["iteration", "cost"],
                           [(i, _fmt(c)) for i, c in enumerate(r.cost_trace)])
        artifacts = sorted(
            p for p in out.rglob("*")
            if p.is_file() and p.relative_to(out).parts[0] in DECOMPOSE_ARTIFACTS
        )
        manifest = {
            "command": "decompose",
            "environment": _environment(),
            "config": {**cfg, **config.to_dict(), "n_starts": n_starts},
            "jobs": args.jobs,
            "inputs": checksums,
            "dims": {"S": data[0].shape[0], "V": data[0].shape[1], "T": [Y.shape[2] for Y in data]},
            "solved_dims": {"S": S, "V": V, "T": T},
            "identifiability": ident,
            "selected": {"index": sel.index, "seed": sel.run.seed, "cost": sel.run.final_cost,
                         "cost_full_space": full_cost, "score": float(sel.scores[sel.index])},
            "failed_runs": [{"seed": s, "error": e} for s, e in runs.failed],
            "artifacts": {str(p.relative_to(out)): sha256_file(p) for p in artifacts},
        }
        dump_json(out / "manifest.json", manifest)
    dump_json(out / "timings.json", {"seconds": timer.stages})
    print(f"selected seed {sel.run.seed} (cost {sel.run.final_cost:.6g}) from {len(runs)} runs -> {out}")
    return 0


def _expand_grid(cfg, K):
    grid = []
    for point in cfg.get("grid", []):
        L = point["L"]
        grid.append((int(point["R"]), [L] * K if isinstance(L, int) else list(L),
                     float(point.get("lambda", cfg["lambda"]))))
    prod = cfg.get("grid_product")
    if prod:
        lams = prod.get("lambda", [cfg["lambda"]])
        for R, L, lam in itertools.product(prod["R"], prod["L"], lams):
            grid.append((int(R), [L] * K if isinstance(L, int) else list(L), float(lam)))
    return grid


def cmd_sweep(args):
    timer = _Timer()
    cfg = _load_config(args.config, SWEEP_DEFAULTS, args)
    out = _prepare_output(args.output, args.force)
    data, checksums = _read_inputs(args.inputs)
    K = len(data)
    try:
        grid = _expand_grid(cfg, K)
    except (KeyError, TypeError, ValueError) as exc:
        raise CliError(f"invalid grid: {exc}") from exc
    if not grid:
        raise CliError("sweep grid is empty")
    base = _solver_config(cfg, Ranks(1, [0] * K))
    with timer.stage("compress"):
        work, _ = _maybe_compress(data, cfg)
    with timer.stage("sweep"):
        rows = rank_sweep(work, grid, int(cfg["n_sweep"]), base, jobs=args.jobs,
                          normalization=cfg["normalization"])
    _write_csv(
        out / "sweep.csv",
        ["R", "L", "lambda", "score", "n_runs", "n_failed", "best_cost", "error"],
        [(r["R"], " ".join(map(str, r["L"])), _fmt(r["lambda"]), _fmt(r["score"]), r["n_runs"],
          r["n_failed"], _fmt(r["best_cost"]), r["error"]) for r in rows],
    )
    dump_json(out / "manifest.json", {
        "command": "sweep",
        "environment": _environment(),
        "config": cfg,
        "jobs": args.jobs,
        "inputs": checksums,
        "grid": [{"R": R, "L": L, "lambda": lam} for R, L, lam in grid],
        "artifacts": {"sweep.csv": sha256_file(out / "sweep.csv")},
    })
    dump_json(out / "timings.json", {"seconds": timer.stages})
    best = rows[0]
    print(f"best: R={best['R']} L={best['L']} lambda={best['lambda']:g} score={best['score']:.4f}")
    return 0


def cmd_simulate(args):
    cfg = _load_config(args.config, {}, argparse.Namespace())
    if args.seed is not None:
        cfg["seed"] = args.seed
    out = _prepare_output(args.output, args.force)
    try:
        snr = cfg.get("noise_snr_db", "inf")
        spec = SyntheticSpec(
            S=int(cfg["S"]), V=int(cfg["V"]), T=list(cfg["T"]), R=int(cfg["R"]), L=list(cfg["L"]),
            noise_snr_db=float(snr) if snr is not None else math.inf,
            collinearity=float(cfg.get("collinearity", 0.0)),
            seed=int(cfg.get("seed", 0)),
            group_sizes=tuple(cfg["group_sizes"]) if cfg.get("group_sizes") else None,
            effect_columns=tuple(cfg.get("effect_columns", ())),
            effect_size=float(cfg.get("effect_size", 0.0)),
        )
        data, truth, labels = generate_synthetic(spec)
    except (KeyError, TypeError, ValueError) as exc:
        raise CliError(f"invalid synthetic spec: {exc}") from exc
    files = []
    measured = []
    from .model import assemble
    from .tensor import cp_reconstruct
    for k, Y in enumerate(data):
        name = f"y{k + 1}.ct3"
        write_ct3(out / name, Y)
        files.append(name)
        snr_k = snr_db(cp_reconstruct(*assemble(truth, k)), Y)
        measured.append(snr_k if math.isfinite(snr_k) else "inf")
    save_factors(out / "truth", truth, seed=spec.seed)
    if labels is not None:
        (out / "labels.txt").write_text("".join(f"{l}\n" for l in labels))
    spec_echo = dict(cfg)
    spec_echo["seed"] = spec.seed
    dump_json(out / "manifest.json", {
        "command": "simulate",
        "environment": _environment(),
        "spec": spec_echo,
        "measured_snr_db": measured,
        "artifacts": {p: sha256_file(out / p) for p in files},
    })
    print(f"wrote {len(files)} datasets to {out}")
    return 0


def _read_labels(path):
    try:
        tokens = Path(path).read_text().split()
    except OSError as exc:
        raise CliError(f"cannot read labels {path}: {exc}") from exc
    return np.array(tokens)


def cmd_report(args):
    src = Path(args.decomposition)
    try:
        theta, fman = load_factors(src / "factors")
    except (OSError, FormatError, KeyError, ValueError) as exc:
        raise CliError(f"cannot load factors from {src}: {exc}") from exc
    labels = _read_labels(args.labels)
    S = theta.dims[0]
    if labels.size != S:
        raise CliError(f"{labels.size} labels for {S} subjects")
    groups = np.unique(labels)
    if groups.size != 2:
        raise CliError(f"labels must contain exactly two groups, found {groups.size}")
    out = _prepare_output(args.output, args.force)
    (out / "maps").mkdir(exist_ok=True)

    blocks = [("shared", None, theta.S_shared, theta.V_shared)]
    blocks += [("distinct", k, theta.S_distinct[k], theta.V_distinct[k]) for k in range(theta.K)]
    rows, summary = [], []
    m = sum(S_.shape[1] for _, _, S_, _ in blocks)
    for block, k, S_blk, V_blk in blocks:
        tag = "shared" if k is None else f"distinct_{k}"
        zs, thresh = np.zeros_like(V_blk), np.zeros_like(V_blk)
        for r in range(S_blk.shape[1]):
            try:
                res = two_sample_ttest(S_blk[:, r], labels, equal_var=args.pooled)
            except ValueError as exc:
                raise CliError(str(exc)) from exc
            z = zscore(V_blk[:, r])
            if z is not None:
                zs[:, r] = z
            thresh[:, r], _ = zscore_threshold(V_blk[:, r], args.z_thresh)
            p_bonf = min(1.0, res.p * m)
            rows.append((tag, "" if k is None else k, r, _fmt(res.t), _fmt(res.p), _fmt(res.df),
                         int(res.significant), _fmt(p_bonf), int(np.count_nonzero(thresh[:, r]))))
            summary.append({"block": tag, "column": r, "t": res.t, "p": res.p,
                            "significant": bool(res.significant), "p_bonferroni": p_bonf,
                            "direction": groups[1] if res.t > 0 else groups[0],
                            "n_voxels_above_threshold": int(np.count_nonzero(thresh[:, r]))})
        if S_blk.shape[1]:
            write_cm2(out / "maps" / f"{tag}_z.cm2", zs)
            write_cm2(out / "maps" / f"{tag}_thresholded.cm2", thresh)
    _write_csv(out / "ttests.csv",
               ["block", "dataset", "column", "t", "p", "df", "significant", "p_bonferroni",
                "n_voxels_above_threshold"], rows)
    dump_json(out / "summary.json", {
        "groups": [str(g) for g in groups],
        "t_sign": f"positive t means higher mean in group {groups[1]}",
        "test": "pooled" if args.pooled else "welch",
        "alpha": 0.05,
        "z_threshold": args.z_thresh,
        "components": summary,
        "significant": [f"{s['block']}[{s['column']}]" for s in summary if s["significant"]],
    })
    dump_json(out / "manifest.json", {
        "command": "report",
        "environment": _environment(),
        "source": {"factors_manifest_sha256": sha256_file(src / "factors" / "manifest.json")},
        "labels_sha256": sha256_file(args.labels),
        "z_threshold": args.z_thresh,
        "pooled": bool(args.pooled),
    })
    n_sig = sum(s["significant"] for s in summary)
    print(f"{n_sig} of {len(summary)} components differ between groups (p < 0.05) -> {out}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="ccpd", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, inputs=True):
        p.add_argument("--config", help="JSON configuration file")
        if inputs:
            p.add_argument("inputs", nargs="+", help="CT3 dataset files")
        p.add_argument("-o", "--output", required=True, help="output directory")
        p.add_argument("--force", action="store_true", help="write into a non-empty directory")
        p.add_argument("--seed", type=int, help="base seed (overrides config)")

    p = sub.add_parser("decompose", help="multi-start coupled decomposition")
    common(p)
    p.add_argument("--jobs", type=int, default=1, help="parallel solver processes")
    p.add_argument("--no-compress", action="store_true", help="solve in the original space")
    p.add_argument("--compress-dim", type=int, help="SVD compression dimension (default 30)")
    p.add_argument("--save-runs", action="store_true", help="keep every run's factors")
    p.set_defaults(func=cmd_decompose)

    p = sub.add_parser("sweep", help="reproducibility sweep over ranks and lambda")
    common(p)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--no-compress", action="store_true")
    p.add_argument("--compress-dim", type=int)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("simulate", help="write synthetic datasets with known factors")
    common(p, inputs=False)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("report", help="group t-tests and thresholded spatial maps")
    p.add_argument("decomposition", help="output directory of `decompose`")
    p.add_argument("--labels", required=True, help="text file with one group label per subject")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--force", action="store_true")
    p.add_argument("--z-thresh", type=float, default=2.7)
    p.add_argument("--pooled", action="store_true", help="pooled-variance t-test instead of Welch")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None):
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "jobs", 1) < 1:
        parser.error("--jobs must be at least 1")
    try:
        return args.func(args)
    except CliError as exc:
        print(f"ccpd {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, RuntimeError) as exc:
        print(f"ccpd {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
