"""Command-line entry point.

Subcommands: gen-data, gen-mask, complete, baseline, sweep, verify, eval.
Settings resolve flag > config file (JSON, --config) > default. Exit
codes: 0 success, 1 usage or config error, 2 numeric failure,
3 verification failure.

Image (PGM) data is normalized to [0, 1] for training by dividing by the
file's maxval; recovered images are written back as 8-bit P5. Non-image
matrices travel as comma-separated text with 17 significant digits.
"""
from __future__ import annotations

import argparse
import copy
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import theory_lab, trainer
from .air_reg import (RegParam, build_laplacian, dirichlet_energy,
                      grad_wrt_W, grad_wrt_X)
from .baselines import (FixedLaplacians, TvConfig, knn_impute, svd_impute,
                        train_fixed_laplacian, train_tv, tv_value_and_grad)
from .data_lab import (GroundTruth, SamplingMask, apply_mask, gen_block_ratings,
                       gen_lowrank, generate_mask, read_mask_pgm, read_pgm,
                       write_mask_pgm, write_pgm)
from .dmf import FactorChain, fidelity_grad, fidelity_loss, initialize
from .errors import (DivergenceError, ImputeError, InvalidInput,
                     NumericOverflow, ParseError)
from .mat_core import finite_difference_grad, gaussian_matrix, make_rng
from .trainer import ModelState, TrainConfig, train

__all__ = ["main", "run_complete", "run_sweep", "run_verify", "default_config"]


def default_config() -> dict:
    return copy.deepcopy({
        "seed": 0,
        "model_seed": None,
        "data": {"kind": "lowrank", "path": None, "rows": 100, "cols": 100,
                 "rank": 5, "row_groups": 6, "col_groups": 8, "noise": 0.0},
        "mask": {"kind": "random", "path": None, "missing": 0.3,
                 "top": 0, "left": 0, "height": 1, "width": 1,
                 "period": 4, "thickness": 1},
        "model": {"depth": 3, "width": 0, "init": "gaussian",
                  "variance": 1e-5},
        "regularizer": {"mode": "air", "parameterization": "product_form",
                        "lambda_mode": "paper_auto", "lambda_row": 0.0,
                        "lambda_col": 0.0, "tv_eps": 1e-6, "tv_weight": None,
                        "fixed_path": None},
        "optimizer": {"kind": "adam", "lr": 1e-3, "beta1": 0.9,
                      "beta2": 0.999, "eps": 1e-8},
        "stopping": {"max_iters": 10000, "delta": None, "patience": 1,
                     "warmup": 500, "mse_obs": None},
        "log_every": 100,
        "track_singular_values": 0,
        "outputs": {"trace_csv": "trace.csv", "recovered_path": None,
                    "report_path": "report.json"},
    })


def _deep_update(base: dict, upd: dict, path: str = "") -> dict:
    for key, val in upd.items():
        if key not in base:
            raise InvalidInput(f"unknown config key {path + key!r}")
        if isinstance(base[key], dict) and isinstance(val, dict):
            _deep_update(base[key], val, path + key + ".")
        else:
            base[key] = val
    return base


def load_config(path: str | None, overrides: dict) -> dict:
    cfg = default_config()
    if path is not None:
        with open(path) as f:
            try:
                file_cfg = json.load(f)
            except json.JSONDecodeError as e:
                raise InvalidInput(f"config {path} is not valid JSON: {e}") from None
        if not isinstance(file_cfg, dict):
            raise InvalidInput(f"config {path} must hold a JSON object")
        _deep_update(cfg, file_cfg)
    _deep_update(cfg, overrides)
    return cfg


_ENUMS = {
    ("data", "kind"): ("lowrank", "block_ratings", "image"),
    ("mask", "kind"): ("random", "patch", "texture", "file"),
    ("model", "init"): ("gaussian", "balanced_spectral"),
    ("regularizer", "mode"): ("air", "none", "tv", "fixed"),
    ("regularizer", "parameterization"): ("product_form", "sum_form"),
    ("regularizer", "lambda_mode"): ("paper_auto", "explicit"),
    ("optimizer", "kind"): ("adam", "gd"),
}


def _validate_config(cfg: dict):
    for (sect, key), allowed in _ENUMS.items():
        val = cfg[sect][key]
        if val not in allowed:
            raise InvalidInput(f"{sect}.{key} must be one of {allowed}, "
                               f"got {val!r}")
    if cfg["model"]["depth"] < 2:
        raise InvalidInput("model depth must be at least 2")


# ---------------------------------------------------------------------------
# file plumbing

def _is_pgm(path: str) -> bool:
    return str(path).lower().endswith(".pgm")


def write_matrix_csv(path, X):
    with open(path, "w", newline="") as f:
        for row in np.atleast_2d(X):
            f.write(",".join(format(v, ".17g") for v in row) + "\n")


def read_matrix_csv(path) -> np.ndarray:
    M = np.loadtxt(path, delimiter=",", ndmin=2, dtype=np.float64)
    return M


def _resolve(out_dir: str | None, path: str | None):
    if path is None:
        return None
    if out_dir and not os.path.isabs(path):
        return os.path.join(out_dir, path)
    return path


# ---------------------------------------------------------------------------
# experiment assembly

def _build_data(cfg: dict, rng) -> tuple[GroundTruth, bool]:
    d = cfg["data"]
    if d["path"] is not None:
        if _is_pgm(d["path"]):
            raw = read_pgm(d["path"])
            maxval = raw.value_range[1]
            return GroundTruth(raw.full / maxval, (0.0, 1.0)), True
        return GroundTruth.from_matrix(read_matrix_csv(d["path"])), False
    if d["kind"] == "image":
        raise InvalidInput("data.kind image requires data.path")
    if d["kind"] == "lowrank":
        return gen_lowrank(rng, d["rows"], d["cols"], d["rank"]), False
    return gen_block_ratings(rng, d["rows"], d["cols"], d["row_groups"],
                             d["col_groups"], noise=d["noise"]), False


def _build_mask(cfg: dict, rng, shape) -> SamplingMask:
    mk = cfg["mask"]
    if mk["kind"] == "file" or mk["path"] is not None:
        if mk["path"] is None:
            raise InvalidInput("mask.kind file requires mask.path")
        mask = read_mask_pgm(mk["path"])
        if mask.observed.shape != shape:
            raise InvalidInput(f"mask file is {mask.observed.shape}, "
                               f"data is {shape}")
        return mask
    rows, cols = shape
    if mk["kind"] == "random":
        return generate_mask(rng, rows, cols, "random", p=mk["missing"])
    if mk["kind"] == "patch":
        return generate_mask(rng, rows, cols, "patch", r0=mk["top"],
                             c0=mk["left"], h=mk["height"], w=mk["width"])
    return generate_mask(rng, rows, cols, "texture", period=mk["period"],
                         thickness=mk["thickness"])


def _build_state(cfg: dict, m: int, n: int, rng) -> ModelState:
    mod = cfg["model"]
    reg = cfg["regularizer"]
    r = mod["width"] if mod["width"] else min(m, n)
    chain = initialize(m, n, mod["depth"], r=r, scheme=mod["init"], rng=rng,
                       variance=mod["variance"])
    par = reg["parameterization"]
    reg_row = RegParam(gaussian_matrix(rng, m, m, variance=1e-5), par)
    reg_col = RegParam(gaussian_matrix(rng, n, n, variance=1e-5), par)
    return ModelState(chain, reg_row, reg_col, adaptive=reg["mode"] == "air")


def _train_config(cfg: dict, mode: str) -> TrainConfig:
    opt = cfg["optimizer"]
    stop = cfg["stopping"]
    reg = cfg["regularizer"]
    if mode == "none":
        lambda_mode, lam_r, lam_c = "explicit", 0.0, 0.0
    else:
        lambda_mode = reg["lambda_mode"]
        lam_r, lam_c = reg["lambda_row"], reg["lambda_col"]
    return TrainConfig(
        optimizer=opt["kind"], lr=opt["lr"], beta1=opt["beta1"],
        beta2=opt["beta2"], eps=opt["eps"], max_iters=stop["max_iters"],
        stop_delta=stop["delta"], stop_patience=stop["patience"],
        stop_warmup=stop["warmup"], stop_mse_obs=stop["mse_obs"],
        lambda_mode=lambda_mode, lambda_row=lam_r, lambda_col=lam_c,
        log_every=cfg["log_every"],
        track_singular_values=cfg["track_singular_values"])


def _write_outputs(cfg: dict, out_dir, X, trace, mask, truth, is_image):
    outs = cfg["outputs"]
    trace_path = _resolve(out_dir, outs["trace_csv"])
    rec_path = outs["recovered_path"]
    if rec_path is None:
        rec_path = "recovered.pgm" if is_image else "recovered.csv"
    rec_path = _resolve(out_dir, rec_path)
    report_path = _resolve(out_dir, outs["report_path"])

    mse_obs, mse_unobs, nmae = trainer.metrics(X, truth, mask)
    report = {"nmae": nmae, "mse_obs": mse_obs, "mse_unobs": mse_unobs,
              "iters": int(trace.iters[-1]) if len(trace) else 0,
              "stop_reason": trace.stop_reason}
    if trace_path:
        trace.write_csv(trace_path)
    if rec_path:
        if is_image:
            write_pgm(np.clip(X, 0.0, 1.0) * 255.0, rec_path)
        else:
            write_matrix_csv(rec_path, X)
    if report_path:
        with open(report_path, "w") as f:
            json.dump(report, f, indent=2)
            f.write("\n")
    return report


def run_complete(cfg: dict, out_dir: str | None = None) -> dict:
    """Generate or load data, train the configured model, write outputs."""
    _validate_config(cfg)
    rng = make_rng(cfg["seed"])
    truth, is_image = _build_data(cfg, rng)
    m, n = truth.full.shape
    mask = _build_mask(cfg, rng, (m, n))
    y_obs = apply_mask(truth.full, mask)
    model_rng = rng if cfg["model_seed"] is None else make_rng(cfg["model_seed"])
    state = _build_state(cfg, m, n, model_rng)

    mode = cfg["regularizer"]["mode"]
    tcfg = _train_config(cfg, mode)
    fixed = None
    if mode == "fixed":
        path = cfg["regularizer"]["fixed_path"]
        if path is None:
            raise InvalidInput("regularizer.mode fixed requires fixed_path")
        with np.load(path) as z:
            fixed = FixedLaplacians(z["L_r"], z["L_c"], source="external")
    # preconditions all hold past this point, safe to touch the filesystem
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
    if mode in ("air", "none"):
        _, trace = train(state, mask, y_obs, tcfg, truth)
    elif mode == "tv":
        reg = cfg["regularizer"]
        weight = reg["tv_weight"]
        if weight is None:
            weight, _ = trainer.auto_lambda(y_obs, m, n)
        _, trace = train_tv(state, mask, y_obs, tcfg,
                            TvConfig(eps=reg["tv_eps"], lam_tv=weight), truth)
    else:
        _, trace = train_fixed_laplacian(state, fixed, mask, y_obs, tcfg, truth)

    X = trainer.forward(state.chain)
    return _write_outputs(cfg, out_dir, X, trace, mask, truth, is_image)


def run_sweep(cfg: dict, axis: str, values: list, out_dir: str | None = None):
    """One run per axis value (model depth or width), shared seed."""
    if axis not in ("depth", "width"):
        raise InvalidInput(f"sweep axis must be depth or width, got {axis!r}")
    if not values:
        raise InvalidInput("sweep values must be nonempty")
    _validate_config(cfg)
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)

    def one(v):
        sub = copy.deepcopy(cfg)
        sub["model"][axis] = v
        for key in ("trace_csv", "recovered_path", "report_path"):
            p = sub["outputs"][key]
            if p:
                root, ext = os.path.splitext(p)
                sub["outputs"][key] = f"{root}_{axis}{v}{ext}"
        try:
            rep = run_complete(sub, out_dir)
            return (v, rep, None)
        except Exception as e:  # failures recorded, sweep continues
            return (v, None, f"{type(e).__name__}: {e}")

    workers = max(1, int(os.environ.get("AIR_THREADS", "1")))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, values))
    else:
        results = [one(v) for v in values]

    lines = [f"{axis},nmae,mse_obs,mse_unobs,iters,stop_reason,status"]
    for v, rep, err in results:
        if rep is None:
            lines.append(f"{v},nan,nan,nan,0,,failed: {err}")
        else:
            lines.append(",".join([str(v), format(rep["nmae"], ".17g"),
                                   format(rep["mse_obs"], ".17g"),
                                   format(rep["mse_unobs"], ".17g"),
                                   str(rep["iters"]), rep["stop_reason"],
                                   "ok"]))
    summary = "\n".join(lines) + "\n"
    path = _resolve(out_dir, "sweep_summary.csv")
    with open(path, "w", newline="") as f:
        f.write(summary)
    return results


# ---------------------------------------------------------------------------
# verification suite

_EXAMPLE_ROWS = np.array([[0.6, 0.8], [0.6, 0.8], [0.8, 0.6]])


def _gradcheck(seed: int) -> tuple[bool, list[str]]:
    rng = make_rng(seed)
    lines = []
    worst = 0.0
    for m in (4, 6, 8):
        for par in ("product_form", "sum_form"):
            W = gaussian_matrix(rng, m, m, variance=0.5)
            M = gaussian_matrix(rng, m, m - 1, variance=1.0)
            p = RegParam(W, par)

            def energy(Wx, par=par, M=M):
                return dirichlet_energy(build_laplacian(RegParam(Wx, par)).L, M)

            num = finite_difference_grad(energy, W)
            ana = grad_wrt_W(p, M)
            rel = float(np.max(np.abs(ana - num)) / (np.max(np.abs(num)) + 1e-300))
            worst = max(worst, rel)
            lines.append(f"gradcheck adjacency {par} m={m}: rel err {rel:.3e}")
    # factor gradients and the X-gradient of the energy terms
    chain = initialize(6, 5, 3, scheme="gaussian", rng=rng, variance=0.04)
    mask = generate_mask(rng, 6, 5, "random", p=0.3)
    y = gaussian_matrix(rng, 1, mask.n_observed)[0]
    ana = fidelity_grad(chain, mask, y)
    for l in range(chain.depth):
        def loss(Wx, l=l):
            facs = [f.copy() for f in chain.factors]
            facs[l] = Wx
            return fidelity_loss(FactorChain(facs), mask, y)

        num = finite_difference_grad(loss, chain.factors[l])
        rel = float(np.max(np.abs(ana[l] - num)) / (np.max(np.abs(num)) + 1e-300))
        worst = max(worst, rel)
        lines.append(f"gradcheck factor {l}: rel err {rel:.3e}")
    X = gaussian_matrix(rng, 6, 5)
    Lr = build_laplacian(RegParam(gaussian_matrix(rng, 6, 6))).L
    Lc = build_laplacian(RegParam(gaussian_matrix(rng, 5, 5))).L

    def xenergy(Xx):
        return (0.4 * dirichlet_energy(Lr, Xx) + 0.6 * dirichlet_energy(Lc, Xx.T))

    num = finite_difference_grad(xenergy, X)
    ana = grad_wrt_X(Lr, Lc, X, 0.4, 0.6)
    rel = float(np.max(np.abs(ana - num)) / (np.max(np.abs(num)) + 1e-300))
    worst = max(worst, rel)
    lines.append(f"gradcheck energy-in-X: rel err {rel:.3e}")

    tvc = TvConfig(eps=1e-3)
    Xt = gaussian_matrix(rng, 6, 6)
    num = finite_difference_grad(lambda Z: tv_value_and_grad(Z, tvc)[0], Xt)
    ana = tv_value_and_grad(Xt, tvc)[1]
    rel = float(np.max(np.abs(ana - num)) / (np.max(np.abs(num)) + 1e-300))
    worst = max(worst, rel)
    lines.append(f"gradcheck tv: rel err {rel:.3e}")
    lines.append(f"gradcheck worst: {worst:.3e} (pass bound 1e-5)")
    return worst < 1e-5, lines


def run_verify(kind: str, args) -> int:
    if kind == "gradcheck":
        ok, lines = _gradcheck(args.seed)
        for ln in lines:
            print(ln)
        print(f"gradcheck: {'PASS' if ok else 'FAIL'}")
        return 0 if ok else 3

    if kind == "thm1":
        reports = []
        for lam_r, lam_c, label in ((args.lambda_row, args.lambda_col, "regularized"),
                                    (0.0, 0.0, "fidelity-only")):
            rep = theory_lab.verify_theorem1(
                m=args.rows, n=args.cols, L=args.depth, lr=args.lr,
                steps=args.steps, lam_r=lam_r, lam_c=lam_c,
                rng=make_rng(args.seed))
            v = rep.verdict
            print(f"thm1 {label}: {'PASS' if rep.passed else 'FAIL'} "
                  f"(variant {v['selected_variant']}, max rel err "
                  f"{v['max_rel_err_selected']:.3e}, statement "
                  f"{v['max_rel_err_statement']:.3e}, proof "
                  f"{v['max_rel_err_proof']:.3e})")
            reports.append(rep)
        if args.report_csv:
            reports[0].write_csv(args.report_csv)
        return 0 if all(r.passed for r in reports) else 3

    if kind == "thm2":
        M = _EXAMPLE_ROWS if args.matrix is None else read_matrix_csv(args.matrix)
        rep = theory_lab.verify_theorem2(M, lr=args.lr, steps=args.steps,
                                         eps_init=args.eps_init)
        v = rep.verdict
        print(f"thm2 symmetry: {'PASS' if v['sym_ok'] else 'FAIL'} "
              f"(max residual {v['sym_max']:.3e})")
        print(f"thm2 limit approach: {'PASS' if v['limit_ok'] else 'FAIL'} "
              f"(final sup error {v['err_limit_final']:.3e})")
        print(f"thm2 identical-pairs faster: "
              f"{'PASS' if v['s2_faster_ok'] else 'FAIL'} "
              f"(fraction {v['s2_faster_fraction']:.2f})")
        print(f"thm2 rate: {'PASS' if v['rate_ok'] else 'FAIL'} "
              f"(fitted {v['fitted_rate']:.5f} vs D={v['D']:.5f}, "
              f"band D/2={v['D'] / 2:.5f})")
        print(f"thm2 decay bound: {'PASS' if v['bound_ok'] else 'FAIL'}"
              + ("" if v["bound_ok"] else
                 f" (first violation at t={v['bound_first_fail_t']:.1f})"))
        if args.report_csv:
            rep.write_csv(args.report_csv)
        print(f"thm2: {'PASS' if rep.passed else 'FAIL'}")
        return 0 if rep.passed else 3

    if kind == "balance":
        rep = theory_lab.verify_balance(m=args.rows, n=args.cols,
                                        L=args.depth, lr=args.lr,
                                        steps=args.steps,
                                        rng=make_rng(args.seed))
        v = rep.verdict
        print(f"balance: {'PASS' if rep.passed else 'FAIL'} "
              f"(max relative residual {v['max_relative_residual']:.3e})")
        if args.report_csv:
            rep.write_csv(args.report_csv)
        return 0 if rep.passed else 3

    raise InvalidInput(f"unknown verify kind {kind!r}")


# ---------------------------------------------------------------------------
# argument parsing

def _add_complete_flags(p: argparse.ArgumentParser):
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--model-seed", type=int, dest="model_seed")
    p.add_argument("--out-dir", default=".")
    p.add_argument("--data-kind", choices=("lowrank", "block_ratings", "image"))
    p.add_argument("--data-path")
    p.add_argument("--rows", type=int)
    p.add_argument("--cols", type=int)
    p.add_argument("--rank", type=int)
    p.add_argument("--row-groups", type=int)
    p.add_argument("--col-groups", type=int)
    p.add_argument("--noise", type=float)
    p.add_argument("--mask-kind", choices=("random", "patch", "texture", "file"))
    p.add_argument("--mask-path")
    p.add_argument("--missing", type=float)
    p.add_argument("--patch-top", type=int)
    p.add_argument("--patch-left", type=int)
    p.add_argument("--patch-height", type=int)
    p.add_argument("--patch-width", type=int)
    p.add_argument("--period", type=int)
    p.add_argument("--thickness", type=int)
    p.add_argument("--depth", type=int)
    p.add_argument("--width", type=int)
    p.add_argument("--init", choices=("gaussian", "balanced_spectral"))
    p.add_argument("--reg", choices=("air", "none", "tv", "fixed"))
    p.add_argument("--parameterization", choices=("product_form", "sum_form"))
    p.add_argument("--lambda-mode", choices=("paper_auto", "explicit"))
    p.add_argument("--lambda-row", type=float)
    p.add_argument("--lambda-col", type=float)
    p.add_argument("--tv-weight", type=float)
    p.add_argument("--fixed-path")
    p.add_argument("--optimizer", choices=("adam", "gd"))
    p.add_argument("--lr", type=float)
    p.add_argument("--max-iters", type=int)
    p.add_argument("--stop-delta", type=float)
    p.add_argument("--stop-patience", type=int)
    p.add_argument("--stop-warmup", type=int)
    p.add_argument("--stop-mse-obs", type=float)
    p.add_argument("--log-every", type=int)
    p.add_argument("--track-sigmas", type=int)
    p.add_argument("--trace-csv")
    p.add_argument("--recovered")
    p.add_argument("--report")


_FLAG_MAP = {
    "seed": ("seed",), "model_seed": ("model_seed",),
    "data_kind": ("data", "kind"), "data_path": ("data", "path"),
    "rows": ("data", "rows"), "cols": ("data", "cols"),
    "rank": ("data", "rank"), "row_groups": ("data", "row_groups"),
    "col_groups": ("data", "col_groups"), "noise": ("data", "noise"),
    "mask_kind": ("mask", "kind"), "mask_path": ("mask", "path"),
    "missing": ("mask", "missing"), "patch_top": ("mask", "top"),
    "patch_left": ("mask", "left"), "patch_height": ("mask", "height"),
    "patch_width": ("mask", "width"), "period": ("mask", "period"),
    "thickness": ("mask", "thickness"),
    "depth": ("model", "depth"), "width": ("model", "width"),
    "init": ("model", "init"),
    "reg": ("regularizer", "mode"),
    "parameterization": ("regularizer", "parameterization"),
    "lambda_mode": ("regularizer", "lambda_mode"),
    "lambda_row": ("regularizer", "lambda_row"),
    "lambda_col": ("regularizer", "lambda_col"),
    "tv_weight": ("regularizer", "tv_weight"),
    "fixed_path": ("regularizer", "fixed_path"),
    "optimizer": ("optimizer", "kind"), "lr": ("optimizer", "lr"),
    "max_iters": ("stopping", "max_iters"), "stop_delta": ("stopping", "delta"),
    "stop_patience": ("stopping", "patience"),
    "stop_warmup": ("stopping", "warmup"),
    "stop_mse_obs": ("stopping", "mse_obs"),
    "log_every": ("log_every",),
    "track_sigmas": ("track_singular_values",),
    "trace_csv": ("outputs", "trace_csv"),
    "recovered": ("outputs", "recovered_path"),
    "report": ("outputs", "report_path"),
}


def _overrides_from_args(args) -> dict:
    out: dict = {}
    for flag, path in _FLAG_MAP.items():
        val = getattr(args, flag, None)
        if val is None:
            continue
        node = out
        for key in path[:-1]:
            node = node.setdefault(key, {})
        node[path[-1]] = val
    return out


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="aircomplete",
        description="Matrix completion by deep factorization with a "
                    "learnable graph regularizer.")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="write a synthetic ground-truth matrix")
    g.add_argument("--kind", choices=("lowrank", "block_ratings"),
                   default="lowrank")
    g.add_argument("--rows", type=int, default=100)
    g.add_argument("--cols", type=int, default=100)
    g.add_argument("--rank", type=int, default=5)
    g.add_argument("--row-groups", type=int, default=6)
    g.add_argument("--col-groups", type=int, default=8)
    g.add_argument("--noise", type=float, default=0.0)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)

    g = sub.add_parser("gen-mask", help="write an observation mask as PGM")
    g.add_argument("--kind", choices=("random", "patch", "texture"),
                   default="random")
    g.add_argument("--rows", type=int, required=True)
    g.add_argument("--cols", type=int, required=True)
    g.add_argument("--missing", type=float, default=0.3)
    g.add_argument("--top", type=int, default=0)
    g.add_argument("--left", type=int, default=0)
    g.add_argument("--height", type=int, default=1)
    g.add_argument("--width", type=int, default=1)
    g.add_argument("--period", type=int, default=4)
    g.add_argument("--thickness", type=int, default=1)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)

    g = sub.add_parser("complete", help="train a completion model")
    _add_complete_flags(g)

    g = sub.add_parser("baseline", help="run a comparison method")
    g.add_argument("--method", required=True,
                   choices=("knn", "svd", "dmf", "tv", "fixed"))
    g.add_argument("--k", type=int, default=5)
    g.add_argument("--svd-rank", type=int, default=10)
    g.add_argument("--svd-tol", type=float, default=1e-6)
    g.add_argument("--svd-rounds", type=int, default=200)
    _add_complete_flags(g)

    g = sub.add_parser("sweep", help="repeat a run along depth or width")
    g.add_argument("--axis", required=True, choices=("depth", "width"))
    g.add_argument("--values", required=True,
                   help="comma-separated integers, e.g. 2,3,4")
    _add_complete_flags(g)

    g = sub.add_parser("verify", help="run the numerical verification suites")
    g.add_argument("--kind", required=True,
                   choices=("thm1", "thm2", "balance", "gradcheck"))
    g.add_argument("--seed", type=int, default=7)
    g.add_argument("--rows", type=int, default=8)
    g.add_argument("--cols", type=int, default=8)
    g.add_argument("--depth", type=int, default=3)
    g.add_argument("--lr", type=float, default=None)
    g.add_argument("--steps", type=int, default=None)
    g.add_argument("--lambda-row", type=float, default=0.3)
    g.add_argument("--lambda-col", type=float, default=0.7)
    g.add_argument("--eps-init", type=float, default=0.0)
    g.add_argument("--matrix", help="CSV matrix for thm2 (default: built-in "
                                    "3-row example)")
    g.add_argument("--report-csv")

    g = sub.add_parser("eval", help="score a recovered matrix against truth")
    g.add_argument("--recovered", required=True)
    g.add_argument("--truth", required=True)
    g.add_argument("--mask", required=True)
    g.add_argument("--absolute", action="store_true")
    return parser


# ---------------------------------------------------------------------------
# command handlers

def _cmd_gen_data(args) -> int:
    rng = make_rng(args.seed)
    if args.kind == "lowrank":
        gt = gen_lowrank(rng, args.rows, args.cols, args.rank)
    else:
        gt = gen_block_ratings(rng, args.rows, args.cols, args.row_groups,
                               args.col_groups, noise=args.noise)
    if _is_pgm(args.out):
        write_pgm(gt.full, args.out)
    else:
        write_matrix_csv(args.out, gt.full)
    print(f"wrote {args.rows}x{args.cols} {args.kind} matrix to {args.out}")
    return 0


def _cmd_gen_mask(args) -> int:
    rng = make_rng(args.seed)
    if args.kind == "random":
        mask = generate_mask(rng, args.rows, args.cols, "random",
                             p=args.missing)
    elif args.kind == "patch":
        mask = generate_mask(rng, args.rows, args.cols, "patch", r0=args.top,
                             c0=args.left, h=args.height, w=args.width)
    else:
        mask = generate_mask(rng, args.rows, args.cols, "texture",
                             period=args.period, thickness=args.thickness)
    write_mask_pgm(mask, args.out)
    print(f"wrote mask ({mask.n_observed} observed of "
          f"{args.rows * args.cols}) to {args.out}")
    return 0


def _cmd_complete(args) -> int:
    cfg = load_config(args.config, _overrides_from_args(args))
    return _cmd_complete_with_cfg(cfg, args)


def _cmd_baseline(args) -> int:
    cfg = load_config(args.config, _overrides_from_args(args))
    if args.method in ("dmf", "tv", "fixed"):
        cfg["regularizer"]["mode"] = {"dmf": "none", "tv": "tv",
                                      "fixed": "fixed"}[args.method]
        return _cmd_complete_with_cfg(cfg, args)
    _validate_config(cfg)
    rng = make_rng(cfg["seed"])
    truth, is_image = _build_data(cfg, rng)
    mask = _build_mask(cfg, rng, truth.full.shape)
    masked = np.where(mask.observed, truth.full, 0.0)
    if args.method == "knn":
        X = knn_impute(masked, mask, args.k)
    else:
        X = svd_impute(masked, mask, args.svd_rank, tol=args.svd_tol,
                       max_rounds=args.svd_rounds)
    mse_obs, mse_unobs, nmae = trainer.metrics(X, truth, mask)
    report = {"nmae": nmae, "mse_obs": mse_obs, "mse_unobs": mse_unobs,
              "iters": 0, "stop_reason": args.method}
    if args.out_dir:
        os.makedirs(args.out_dir, exist_ok=True)
    rec_path = cfg["outputs"]["recovered_path"]
    if rec_path is None:
        rec_path = "recovered.pgm" if is_image else "recovered.csv"
    rec_path = _resolve(args.out_dir, rec_path)
    if is_image:
        write_pgm(np.clip(X, 0.0, 1.0) * 255.0, rec_path)
    else:
        write_matrix_csv(rec_path, X)
    report_path = _resolve(args.out_dir, cfg["outputs"]["report_path"])
    if report_path:
        with open(report_path, "w") as f:
            json.dump(report, f, indent=2)
            f.write("\n")
    print(json.dumps(report, indent=2))
    return 0


def _cmd_complete_with_cfg(cfg, args) -> int:
    try:
        report = run_complete(cfg, args.out_dir)
    except (DivergenceError, NumericOverflow) as e:
        trace = getattr(e, "trace", None)
        if trace is not None and cfg["outputs"]["trace_csv"]:
            trace.write_csv(_resolve(args.out_dir, cfg["outputs"]["trace_csv"]))
            print("partial trace flushed", file=sys.stderr)
        raise
    print(json.dumps(report, indent=2))
    return 0


def _cmd_sweep(args) -> int:
    cfg = load_config(args.config, _overrides_from_args(args))
    try:
        values = [int(v) for v in args.values.split(",") if v.strip()]
    except ValueError:
        raise InvalidInput(f"sweep values must be integers, got {args.values!r}")
    run_sweep(cfg, args.axis, values, args.out_dir)
    print(f"sweep complete, summary in "
          f"{_resolve(args.out_dir, 'sweep_summary.csv')}")
    return 0


def _cmd_verify(args) -> int:
    defaults = {"thm1": (1e-5, 1010), "thm2": (1e-2, 200_000),
                "balance": (1e-4, 1000), "gradcheck": (None, None)}
    lr, steps = defaults[args.kind]
    if args.lr is None:
        args.lr = lr
    if args.steps is None:
        args.steps = steps
    return run_verify(args.kind, args)


def _load_unit_matrix(path) -> np.ndarray:
    if _is_pgm(path):
        raw = read_pgm(path)
        return raw.full / raw.value_range[1]
    return read_matrix_csv(path)


def _cmd_eval(args) -> int:
    rec = _load_unit_matrix(args.recovered)
    if _is_pgm(args.truth):
        truth = GroundTruth(_load_unit_matrix(args.truth), (0.0, 1.0))
    else:
        truth = GroundTruth.from_matrix(read_matrix_csv(args.truth))
    mask = read_mask_pgm(args.mask)
    mse_obs, mse_unobs, nmae = trainer.metrics(rec, truth, mask,
                                               absolute=args.absolute)
    print(json.dumps({"nmae": nmae, "mse_obs": mse_obs,
                      "mse_unobs": mse_unobs}, indent=2))
    return 0


_HANDLERS = {
    "gen-data": _cmd_gen_data,
    "gen-mask": _cmd_gen_mask,
    "complete": _cmd_complete,
    "baseline": _cmd_baseline,
    "sweep": _cmd_sweep,
    "verify": _cmd_verify,
    "eval": _cmd_eval,
}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return 0 if e.code in (0, None) else 1
    try:
        return _HANDLERS[args.command](args)
    except (InvalidInput, ParseError, ImputeError, FileNotFoundError,
            IsADirectoryError, PermissionError, KeyError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except (NumericOverflow, DivergenceError) as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
