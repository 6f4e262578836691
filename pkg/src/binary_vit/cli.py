"""Command-line entry point: ``binary-vit <subcommand> [flags]``.

Every subcommand is deterministic given ``--seed``; the exit status is 0
only when all of its internal checks pass. Diagnostics go to stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import _kernels, backward, io, metrics, sab, synthetic
from .bitpack import Encoding, gemm_pm_int, pack_matrix
from .errors import BinaryVitError
from .model import ModelConfig, build_model, forward

log = logging.getLogger("binary_vit")

DEFAULT_SEED = 42
METHODS = ("bool", "cd", "approx", "approx-noscale", "learned-T")


def _emit(args, fields: dict, table: list | None = None):
    if args.json:
        payload = dict(fields)
        if table is not None:
            payload["rows"] = table
        print(json.dumps(payload, indent=2, sort_keys=False))
        return
    for key, value in fields.items():
        print(f"{key}={_fmt(value)}")
    for row in table or ():
        print("  ".join(f"{k}={_fmt(v)}" for k, v in row.items()))


def _fmt(value):
    if isinstance(value, float):
        return f"{value:.6g}"
    return str(value)


def _seed(args) -> int:
    return DEFAULT_SEED if args.seed is None else args.seed


def _synthetic_spec(text):
    try:
        n, count, conc = text.split(",")
        return int(n), int(count), float(conc)
    except ValueError:
        raise argparse.ArgumentTypeError("expected n,count,concentration") from None


def _load_rows(args):
    """(pre_softmax or None, softmax rows) from --input or --synthetic."""
    if args.input is not None:
        rows = io.read_tensor(args.input)
        if not isinstance(rows, np.ndarray) or rows.ndim != 2 or rows.shape[0] == 0:
            raise BinaryVitError("attention dump must be a non-empty rank-2 float32 tensor")
        pre = None
        if getattr(args, "pre_softmax", None) is not None:
            pre = io.read_tensor(args.pre_softmax)
            if not isinstance(pre, np.ndarray) or pre.shape != rows.shape:
                raise BinaryVitError("pre-softmax dump must match the attention dump's shape")
        return pre, sab.check_attention_rows(rows)
    n, count, conc = args.synthetic
    return synthetic.long_tailed_attention(_seed(args), count, n, conc)


def _source_group(parser):
    group = parser.add_mutually_exclusive_group(required=True)
    group.add_argument("--input", type=Path, help="TensorFile of softmax rows (rank 2, f32)")
    group.add_argument("--synthetic", type=_synthetic_spec, metavar="N,COUNT,CONC",
                       help="Dirichlet rows: tokens, row count, concentration")


def cmd_fit_beta(args) -> int:
    _, rows = _load_rows(args)
    fit = sab.fit_beta(rows, args.iters)
    approx = float(sab.approx_errors(rows, fit.beta).mean())
    optimal = float(sab.coordinate_descent_rows(rows, args.iters).error.mean())
    fields = {"beta": fit.beta, "residual": fit.residual, "samples": fit.samples,
              "approx_error": approx, "cd_error": optimal}
    if args.out is not None:
        args.out.write_text("".join(f"{k}={v!r}\n" for k, v in fields.items()))
    _emit(args, fields)
    return 0


def _method_errors(method, pre, rows, args, calib):
    if method == "bool":
        if pre is None:
            return None
        return sab.bool_errors(pre, rows)
    if method == "cd":
        return sab.coordinate_descent_rows(rows, args.iters).error
    if method == "approx":
        return sab.approx_errors(rows, args.beta, with_scale=True)
    if method == "approx-noscale":
        return sab.approx_errors(rows, args.beta, with_scale=False)
    if method == "learned-T":
        return calib.errors(rows)
    raise BinaryVitError(f"unknown method {method!r}")


def cmd_quant_error(args) -> int:
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    unknown = set(methods) - set(METHODS)
    if unknown:
        raise BinaryVitError(f"unknown methods {sorted(unknown)}; choose from {', '.join(METHODS)}")
    pre, rows = _load_rows(args)
    calib = None
    eval_pre, eval_rows = pre, rows
    if "learned-T" in methods:
        if rows.shape[0] < 2:
            raise BinaryVitError("learned-T needs at least two rows (calibration + evaluation)")
        half = rows.shape[0] // 2
        calib = sab.fit_static_threshold(rows[:half])
        eval_rows = rows[half:]
        eval_pre = None if pre is None else pre[half:]
        log.info("learned-T calibrated on %d rows: T=%.6g scale=%.6g",
                 half, calib.threshold, calib.scale)
    # The optimal threshold is v/2 <= max/2, so beta above one half cannot be optimal.
    ok = args.beta <= 0.5
    if not ok:
        log.warning("beta=%g exceeds 0.5; optimal thresholds never exceed half the row maximum",
                    args.beta)

    table, means = [], {}
    for method in methods:
        errs = _method_errors(method, eval_pre, eval_rows, args, calib)
        if errs is None:
            log.warning("skipping bool: it needs pre-softmax scores (--pre-softmax)")
            continue
        means[method] = float(errs.mean())
        table.append({"method": method, "mean_error": means[method]})

    if "bool" in means:
        for m in ("approx", "approx-noscale"):
            if m in means and means[m] > means["bool"]:
                log.warning("%s error %.6g exceeds the Bool baseline %.6g", m, means[m], means["bool"])
                ok = False
    _emit(args, {"rows": int(eval_rows.shape[0]), "beta": args.beta, "iters": args.iters}, table)
    return 0 if ok else 1


def cmd_beta_sweep(args) -> int:
    _, rows = _load_rows(args)
    betas = [float(b) for b in args.betas.split(",")]
    cd = float(sab.coordinate_descent_rows(rows, args.iters).error.mean())
    table = []
    for beta in betas:
        table.append({
            "beta": beta,
            "approx": float(sab.approx_errors(rows, beta).mean()),
            "approx_noscale": float(sab.approx_errors(rows, beta, with_scale=False).mean()),
            "active_fraction": float(sab.sab_binarize_rows(rows, beta).mean()),
        })
    _emit(args, {"rows": int(rows.shape[0]), "cd_error": cd}, table)
    return 0


def _time_best(fn, reps):
    best = float("inf")
    for _ in range(reps):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def run_bench(m, n, k, reps, seed):
    """Time packed XNOR-popcount GEMM against the naive FP GEMM on the same
    +-1 operands; the results must agree exactly before timing counts."""
    rng = np.random.default_rng(seed)
    a = np.where(rng.random((m, k)) < 0.5, -1.0, 1.0).astype(np.float32)
    bt = np.where(rng.random((n, k)) < 0.5, -1.0, 1.0).astype(np.float32)
    A = pack_matrix(a, Encoding.PLUS_MINUS)
    B = pack_matrix(bt, Encoding.PLUS_MINUS)
    packed = gemm_pm_int(A, B)
    dense = _kernels.naive_fp_gemm(a, bt)
    correct = bool(np.array_equal(packed, dense.astype(np.int64)))
    t_packed = _time_best(lambda: gemm_pm_int(A, B), reps)
    t_fp = _time_best(lambda: _kernels.naive_fp_gemm(a, bt), reps)
    return {"m": m, "n": n, "k": k, "reps": reps, "correct": correct,
            "packed_seconds": t_packed, "fp_seconds": t_fp, "speedup": t_fp / t_packed}


def cmd_bench(args) -> int:
    result = run_bench(args.m, args.n, args.k, args.reps, _seed(args))
    if not result["correct"]:
        log.error("packed GEMM disagrees with the naive reference")
    _emit(args, result)
    return 0 if result["correct"] else 1


def _config_from(path):
    if path is None:
        return ModelConfig()
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise BinaryVitError(f"{path}: invalid JSON ({exc.msg})") from None
    return ModelConfig.from_dict(data)


def cmd_ops(args) -> int:
    cfg = _config_from(args.config)
    table = []
    for stage, rep in metrics.stage_reports(cfg).items():
        table.append({"stage": stage, **rep.as_dict()})
    ok = all(r["total_ops"] == r["bops"] / 64 + r["flops"] for r in table)
    _emit(args, {"parameters": metrics.parameter_count(cfg)}, table)
    return 0 if ok else 1


def cmd_init(args) -> int:
    cfg = _config_from(args.config)
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    model = build_model(cfg)
    io.save_model(args.out, model)
    _emit(args, {"saved": str(args.out), "parameters": model.parameter_count()})
    return 0


def cmd_forward(args) -> int:
    if args.weights is not None:
        model = io.load_model(args.weights)
    else:
        cfg = _config_from(args.config)
        model = build_model(cfg if args.seed is None else cfg.replace(seed=args.seed))
    images = io.read_tensor(args.input)
    if not isinstance(images, np.ndarray):
        raise BinaryVitError("input must be a float32 image tensor")
    logits = forward(model, images)
    if args.out is not None:
        io.write_tensor(args.out, logits.astype(np.float32))
    rows = [{"row": i, "logits": row.tolist() if args.json else " ".join(f"{v:.6g}" for v in row)}
            for i, row in enumerate(logits)]
    _emit(args, {"stage": model.cfg.stage.value, "batch": int(logits.shape[0])}, rows)
    return 0


def run_gradcheck(trials, n, step, tol, seed):
    rng = np.random.default_rng(seed)
    worst = 0.0
    failures = 0
    for _ in range(trials):
        x = rng.standard_normal(n)
        g = rng.standard_normal(n)
        s = backward.softmax(x)
        rep = backward.finite_diff_check(backward.softmax, x, backward.softmax_vjp(s, g), g, step)
        worst = max(worst, rep.max_rel_err)
        failures += not rep.passed(tol)
    return {"trials": trials, "n": n, "step": step, "tolerance": tol,
            "max_rel_err": worst, "failures": failures}


def cmd_gradcheck(args) -> int:
    result = run_gradcheck(args.trials, args.n, args.step, args.tol, _seed(args))
    _emit(args, {**result, "status": "pass" if result["failures"] == 0 else "fail"})
    return 0 if result["failures"] == 0 else 1


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None,
                        help=f"64-bit seed (default {DEFAULT_SEED}; overrides a config file's seed)")
    common.add_argument("--json", action="store_true", help="machine-readable output")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="binary-vit", description="Binary vision-transformer kernels, solvers and checks.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit-beta", parents=[common], help="regress optimal thresholds on row maxima")
    _source_group(p)
    p.add_argument("--iters", type=int, default=sab.DEFAULT_ITERS)
    p.add_argument("--out", type=Path, help="write key=value results here")
    p.set_defaults(func=cmd_fit_beta)

    p = sub.add_parser("quant-error", parents=[common], help="mean quantization error per method")
    _source_group(p)
    p.add_argument("--pre-softmax", type=Path, help="pre-softmax scores matching --input")
    p.add_argument("--beta", type=float, default=sab.DEFAULT_BETA)
    p.add_argument("--iters", type=int, default=sab.DEFAULT_ITERS)
    p.add_argument("--methods", default=",".join(METHODS))
    p.set_defaults(func=cmd_quant_error)

    p = sub.add_parser("beta-sweep", parents=[common], help="approximation error across beta values")
    _source_group(p)
    p.add_argument("--betas", default="0.05,0.1,0.2,0.25,0.35,0.45")
    p.add_argument("--iters", type=int, default=sab.DEFAULT_ITERS)
    p.set_defaults(func=cmd_beta_sweep)

    p = sub.add_parser("bench", parents=[common], help="packed vs naive FP GEMM timing")
    p.add_argument("--m", type=int, default=1024)
    p.add_argument("--n", type=int, default=1024)
    p.add_argument("--k", type=int, default=1024)
    p.add_argument("--reps", type=int, default=5)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("ops", parents=[common], help="BOPs/FLOPs/OPs and size per stage")
    p.add_argument("--config", type=Path)
    p.set_defaults(func=cmd_ops)

    p = sub.add_parser("init", parents=[common], help="build a seeded model and save it")
    p.add_argument("--config", type=Path)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_init, seed=None)

    p = sub.add_parser("forward", parents=[common], help="run a model on an image tensor")
    p.add_argument("--config", type=Path)
    p.add_argument("--weights", type=Path, help="model directory written by `init`")
    p.add_argument("--input", type=Path, required=True)
    p.add_argument("--out", type=Path, help="write logits as a float32 TensorFile")
    p.set_defaults(func=cmd_forward, seed=None)

    p = sub.add_parser("gradcheck", parents=[common], help="softmax VJP vs finite differences")
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--n", type=int, default=32)
    p.add_argument("--step", type=float, default=1e-5)
    p.add_argument("--tol", type=float, default=1e-5)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except (BinaryVitError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
