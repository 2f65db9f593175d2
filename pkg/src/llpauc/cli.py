"""Command-line surface: simulation, bound verification, training,
evaluation and gradient checking, with machine-readable outputs.

Exit codes: 0 success, 1 runtime failure, 2 invalid arguments or
preconditions, 3 a verification/check reported failures. Every run
writes a ``manifest.json`` echoing the fully resolved configuration into
its output directory; the ``LLPAUC_OUTPUT_DIR`` environment variable
overrides the directory.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys

import numpy as np

from . import bounds as bounds_mod
from . import data as data_mod
from . import model as model_mod
from . import trainer as trainer_mod
from .loss import DualState, LossHyper, batch_objective
from .trainer import TrainConfig

log = logging.getLogger("llpauc")

OUTPUT_DIR_ENV = "LLPAUC_OUTPUT_DIR"

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2
EXIT_CHECK_FAILED = 3


class UsageError(ValueError):
    pass


def _resolve_outdir(args, default_name: str) -> str:
    outdir = os.environ.get(OUTPUT_DIR_ENV) or args.output_dir or default_name
    os.makedirs(outdir, exist_ok=True)
    return outdir


def _write_json(path: str, payload) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2)


def _write_manifest(outdir: str, subcommand: str, config: dict) -> None:
    _write_json(os.path.join(outdir, "manifest.json"), {"subcommand": subcommand, "config": config})


def _rates(text: str) -> list:
    try:
        vals = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"could not parse rate list {text!r}")
    if not vals:
        raise UsageError("rate list is empty")
    return vals


# ---------------------------------------------------------------- simulate


def cmd_simulate(args) -> int:
    if args.n_samples < 2:
        raise UsageError("--n-samples must be at least 2")
    alphas = _rates(args.alphas) if args.alphas else bounds_mod.default_rate_grid(args.alpha_lo, args.grid_size)
    betas = _rates(args.betas) if args.betas else bounds_mod.default_rate_grid(args.beta_lo, args.grid_size)
    outdir = _resolve_outdir(args, "llpauc-simulate")
    config = {
        "n_pos": args.n_pos,
        "n_neg": args.n_neg,
        "n_samples": args.n_samples,
        "k": args.k,
        "alphas": alphas,
        "betas": betas,
        "seed": args.seed,
        "output_dir": outdir,
    }
    _write_manifest(outdir, "simulate", config)
    grid = bounds_mod.simulate_correlation(
        args.n_pos, args.n_neg, args.n_samples, args.k, alphas, betas, args.seed
    )
    with open(os.path.join(outdir, "correlation.csv"), "w", encoding="utf-8") as fh:
        fh.write(grid.to_csv())
    _write_json(os.path.join(outdir, "correlation.json"), grid.to_dict())

    ai, bi = grid.argmax_cell()
    summary = {
        "argmax": {"alpha": grid.alphas[ai], "beta": grid.betas[bi], "corr": float(grid.corr[ai, bi])},
        "auc_cell": None,
        "best_opauc_cell": None,
    }
    if 1.0 in grid.alphas:
        row = grid.alphas.index(1.0)
        if 1.0 in grid.betas:
            summary["auc_cell"] = {"alpha": 1.0, "beta": 1.0, "corr": float(grid.corr[row, grid.betas.index(1.0)])}
        masked = np.where(np.isnan(grid.corr[row]), -np.inf, grid.corr[row])
        best_b = int(np.argmax(masked))
        summary["best_opauc_cell"] = {"alpha": 1.0, "beta": grid.betas[best_b], "corr": float(grid.corr[row, best_b])}
    _write_json(os.path.join(outdir, "summary.json"), summary)
    log.info("argmax cell alpha=%s beta=%s corr=%s", summary["argmax"]["alpha"], summary["argmax"]["beta"], summary["argmax"]["corr"])
    print(f"wrote correlation grid to {outdir}; argmax cell {summary['argmax']}")
    return EXIT_OK


# ------------------------------------------------------------ verify-bounds


def cmd_verify_bounds(args) -> int:
    outdir = _resolve_outdir(args, "llpauc-verify-bounds")
    config = {"n_pos": args.n_pos, "n_neg": args.n_neg, "k": args.k, "output_dir": outdir}
    _write_manifest(outdir, "verify-bounds", config)
    report = bounds_mod.verify_bounds_exhaustive(args.n_pos, args.n_neg, args.k)
    _write_json(os.path.join(outdir, "verification.json"), report.to_dict())
    print(
        f"checked {report.arrangements_checked} arrangements: "
        f"{report.total_violations} violations (report in {outdir})"
    )
    return EXIT_OK if report.total_violations == 0 else EXIT_CHECK_FAILED


# ------------------------------------------------------------------- train


def _build_split(args) -> data_mod.SplitResult:
    spec = data_mod.SplitSpec(
        train_frac=args.train_frac,
        val_frac=args.val_frac,
        test_frac=args.test_frac,
        min_user_interactions=args.min_user_interactions,
        seed=args.split_seed if args.split_seed is not None else args.seed,
        noise_mode=args.noise_mode,
        noise_rating_threshold=args.noise_threshold,
    )
    if args.data:
        table = data_mod.load_interactions(args.data, fmt=args.fmt)
    elif args.synthetic:
        table = data_mod.synth_generate(
            n_users=args.synth_users,
            n_items=args.synth_items,
            d_true=args.synth_d_true,
            density=args.synth_density,
            noise_flip_rate=args.synth_flip_rate,
            seed=args.seed,
        ).table
    else:
        raise UsageError("provide --data FILE or --synthetic")
    return data_mod.make_split(table, spec)


def _train_config(args) -> TrainConfig:
    if args.loss in trainer_mod.LLPAUC_FAMILY and not args.w > 4.0 * args.kappa:
        raise UsageError(f"--w must exceed 4*kappa = {4.0 * args.kappa} (strong-concavity requirement), got {args.w}")
    return TrainConfig(
        loss_kind=args.loss,
        alpha=args.alpha,
        beta=args.beta,
        kappa=args.kappa,
        w=args.w,
        lr=args.lr,
        batch_size=args.batch_size,
        neg_per_pos=args.neg_per_pos,
        epochs=args.epochs,
        seed=args.seed,
        eval_k=args.eval_k,
        select_metric=args.select_metric,
        optimizer=args.optimizer,
        dim=args.dim,
        patience=args.patience,
        dual_init=args.dual_init,
    )


def cmd_train(args) -> int:
    config = _train_config(args)
    split = _build_split(args)
    outdir = _resolve_outdir(args, "llpauc-train")
    manifest = dataclasses.asdict(config)
    manifest.update({"data": args.data, "synthetic": args.synthetic, "output_dir": outdir})
    manifest["split"] = split.manifest
    _write_manifest(outdir, "train", manifest)
    data_mod.write_split(split, os.path.join(outdir, "splits"))

    best_model, history = trainer_mod.train(split, config)
    model_mod.save_checkpoint(best_model, os.path.join(outdir, "checkpoint.json"))
    with open(os.path.join(outdir, "history.csv"), "w", encoding="utf-8") as fh:
        fh.write(history.to_csv())
    _write_json(os.path.join(outdir, "history.json"), history.to_dict())
    print(f"trained {config.loss_kind}; best epoch {history.best_epoch}; artifacts in {outdir}")
    return EXIT_OK


# ---------------------------------------------------------------- evaluate


def cmd_evaluate(args) -> int:
    ks = [int(v) for v in args.ks.split(",") if v.strip()]
    if not ks or min(ks) < 1:
        raise UsageError("--ks must list positive integers")
    m = model_mod.load_checkpoint(args.checkpoint)
    splits_dir = args.splits_dir
    train_table = data_mod.load_interactions(os.path.join(splits_dir, "train.tsv"))
    held_table = data_mod.load_interactions(os.path.join(splits_dir, f"{args.on}.tsv"))
    outdir = _resolve_outdir(args, "llpauc-evaluate")
    _write_manifest(
        outdir,
        "evaluate",
        {"checkpoint": args.checkpoint, "splits_dir": splits_dir, "on": args.on, "ks": ks, "output_dir": outdir},
    )
    report = trainer_mod.evaluate_full_ranking(
        m,
        held_table.positives_by_user(),
        k_list=ks,
        exclude_by_user=train_table.positives_by_user(),
    )
    _write_json(os.path.join(outdir, "evaluation.json"), report.to_dict())
    print(f"evaluated {report.n_users_evaluated} users ({report.n_users_skipped} skipped); report in {outdir}")
    return EXIT_OK


# ---------------------------------------------------------------- gradcheck

_REL_TOL = 1e-4
_ABS_TOL = 1e-7
_FD_STEP = 1e-5


def _fd_ok(analytic: float, numeric: float) -> bool:
    diff = abs(analytic - numeric)
    scale = max(abs(analytic), abs(numeric))
    return diff <= _ABS_TOL or diff <= _REL_TOL * scale


def _value(pos, neg, dual, hyper) -> float:
    return batch_objective(pos, neg, dual, hyper).value


def _random_point(rng: np.random.Generator, kappa: float):
    pos = rng.uniform(0.0, 1.0, size=rng.integers(2, 9))
    neg = rng.uniform(0.0, 1.0, size=rng.integers(2, 13))
    a = float(rng.uniform(0.05, 0.95))
    b = float(rng.uniform(0.05, 0.95))
    lo = max(-a, b - 1.0)
    gamma = float(rng.uniform(lo + 0.01, 0.99))
    dual = DualState(a=a, b=b, gamma=gamma, s_plus=float(rng.normal()), s_minus=float(rng.normal()))
    hyper = LossHyper(
        alpha=float(rng.uniform(0.1, 1.0)), beta=float(rng.uniform(0.05, 1.0)), kappa=kappa, w=4.0 * kappa + 1.0
    )
    return pos, neg, dual, hyper


def _check_point(pos, neg, dual, hyper, failures: list) -> int:
    res = batch_objective(pos, neg, dual, hyper)
    h = _FD_STEP
    checked = 0

    def fd(plus, minus):
        return (plus - minus) / (2.0 * h)

    for idx in range(pos.size):
        up, down = pos.copy(), pos.copy()
        up[idx] += h
        down[idx] -= h
        numeric = fd(_value(up, neg, dual, hyper), _value(down, neg, dual, hyper))
        checked += 1
        if not _fd_ok(res.grad_scores_pos[idx], numeric):
            failures.append({"param": f"pos[{idx}]", "analytic": res.grad_scores_pos[idx], "numeric": numeric})
    for idx in range(neg.size):
        up, down = neg.copy(), neg.copy()
        up[idx] += h
        down[idx] -= h
        numeric = fd(_value(pos, up, dual, hyper), _value(pos, down, dual, hyper))
        checked += 1
        if not _fd_ok(res.grad_scores_neg[idx], numeric):
            failures.append({"param": f"neg[{idx}]", "analytic": res.grad_scores_neg[idx], "numeric": numeric})

    scalars = {
        "a": res.grad_a,
        "b": res.grad_b,
        "gamma": res.grad_gamma,
        "s_plus": res.grad_s_plus,
        "s_minus": res.grad_s_minus,
    }
    for name, analytic in scalars.items():
        dual_up = dataclasses.replace(dual, **{name: getattr(dual, name) + h})
        dual_dn = dataclasses.replace(dual, **{name: getattr(dual, name) - h})
        numeric = fd(_value(pos, neg, dual_up, hyper), _value(pos, neg, dual_dn, hyper))
        checked += 1
        if not _fd_ok(analytic, numeric):
            failures.append({"param": name, "analytic": analytic, "numeric": numeric})
    return checked


def _check_embeddings(rng: np.random.Generator, failures: list) -> int:
    """End-to-end chain of the saddle objective through the embedding tables."""
    n_users, n_items, dim = 3, 6, 4
    m = model_mod.init(n_users, n_items, dim=dim, scheme="seeded-normal", seed=int(rng.integers(2**31)))
    users = np.array([0, 1, 1, 2])
    pos_items = np.array([0, 2, 3, 1])
    neg = [np.array([1, 4, 5]), np.array([0, 4, 5]), np.array([0, 1, 5]), np.array([0, 3, 4])]
    neg_users = np.repeat(users, 3)
    neg_items = np.concatenate(neg)
    dual = DualState(a=0.4, b=0.6, gamma=0.2, s_plus=0.1, s_minus=-0.2)
    hyper = LossHyper(alpha=0.5, beta=0.5, kappa=5.0, w=21.0)

    def objective(mm: model_mod.MfModel) -> float:
        ps = model_mod.score_pairs(mm, users, pos_items)
        ns = model_mod.score_pairs(mm, neg_users, neg_items)
        return batch_objective(ps, ns, dual, hyper).value

    res = batch_objective(
        model_mod.score_pairs(m, users, pos_items),
        model_mod.score_pairs(m, neg_users, neg_items),
        dual,
        hyper,
    )
    du, di = model_mod.embedding_grads(
        m,
        np.concatenate([users, neg_users]),
        np.concatenate([pos_items, neg_items]),
        np.concatenate([res.grad_scores_pos, res.grad_scores_neg]),
    )
    checked = 0
    h = _FD_STEP
    for table, grad, name in ((m.user_vectors, du, "user"), (m.item_vectors, di, "item")):
        for _ in range(6):
            r = int(rng.integers(table.shape[0]))
            c = int(rng.integers(table.shape[1]))
            orig = table[r, c]
            table[r, c] = orig + h
            up = objective(m)
            table[r, c] = orig - h
            down = objective(m)
            table[r, c] = orig
            numeric = (up - down) / (2.0 * h)
            checked += 1
            if not _fd_ok(grad[r, c], numeric):
                failures.append({"param": f"{name}[{r},{c}]", "analytic": grad[r, c], "numeric": numeric})
    return checked


def run_gradient_checks(seed: int = 0, n_points: int = 50, kappas=(1.0, 5.0, 20.0)) -> dict:
    """Finite-difference audit of every analytic partial derivative."""
    rng = np.random.default_rng(seed)
    failures: list = []
    checked = 0
    for kappa in kappas:
        for _ in range(n_points):
            pos, neg, dual, hyper = _random_point(rng, kappa)
            checked += _check_point(pos, neg, dual, hyper, failures)
    checked += _check_embeddings(rng, failures)
    return {"n_checks": checked, "n_failures": len(failures), "failures": failures[:20]}


def cmd_gradcheck(args) -> int:
    outdir = _resolve_outdir(args, "llpauc-gradcheck")
    kappas = _rates(args.kappas)
    _write_manifest(outdir, "gradcheck", {"seed": args.seed, "n_points": args.n_points, "kappas": kappas, "output_dir": outdir})
    report = run_gradient_checks(seed=args.seed, n_points=args.n_points, kappas=kappas)
    _write_json(os.path.join(outdir, "gradcheck.json"), report)
    print(f"{report['n_checks']} derivative checks, {report['n_failures']} failures (report in {outdir})")
    return EXIT_OK if report["n_failures"] == 0 else EXIT_CHECK_FAILED


# -------------------------------------------------------------------- main


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="llpauc", description=__doc__)
    parser.add_argument("--log-level", default="WARNING", help="logging level name")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    def common(p):
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--output-dir", default=None, help=f"output directory (env {OUTPUT_DIR_ENV} overrides)")

    p = sub.add_parser("simulate", help="Monte Carlo correlation study over random rankings")
    common(p)
    p.add_argument("--n-pos", type=int, default=50)
    p.add_argument("--n-neg", type=int, default=500)
    p.add_argument("--n-samples", type=int, default=5000)
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--alphas", default=None, help="comma-separated TPR rates; default log grid")
    p.add_argument("--betas", default=None, help="comma-separated FPR rates; default log grid")
    p.add_argument("--alpha-lo", type=float, default=0.05)
    p.add_argument("--beta-lo", type=float, default=0.01)
    p.add_argument("--grid-size", type=int, default=7)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("verify-bounds", help="exhaustive Top-K bound verification")
    common(p)
    p.add_argument("--n-pos", type=int, required=True)
    p.add_argument("--n-neg", type=int, required=True)
    p.add_argument("--k", type=int, required=True)
    p.set_defaults(func=cmd_verify_bounds)

    p = sub.add_parser("train", help="train a matrix-factorization model")
    common(p)
    p.add_argument("--data", default=None, help="interaction file (tsv/csv with header)")
    p.add_argument("--fmt", default="tsv", choices=["tsv", "csv"])
    p.add_argument("--synthetic", action="store_true", help="generate a synthetic dataset instead of --data")
    p.add_argument("--synth-users", type=int, default=200)
    p.add_argument("--synth-items", type=int, default=300)
    p.add_argument("--synth-d-true", type=int, default=8)
    p.add_argument("--synth-density", type=float, default=0.05)
    p.add_argument("--synth-flip-rate", type=float, default=0.0)
    p.add_argument("--train-frac", type=float, default=0.8)
    p.add_argument("--val-frac", type=float, default=0.1)
    p.add_argument("--test-frac", type=float, default=0.1)
    p.add_argument("--min-user-interactions", type=int, default=3)
    p.add_argument("--noise-mode", default="clean", choices=["clean", "noise"])
    p.add_argument("--noise-threshold", type=float, default=3.0)
    p.add_argument("--split-seed", type=int, default=None, help="defaults to --seed")
    p.add_argument("--loss", default="llpauc", choices=list(trainer_mod.LOSS_KINDS))
    p.add_argument("--alpha", type=float, default=0.5)
    p.add_argument("--beta", type=float, default=0.1)
    p.add_argument("--kappa", type=float, default=5.0)
    p.add_argument("--w", type=float, default=21.0)
    p.add_argument("--lr", type=float, default=0.001)
    p.add_argument("--batch-size", type=int, default=128)
    p.add_argument("--neg-per-pos", type=int, default=100)
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--eval-k", type=int, default=20)
    p.add_argument("--select-metric", default="recall", choices=["recall", "ndcg"])
    p.add_argument("--optimizer", default="sgda", choices=["sgda", "adam"])
    p.add_argument("--dim", type=int, default=32)
    p.add_argument("--patience", type=int, default=10)
    p.add_argument("--dual-init", default="deterministic", choices=["deterministic", "random"])
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="full-ranking evaluation of a checkpoint")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--splits-dir", required=True, help="directory with train/val/test tsv files")
    p.add_argument("--on", default="test", choices=["val", "test"])
    p.add_argument("--ks", default="20", help="comma-separated K values")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("gradcheck", help="finite-difference audit of the analytic gradients")
    common(p)
    p.add_argument("--n-points", type=int, default=50)
    p.add_argument("--kappas", default="1,5,20")
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    logging.basicConfig(level=getattr(logging, args.log_level.upper(), logging.WARNING))
    try:
        return args.func(args)
    except (UsageError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # noqa: BLE001 - boundary of the process
        log.exception("run failed")
        print(f"runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
