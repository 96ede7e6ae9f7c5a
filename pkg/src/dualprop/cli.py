"""Command line entry point: ``dualprop <subcommand> [flags]``."""

import argparse
import json
import logging
import os
import sys

import numpy as np

from .analysis import cosine_similarity, grad_angle, lipschitz_estimate
from .data import export_mlxtend_subset, synth_blobs
from .experiment import ExperimentConfig, load_config, load_data, run_experiment, run_theory_checks
from .inference import run_inference
from .learning import backprop_oracle, finite_difference_oracle, weight_gradient
from .losses import make_loss, one_hot
from .model import forward, init_weights, load_checkpoint, mlp_specs


def _add_run_flags(p):
    p.add_argument("--config", help="key = value config file; flags override it")
    p.add_argument("--scheme", choices=["dp", "dpt", "dp-stabilized"])
    p.add_argument("--alpha", type=float)
    p.add_argument("--beta", type=float)
    p.add_argument("--schedule", help="sweep, sweeps:N or forward:N")
    p.add_argument("--arch", help='layer widths, e.g. "784-512-512-10"')
    p.add_argument("--activation", help="relu, hard-sigmoid, identity or leaky-relu[:slope]")
    p.add_argument("--bias", choices=["off", "augmented"])
    p.add_argument("--loss", choices=["ls", "ce"])
    p.add_argument("--opt", choices=["adam", "sgd"])
    p.add_argument("--lr", type=float)
    p.add_argument("--momentum", type=float)
    p.add_argument("--weight-decay", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--data", help="mnist:<dir> or blobs:classes=3,dim=20,n=100,sep=4")
    p.add_argument("--subset", type=int, help="train on a seed-shuffled subset of N samples")
    p.add_argument("--grad-angle-every", type=int)
    p.add_argument("--lipschitz-every-epoch", type=int, choices=[0, 1])
    p.add_argument("--out")


def config_from_args(args):
    keys = [f for f in ExperimentConfig.__dataclass_fields__]
    overrides = {k: getattr(args, k, None) for k in keys}
    if overrides.get("lipschitz_every_epoch") is not None:
        overrides["lipschitz_every_epoch"] = bool(overrides["lipschitz_every_epoch"])
    if args.config:
        return load_config(args.config, **overrides)
    return ExperimentConfig().replace(**overrides)


def cmd_train(args):
    cfg = config_from_args(args)
    summary = run_experiment(cfg)
    short = {k: summary[k] for k in ("final_test_acc", "final_lipschitz", "diverged", "aborted", "epochs_completed")}
    print(json.dumps(short))
    return 0


def cmd_grad_check(args):
    cfg = config_from_args(args)
    cfg.validate()
    params = init_weights(mlp_specs(cfg.widths, cfg.activation), cfg.seed, cfg.bias)
    loss = make_loss(cfg.loss)
    rng = np.random.default_rng(cfg.seed)
    if args.random_inputs:
        X = rng.uniform(0.0, 1.0, size=(args.samples, cfg.widths[0]))
        labels = rng.integers(0, cfg.widths[-1], size=args.samples)
    else:
        train_set, _ = load_data(cfg)
        X, labels = train_set.inputs[:args.samples], train_set.labels[:args.samples]
    Y = one_hot(labels, cfg.widths[-1])
    nudge = cfg.nudge()
    report = run_inference(params, X, Y, nudge, loss)
    result = {"diverged": report.diverged, "iterations": report.iterations, "residual": report.residual}
    if not report.diverged:
        est = weight_gradient(report, nudge, params)
        bp = backprop_oracle(params, X, Y, loss)
        result["cosine"] = cosine_similarity(est, bp)
        result["angle_deg"] = grad_angle(est, bp)
    if args.fd:
        fd = finite_difference_oracle(params, X, Y, loss)
        bp = backprop_oracle(params, X, Y, loss)
        result["fd_rel_error"] = [float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300)) for a, b in zip(bp, fd)]
    print(json.dumps(result, default=float))
    return 1 if report.diverged else 0


def cmd_theory_check(args):
    report = run_theory_checks(seed=args.seed, n_instances=args.instances, out=args.out)
    for key, val in report.items():
        if isinstance(val, dict) and "passed" in val:
            print(f"{key}: {'pass' if val['passed'] else 'FAIL'}")
    print(f"prop1 alpha direction: {report['prop1_alpha_direction']}")
    return 0 if report["passed"] else 1


def cmd_lipschitz(args):
    params = load_checkpoint(args.checkpoint)
    print(repr(lipschitz_estimate(params, iters=args.iters, seed=args.seed)))
    return 0


def cmd_infer(args):
    cfg = config_from_args(args)
    params = load_checkpoint(args.checkpoint)
    cfg = cfg.replace(arch="-".join(str(w) for w in params.widths))
    cfg.validate()
    _, eval_set = load_data(cfg)
    X, labels = eval_set.inputs[:args.samples], eval_set.labels[:args.samples]
    report = run_inference(params, X, one_hot(labels, params.widths[-1]), cfg.nudge(), make_loss(cfg.loss))
    pred = np.argmax(forward(params, X)[-1], axis=-1)
    print(json.dumps({"diverged": report.diverged, "iterations": report.iterations,
                      "residual": report.residual, "max_state_norm": report.max_state_norm,
                      "accuracy": float(np.mean(pred == labels))}))
    return 1 if report.diverged else 0


def cmd_synth_data(args):
    ds = synth_blobs(args.classes, args.dim, args.n, args.sep, args.seed)
    table = np.hstack([ds.inputs, ds.labels[:, None]])
    header = ",".join([f"x{i}" for i in range(args.dim)] + ["label"])
    fmt = ["%.17g"] * args.dim + ["%d"]
    np.savetxt(args.out, table, delimiter=",", header=header, comments="", fmt=fmt)
    print(f"wrote {len(ds)} samples to {args.out}")
    return 0


def cmd_mnist_sample(args):
    out = args.out or os.environ.get("DUALPROP_DATA")
    if not out:
        print("need --out or DUALPROP_DATA", file=sys.stderr)
        return 2
    export_mlxtend_subset(out)
    print(f"wrote IDX training files to {out}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="dualprop", description="Dual propagation experiments.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a network and write metrics.csv, summary.json and a checkpoint")
    _add_run_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("grad-check", help="compare a dyadic gradient estimate with backprop")
    _add_run_flags(p)
    p.add_argument("--samples", type=int, default=16)
    p.add_argument("--random-inputs", action="store_true", help="use uniform random inputs instead of --data")
    p.add_argument("--fd", action="store_true", help="also check backprop against finite differences")
    p.set_defaults(func=cmd_grad_check)

    p = sub.add_parser("theory-check", help="run the proposition, fixed-point and Bregman suites")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--instances", type=int, default=100)
    p.add_argument("--out", help="write the JSON report here")
    p.set_defaults(func=cmd_theory_check)

    p = sub.add_parser("lipschitz", help="spectral norm of the weight product of a checkpoint")
    p.add_argument("checkpoint")
    p.add_argument("--iters", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_lipschitz)

    p = sub.add_parser("infer", help="run inference with a saved checkpoint and report convergence")
    _add_run_flags(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--samples", type=int, default=100)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("synth-data", help="write Gaussian blobs as CSV")
    p.add_argument("--classes", type=int, default=3)
    p.add_argument("--dim", type=int, default=20)
    p.add_argument("--n", type=int, default=100, help="samples per class")
    p.add_argument("--sep", type=float, default=4.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="blobs.csv")
    p.set_defaults(func=cmd_synth_data)

    p = sub.add_parser("mnist-sample", help="write the 5000-image MNIST sample shipped with mlxtend as IDX files")
    p.add_argument("--out")
    p.set_defaults(func=cmd_mnist_sample)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
