"""Experiment configuration, dataset plumbing and metric files."""

from dataclasses import asdict, dataclass, fields
import csv
import json
import logging
import math
import os

import numpy as np

from .analysis import (QuadraticPotential, QuadraticRelaxationInstance, bregman_gap, check_prop1, check_prop2,
                       constant_step_pairs, lipschitz_estimate, random_quadratic_instance,
                       random_trilevel_instance, scalar_trilevel, trilevel_fixed_point_check)
from .data import load_mnist_dir, split_holdout, synth_blobs
from .errors import AbortedDiverged
from .inference import NudgeConfig
from .learning import accuracy, make_optimizer, train
from .losses import make_loss
from .model import init_weights, mlp_specs, save_checkpoint

log = logging.getLogger(__name__)

DATA_ENV = "DUALPROP_DATA"
VALIDATION_FRACTION = 0.1


@dataclass
class ExperimentConfig:
    """Everything one training run needs.

    The file format is one ``key = value`` per line with ``#`` comments; keys
    are the field names below. ``data`` is ``mnist:<dir>`` (an empty dir means
    ``$DUALPROP_DATA``) or ``blobs:classes=3,dim=20,n=100,sep=4``.
    ``subset = 0`` uses every training sample.
    """

    scheme: str = "dpt"
    alpha: float = 0.5
    beta: float = 0.5
    schedule: str = "sweep"
    arch: str = "784-512-512-10"
    activation: str = "relu"
    bias: str = "off"
    loss: str = "ls"
    opt: str = "adam"
    lr: float = 0.001
    momentum: float = 0.9
    weight_decay: float = 0.0
    epochs: int = 1
    batch_size: int = 100
    seed: int = 0
    data: str = "mnist:"
    subset: int = 0
    grad_angle_every: int = 0
    lipschitz_every_epoch: bool = True
    out: str = "runs/default"

    @property
    def widths(self):
        return [int(w) for w in self.arch.split("-")]

    def nudge(self):
        return NudgeConfig(alpha=self.alpha, beta=self.beta, scheme=self.scheme, schedule=self.schedule)

    def validate(self):
        widths = self.widths
        if len(widths) < 2 or min(widths) < 1:
            raise ValueError(f"bad architecture {self.arch!r}")
        if self.epochs < 0 or self.batch_size < 1 or self.subset < 0:
            raise ValueError("epochs and subset must be >= 0 and batch_size >= 1")
        self.nudge().validate(len(widths) - 1, make_loss(self.loss))
        return self

    def replace(self, **overrides):
        values = asdict(self)
        values.update({k: v for k, v in overrides.items() if v is not None})
        return ExperimentConfig(**values)

    def to_text(self):
        return "".join(f"{k} = {v}\n" for k, v in asdict(self).items())


def _coerce(kind, text):
    if kind is bool:
        low = text.strip().lower()
        if low not in ("1", "0", "true", "false", "yes", "no"):
            raise ValueError(f"not a boolean: {text!r}")
        return low in ("1", "true", "yes")
    return kind(text)


def parse_config_text(text):
    """Parse ``key = value`` lines into typed overrides for :class:`ExperimentConfig`."""
    types = {f.name: f.type for f in fields(ExperimentConfig)}
    values = {}
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip().replace("-", "_")
        if not sep or key not in types:
            raise ValueError(f"config line {n}: cannot parse {raw!r}")
        values[key] = _coerce(types[key], value.strip())
    return values


def load_config(path, **overrides):
    with open(path) as fh:
        values = parse_config_text(fh.read())
    return ExperimentConfig(**values).replace(**overrides)


# -- datasets ----------------------------------------------------------------

def parse_blob_spec(spec):
    opts = {"classes": 3, "dim": 20, "n": 100, "sep": 4.0}
    for item in filter(None, spec.split(",")):
        key, _, value = item.partition("=")
        if key not in opts:
            raise ValueError(f"unknown blobs option {key!r}")
        opts[key] = type(opts[key])(value)
    return opts


def resolve_data_dir(path):
    path = path or os.environ.get(DATA_ENV)
    if not path:
        raise ValueError(f"no MNIST directory given and {DATA_ENV} is unset")
    return path


def load_data(cfg):
    """Return ``(train, evaluation)`` datasets for a config.

    The training file is optionally cut to a seed-shuffled subset, then 10%
    of it is held out. The held-out part is the evaluation set unless the
    directory also has a separate test file.
    """
    source, _, arg = cfg.data.partition(":")
    test = None
    if source == "mnist":
        data, test = load_mnist_dir(resolve_data_dir(arg))
    elif source == "blobs":
        o = parse_blob_spec(arg)
        data = synth_blobs(o["classes"], o["dim"], o["n"], o["sep"], cfg.seed)
    else:
        raise ValueError(f"unknown data source {cfg.data!r}")
    if cfg.subset and cfg.subset < len(data):
        order = np.random.default_rng(cfg.seed).permutation(len(data))
        data = data.subset(np.sort(order[:cfg.subset]))
    train_set, held_out = split_holdout(data, VALIDATION_FRACTION, cfg.seed)
    return train_set, (test if test is not None else held_out)


# -- metrics -----------------------------------------------------------------

def metric_columns(depth):
    cols = ["epoch", "batch", "train_loss", "test_acc", "lipschitz", "diverged"]
    cols += [f"angle_layer_{i}" for i in range(depth)]
    cols += [f"l2diff_layer_{i}" for i in range(depth)]
    return cols


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    v = float(v)
    return "nan" if math.isnan(v) else repr(v)


def metric_row(rec, depth):
    angles = rec.get("angles") or [float("nan")] * depth
    l2 = rec.get("l2diff") or [float("nan")] * depth
    vals = [rec["epoch"], rec["batch"], rec["train_loss"], rec["test_acc"], rec["lipschitz"], rec["diverged"]]
    return [_fmt(v) for v in vals + list(angles) + list(l2)]


def read_metrics(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def run_experiment(cfg, out_dir=None):
    """Train per ``cfg`` and write ``metrics.csv``, ``summary.json`` and ``checkpoint.bin``.

    Rows are written as batches finish, so a run that aborts on divergence
    still leaves a complete header and every finished row.
    """
    cfg.validate()
    out_dir = out_dir or cfg.out
    os.makedirs(out_dir, exist_ok=True)
    train_set, eval_set = load_data(cfg)
    widths = cfg.widths
    if widths[0] != train_set.inputs.shape[1]:
        raise ValueError(f"architecture expects input width {widths[0]}, data has {train_set.inputs.shape[1]}")
    if widths[-1] < train_set.n_classes:
        raise ValueError(f"architecture has {widths[-1]} outputs for {train_set.n_classes} classes")

    params = init_weights(mlp_specs(widths, cfg.activation), cfg.seed, cfg.bias)
    nudge = cfg.nudge()
    loss = make_loss(cfg.loss)
    opt = make_optimizer(cfg.opt, cfg.lr, cfg.momentum, cfg.weight_decay)
    depth = params.depth

    with open(os.path.join(out_dir, "config.txt"), "w") as fh:
        fh.write(cfg.to_text())

    aborted = False
    metrics_path = os.path.join(out_dir, "metrics.csv")
    with open(metrics_path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(metric_columns(depth))
        fh.flush()

        def on_batch(rec):
            writer.writerow(metric_row(rec, depth))
            fh.flush()

        try:
            history = train(train_set, params, nudge, loss, opt, cfg.epochs, cfg.batch_size, cfg.seed,
                            test=eval_set, grad_angle_every=cfg.grad_angle_every,
                            lipschitz_every_epoch=cfg.lipschitz_every_epoch, on_batch=on_batch)
        except AbortedDiverged as exc:
            log.warning("%s", exc)
            history = exc.history
            aborted = True

    save_checkpoint(params, os.path.join(out_dir, "checkpoint.bin"))
    n_div = sum(1 for rec in history.batches if rec["diverged"])
    summary = {
        "final_test_acc": accuracy(params, eval_set.inputs, eval_set.labels) if len(eval_set) else float("nan"),
        "final_train_loss": history.batches[-1]["train_loss"] if history.batches else float("nan"),
        "final_lipschitz": lipschitz_estimate(params),
        "diverged": bool(aborted or n_div > 0),
        "aborted": aborted,
        "diverged_batches": n_div,
        "batches": len(history.batches),
        "epochs_completed": len(history.epochs),
        "epochs": history.epochs,
        "config": asdict(cfg),
    }
    with open(os.path.join(out_dir, "summary.json"), "w") as fh:
        json.dump(summary, fh, indent=2, default=_json_float)
    return summary


def _json_float(o):
    if isinstance(o, (np.floating, np.integer, np.bool_)):
        return o.item()
    raise TypeError(f"cannot serialise {type(o).__name__}")


# -- theory checks -----------------------------------------------------------

def anchor_instance():
    """One-dimensional instance ``l = s^2/2``, ``E = (s-1)^2/2`` (constant dropped)."""
    return QuadraticRelaxationInstance([[1.0]], [0.0], [[1.0]], [-1.0])


def run_theory_checks(seed=0, n_instances=100, out=None):
    """Run the proposition, trilevel and Bregman suites and return a pass/fail report."""
    rng = np.random.default_rng(seed)
    quad = [random_quadratic_instance(rng, int(rng.integers(1, 7))) for _ in range(n_instances)]
    alphas = [0.0, 0.25, 0.5, 0.75, 1.0]
    betas = [0.05, 0.1, 0.25, 0.5, 0.9]

    p1 = check_prop1([anchor_instance()] + quad, alphas, betas)
    p2 = check_prop2([anchor_instance()] + quad, constant_step_pairs(betas, 0.05))

    tri = []
    for i in range(n_instances // 2):
        if i % 2:
            inst = random_trilevel_instance(rng, int(rng.integers(1, 3)), int(rng.integers(1, 3)),
                                            w_scale=float(rng.uniform(0.2, 3.0)))
        else:
            inst = scalar_trilevel(h_l=float(rng.uniform(0, 1)), h_F=float(rng.uniform(1, 2)),
                                   h_G=float(rng.uniform(0.5, 2)), W=float(rng.uniform(-3, 3)))
        a = float(rng.choice([0.0, 1.0]))
        res = trilevel_fixed_point_check(inst, a, a, iters=2000, beta=0.5)
        half = trilevel_fixed_point_check(inst, a, 0.5, iters=2, beta=0.5)
        if abs(res["spectral_factor"] - 1.0) > 1e-3:
            tri.append({"instance_id": i, "alpha": a, "spectral_factor": res["spectral_factor"],
                        "diverged": res["diverged"], "predicted_diverged": res["spectral_factor"] > 1.0,
                        "half_residual": half["fixed_point_residual"]})
    tri_ok = all(t["diverged"] == t["predicted_diverged"] for t in tri)
    half_ok = all(t["half_residual"] <= 1e-12 for t in tri)

    G = QuadraticPotential(np.eye(4))
    gaps_half = [abs(bregman_gap(G, *rng.standard_normal((2, 4)), 0.5)) for _ in range(200)]
    bregman_ok = max(gaps_half) <= 1e-12

    report = {
        "seed": seed,
        "prop1": {"passed": p1.passed and p1.details["lemma_violations"] == 0, "violations": p1.violations,
                  "max_violation": p1.max_violation, **p1.details},
        "prop1_alpha_direction": p1.details["alpha_direction"],
        "prop2": {"passed": p2.passed, "violations": p2.violations, "max_violation": p2.max_violation},
        "trilevel": {"passed": tri_ok, "instances": len(tri), "results": tri},
        "trilevel_half_residual": {"passed": half_ok,
                                   "max_residual": max((t["half_residual"] for t in tri), default=0.0)},
        "bregman": {"passed": bregman_ok, "max_gap_at_half": max(gaps_half)},
    }
    report["passed"] = all(v["passed"] for v in report.values() if isinstance(v, dict) and "passed" in v)
    if out:
        with open(out, "w") as fh:
            json.dump(report, fh, indent=2, default=_json_float)
    return report

