"""Command-line driver: dataset generation, training, sampling and evaluation.

Exit codes: 0 success, 1 runtime failure, 2 argument error.
"""

from __future__ import annotations

import argparse
import csv
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import plotting
from .autodiff import checkpoint
from .config import Config
from .data import SpriteSpec, gen_ring_gaussians, gen_sprites, load_dataset, mode_coverage, ring_centers, write_ppm
from .diversity import EmbeddingSpec, birthday_estimate, calibrate_threshold, dump_pairs, write_report
from .gradsuite import run_suite
from .latent import angle_histogram
from .models import build_attribute_classifier
from .trainer import attribute_accuracy, load_system, pretrain_attribute_classifier, train

log = logging.getLogger("ucgan")

RING_FILE = "points.csv"


class ArgError(ValueError):
    """Bad user input detected after parsing; maps to exit code 2."""


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    return Path(path)


def resolve_config(args) -> Config:
    cfg = Config.load(args.config) if args.config else Config()
    cfg = cfg.override("train", seed=args.seed, batch_size=getattr(args, "batch", None))
    if getattr(args, "threshold", None) is not None:
        cfg = cfg.override("diversity", threshold=args.threshold)
    return cfg


def _out_dir(args, cfg):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg.save(out / "config.json")
    return out


def _require(args, *names):
    for n in names:
        if getattr(args, n, None) is None:
            raise ArgError(f"--{n} is required for {args.command}")


def sprite_spec(cfg: Config) -> SpriteSpec:
    d = cfg.data
    return SpriteSpec(resolution=cfg.model.resolution, n_sizes=d.n_sizes, jitter=d.jitter, n_backgrounds=d.n_backgrounds)


def load_training_data(cfg: Config, data_dir):
    """(inputs, labels) arrays for the configured data kind."""
    data_dir = Path(data_dir)
    if cfg.data.kind == "ring":
        path = data_dir / RING_FILE
        if not path.exists():
            raise FileNotFoundError(f"no ring data at {path}")
        arr = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        return arr[:, :2].astype(np.float32), None
    ds = load_dataset(data_dir)
    if ds.images.shape[1] != cfg.model.resolution:
        raise ArgError(f"dataset resolution {ds.images.shape[1]} != model resolution {cfg.model.resolution}")
    return ds.images, ds.labels


def parse_attrs(text, attributes, n, rng):
    """Label matrix from 'name=value,...'; unnamed attributes are drawn at random."""
    given = {}
    if text:
        for part in text.split(","):
            if "=" not in part:
                raise ArgError(f"malformed attribute assignment {part!r}")
            k, v = (s.strip() for s in part.split("=", 1))
            try:
                given[k] = int(v)
            except ValueError:
                raise ArgError(f"attribute {k} needs an integer value") from None
    names = {a.name: a for a in attributes}
    unknown = set(given) - set(names)
    if unknown:
        raise ArgError(f"unknown attributes {sorted(unknown)}; known: {sorted(names)}")
    cols = []
    for a in attributes:
        if a.name in given:
            if not 0 <= given[a.name] < a.n:
                raise ArgError(f"{a.name}={given[a.name]} outside [0, {a.n})")
            cols.append(np.full(n, given[a.name]))
        else:
            cols.append(rng.integers(a.n, size=n))
    return np.stack(cols, axis=1) if cols else np.zeros((n, 0), dtype=np.int64)


# ------------------------------------------------------------------ commands


def cmd_gen_data(args, cfg):
    out = _out_dir(args, cfg)
    n = args.n if args.n is not None else cfg.data.n
    if cfg.data.kind == "ring":
        d = cfg.data
        pts, modes = gen_ring_gaussians(d.n_modes, d.radius, d.sigma, n, cfg.train.seed)
        _write_csv(out / RING_FILE, ("x", "y", "mode"), [(f"{x:.9g}", f"{y:.9g}", m) for (x, y), m in zip(pts, modes)])
        print(f"wrote {n} ring points to {out / RING_FILE}")
    else:
        m = gen_sprites(sprite_spec(cfg), n, cfg.train.seed, out)
        print(f"wrote {m.count} sprites ({m.template_count} templates) to {out}")
    return 0


def cmd_train_attr(args, cfg):
    _require(args, "data")
    if cfg.model.mode != "image":
        raise ArgError("train-attr needs an image-mode config")
    out = _out_dir(args, cfg)
    ds = load_dataset(args.data)
    train_ds, held = ds.split(0.2, seed=cfg.train.seed)
    res = pretrain_attribute_classifier(train_ds.images, train_ds.labels, cfg)
    checkpoint.save(out / "classifier.ucg", res.classifier.state_dict())
    n_terms = len(res.history[0]["terms"]) if res.history else 0
    _write_csv(
        out / "attr_metrics.csv",
        ["step", "loss", "penalty"] + [f"term_{i}" for i in range(n_terms)],
        [[h["step"], f"{h['loss']:.9g}", f"{h['penalty']:.9g}"] + [f"{v:.9g}" for v in h["terms"]] for h in res.history],
    )
    plotting.plot_metrics(out / "attr_metrics.csv", out / "attr_metrics.png", columns=("loss", "penalty"))
    acc = attribute_accuracy(res.classifier, held.images, held.labels, cfg.attribute_spec())
    _write_csv(out / "attr_accuracy.csv", ("attribute", "accuracy"), [(k, f"{v:.6f}") for k, v in acc.items()])
    for k, v in acc.items():
        print(f"{k}: held-out accuracy {v:.4f}")
    return 0


def load_classifier(cfg, path):
    A = build_attribute_classifier(cfg.model_config())
    A.load_state_dict(checkpoint.load(path))
    return A


def cmd_train_gan(args, cfg):
    _require(args, "data")
    out = _out_dir(args, cfg)
    x, labels = load_training_data(cfg, args.data)
    classifier = load_classifier(cfg, args.checkpoint) if args.checkpoint else None
    res = train(cfg, x, labels, out_dir=out, classifier=classifier, progress=100)
    plotting.plot_metrics(res.metrics_path, out / "metrics.png")
    if cfg.data.kind == "ring" and cfg.model.mode == "vector":
        d = cfg.data
        samples = res.system.sample(10000, rng=np.random.default_rng([cfg.train.seed, 5]))
        covered, hits = mode_coverage(samples, ring_centers(d.n_modes, d.radius), d.sigma)
        rows = [(i, int(h), int(h >= 0.01 * len(samples))) for i, h in enumerate(hits)]
        _write_csv(out / "coverage.csv", ("mode", "hits", "covered"), rows)
        plotting.plot_coverage(out / "coverage.csv", out / "coverage.png")
        print(f"modes covered: {covered}/{d.n_modes}")
    print(f"final checkpoint {res.checkpoint_path}")
    return 0


def cmd_sample(args, cfg):
    _require(args, "checkpoint")
    out = _out_dir(args, cfg)
    n = args.n if args.n is not None else 16
    if n < 1:
        raise ArgError("--n must be positive")
    system = load_system(cfg, args.checkpoint)
    rng = np.random.default_rng([cfg.train.seed, 6])
    labels = parse_attrs(args.attrs, system.attributes, n, rng)
    samples = system.sample(n, labels=labels if system.attributes else None, rng=rng)
    if cfg.model.mode == "vector":
        _write_csv(out / "samples.csv", [f"x{i}" for i in range(samples.shape[1])],
                   [[f"{v:.9g}" for v in row] for row in samples])
        print(f"wrote {n} samples to {out / 'samples.csv'}")
        return 0
    for i, img in enumerate(samples):
        write_ppm(out / f"sample_{i:04d}.ppm", np.clip(img, 0, 1))
    print(f"wrote {n} images to {out}")
    return 0


def cmd_latent_hist(args, cfg):
    _require(args, "checkpoint", "data")
    if cfg.latent.kind != "unit-complex":
        raise ArgError("latent-hist needs a unit-complex latent")
    if args.bins < 1:
        raise ArgError("--bins must be positive")
    out = _out_dir(args, cfg)
    system = load_system(cfg, args.checkpoint)
    x, _ = load_training_data(cfg, args.data)
    codes = np.concatenate([system.encode(x[s : s + 512]) for s in range(0, len(x), 512)])
    edges, mass = angle_histogram(codes, args.bins)
    centers = 0.5 * (edges[:-1] + edges[1:])
    rows = [(f"{c:.9g}", f"{m:.9g}", f"{1 / args.bins:.9g}") for c, m in zip(centers, mass)]
    _write_csv(out / "latent_hist.csv", ("bin_center", "mass", "uniform"), rows)
    plotting.plot_latent_histogram(out / "latent_hist.csv", out / "latent_hist.png")
    p = mass[mass > 0]
    ent = float(-(p * np.log(p)).sum())
    print(f"entropy {ent:.4f} nats ({ent / math.log(args.bins):.4f} of maximum)")
    return 0


def cmd_eval_diversity(args, cfg):
    _require(args, "checkpoint")
    out = _out_dir(args, cfg)
    dv = cfg.diversity
    system = load_system(cfg, args.checkpoint)
    encoder = system.encode if dv.embedding == "encoder-bottleneck" else None
    embed = EmbeddingSpec(dv.embedding, encoder=encoder)
    tau = dv.threshold
    if tau is None:
        _require(args, "data")
        x, _ = load_training_data(cfg, args.data)
        pick = np.random.default_rng([cfg.train.seed, 7]).permutation(len(x))[: dv.calib_samples]
        tau = calibrate_threshold(embed(x[pick]), dv.calib_percentile)
    rng = np.random.default_rng([cfg.train.seed, 8])

    def sampler(n, r):
        return system.sample(n, rng=r)

    est = birthday_estimate(sampler, embed, tau, n0=dv.n0, trials=dv.trials, p_star=dv.p_star, top_k=dv.top_k,
                            n_cap=dv.n_cap, rng=rng)
    write_report(est, out / "diversity.json")
    _write_csv(out / "trials.csv", ("n", "duplicate_rate"), [(t.n, f"{t.duplicate_rate:.6f}") for t in est.trials])
    plotting.plot_trials(out / "trials.csv", out / "trials.png", dv.p_star)
    dump_pairs(est, out / "pairs")
    kind = "lower bound" if est.lower_bound else "estimate"
    print(f"threshold {tau:.6g}; final N {est.final_n}; support {kind} {est.estimate}")
    return 0


def cmd_grad_check(args, cfg):
    seeds = range(10) if args.all else [cfg.train.seed]
    report = run_suite(seeds=seeds)
    for name, err in report.worst().items():
        print(f"{'PASS' if err <= 1e-4 else 'FAIL'} {name} max_rel_error={err:.3e}")
    print(f"{len(report.results)} checks over {len(seeds)} seed(s) in {report.seconds:.1f}s")
    return 0 if report.passed else 1


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train-attr": cmd_train_attr,
    "train-gan": cmd_train_gan,
    "sample": cmd_sample,
    "latent-hist": cmd_latent_hist,
    "eval-diversity": cmd_eval_diversity,
    "grad-check": cmd_grad_check,
}


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file")
    common.add_argument("--seed", type=int, help="overrides train.seed")
    common.add_argument("--out", default="out", help="output directory")
    common.add_argument("--batch", type=int, help="overrides train.batch_size")

    parser = argparse.ArgumentParser(prog="ucgan", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, parents=[common])
        if name in ("train-attr", "train-gan", "latent-hist", "eval-diversity"):
            p.add_argument("--data", help="dataset directory")
        if name in ("train-gan", "sample", "latent-hist", "eval-diversity"):
            p.add_argument("--checkpoint", help="checkpoint file (classifier for train-gan)")
        if name in ("gen-data", "sample"):
            p.add_argument("--n", type=int, help="number of samples")
        if name == "sample":
            p.add_argument("--attrs", help="e.g. gender=1,ethnicity=2,age_bin=3")
        if name == "latent-hist":
            p.add_argument("--bins", type=int, default=36)
        if name == "eval-diversity":
            p.add_argument("--threshold", type=float, help="duplicate distance threshold")
        if name == "grad-check":
            p.add_argument("--all", action="store_true", help="run all ten seeds")
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = resolve_config(args)
        return COMMANDS[args.command](args, cfg)
    except ArgError as exc:
        print(f"ucgan {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:
        print(f"ucgan {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
