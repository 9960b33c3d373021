"""Command-line entry point: ``gmvae {train,eval,generate,density,gmm}``.

Exit status is 0 on success, 1 for configuration or input errors (including
usage errors) and 2 when training aborts on a numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from importlib import resources
from pathlib import Path

import numpy as np

from . import data, evaluation, gmm, nn, training
from . import model as gm
from .errors import ConfigError, IdxFormatError, NumericalError

log = logging.getLogger("gmvae")

PRESETS = ("synthetic-k5", "mnist-k16")
FINAL_EVAL_TAG = 0
DEFAULT_BOUNDS = (-3.0, 3.0, -3.0, 3.0)

ENV_HELP = """environment:
  GMVAE_DATA_DIR  directory holding the uncompressed MNIST IDX files
                  (train-images-idx3-ubyte, train-labels-idx1-ubyte,
                  t10k-images-idx3-ubyte, t10k-labels-idx1-ubyte); default ./data

exit status: 0 ok, 1 configuration or usage error, 2 numerical failure during training"""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def build_parser():
    p = _Parser(
        prog="gmvae",
        description="Train and inspect Gaussian-mixture VAEs.",
        epilog=ENV_HELP,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = p.add_subparsers(dest="command", metavar="{train,eval,generate,density,gmm}", parser_class=_Parser)
    sub.required = True

    def common(sp, checkpoint=False):
        sp.add_argument("--seed", type=int, help="random seed (default: from the config)")
        sp.add_argument("--out", type=Path, help="output directory")
        if checkpoint:
            sp.add_argument("--checkpoint", type=Path, required=True, help="checkpoint.bin written by train")

    t = sub.add_parser("train", help="train a model and write metrics, summary, checkpoint and manifest")
    t.add_argument("--config", required=True, help=f"JSON config file or preset name ({', '.join(PRESETS)})")
    common(t)
    t.add_argument("--dataset", choices=("synthetic", "mnist"), help="override the config dataset")
    t.add_argument("--k", type=int, help="number of mixture components")
    t.add_argument("--lambda", dest="lam", type=float, help="z-prior threshold in nats")
    t.add_argument("--mc-samples", type=int, help="Monte Carlo draws M for the ELBO expectations")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="cluster a dataset and write the accuracy report")
    common(e, checkpoint=True)
    e.add_argument("--dataset", choices=("synthetic", "mnist"), help="default: the training dataset")
    e.add_argument("--mc-samples", type=int, help="posterior draws per point (0 = use means)")
    e.set_defaults(func=cmd_eval)

    g = sub.add_parser("generate", help="write a grid of generated samples")
    common(g, checkpoint=True)
    g.add_argument("--mode", choices=("vary-z", "vary-w"), default="vary-z")
    g.add_argument("--component", type=int, default=0, help="component for vary-w")
    g.set_defaults(func=cmd_generate)

    d = sub.add_parser("density", help="Monte Carlo density of a 2-D model on a grid")
    common(d, checkpoint=True)
    d.add_argument("--bounds", type=float, nargs=4, default=DEFAULT_BOUNDS, metavar=("XMIN", "XMAX", "YMIN", "YMAX"))
    d.add_argument("--resolution", type=int, default=100)
    d.add_argument("--mc-samples", type=int, default=10_000, help="prior draws S")
    d.set_defaults(func=cmd_density)

    m = sub.add_parser("gmm", help="fit a diagonal GMM baseline by EM")
    m.add_argument("--config", help="config whose dataset settings are used (default: synthetic defaults)")
    common(m)
    m.add_argument("--dataset", choices=("synthetic", "mnist"))
    m.add_argument("--k", type=int, help="components (default: the config K)")
    m.add_argument("--bounds", type=float, nargs=4, default=DEFAULT_BOUNDS, metavar=("XMIN", "XMAX", "YMIN", "YMAX"))
    m.add_argument("--resolution", type=int, default=100)
    m.add_argument("--max-iters", type=int, default=500)
    m.set_defaults(func=cmd_gmm)
    return p


# config and data


def read_config(name_or_path) -> dict:
    if name_or_path in PRESETS:
        return json.loads(resources.files("gmvae").joinpath(f"presets/{name_or_path}.json").read_text())
    path = Path(name_or_path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    return raw


def resolve_config(raw: dict, args) -> training.TrainConfig:
    d = dict(raw)
    for flag, key in (("dataset", "dataset"), ("k", "k"), ("lam", "lam"), ("mc_samples", "m"), ("seed", "seed")):
        val = getattr(args, flag, None)
        if val is not None:
            d[key] = val
    if d.get("dataset", "synthetic") == "synthetic" and "lam" not in d:
        raise ConfigError("synthetic runs need an explicit lambda ('lam' in the config or --lambda)")
    return training.TrainConfig.from_dict(d)


def architecture(cfg: training.TrainConfig) -> gm.Architecture:
    return gm.Architecture.synthetic(cfg.k) if cfg.dataset == "synthetic" else gm.Architecture.mnist(cfg.k)


def load_datasets(cfg: training.TrainConfig):
    """Training set and evaluation set for a config."""
    if cfg.dataset == "synthetic":
        ds = data.gen_arcs(cfg.n_points, 5, cfg.noise_sd, cfg.data_seed)
        return ds, ds
    train = data.load_mnist("train")
    rng = np.random.Generator(np.random.PCG64(cfg.data_seed))
    idx = np.sort(rng.choice(train.n, size=min(cfg.train_subset, train.n), replace=False))
    train = data.binarize(train.subset(idx, "mnist-train-subset"), cfg.binarize, cfg.data_seed)
    test = data.binarize(data.load_mnist("test"), cfg.binarize, cfg.data_seed)
    return train, test


def run_dir(cfg: training.TrainConfig, out) -> Path:
    return Path(out or "runs") / f"{cfg.hash()[:12]}-s{cfg.seed}"


def write_json(path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_checkpoint(path: Path):
    """Model and training config from a checkpoint and its model.json sidecar."""
    if not path.is_file():
        raise ConfigError(f"checkpoint not found: {path}")
    sidecar = path.with_name("model.json")
    if not sidecar.is_file():
        raise ConfigError(f"model description {sidecar} missing next to the checkpoint")
    meta = json.loads(sidecar.read_text())
    model = gm.GmvaeModel(gm.Architecture.from_dict(meta["architecture"]), nn.load_params(path))
    expected = {k for net in model.nets for layer in net.layers() for k in (layer.weight_name, layer.bias_name)}
    if set(model.params) != expected:
        raise ConfigError(f"{path}: parameters do not match the architecture in {sidecar}")
    return model, training.TrainConfig.from_dict(meta["config"])


def _log_to(path: Path):
    handler = logging.FileHandler(path, mode="w")
    handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(message)s"))
    logging.getLogger().addHandler(handler)
    logging.getLogger().setLevel(logging.INFO)
    return handler


# commands


def cmd_train(args) -> int:
    cfg = resolve_config(read_config(args.config), args)
    train_ds, eval_ds = load_datasets(cfg)
    arch = architecture(cfg)
    out = run_dir(cfg, args.out)
    out.mkdir(parents=True, exist_ok=True)
    handler = _log_to(out / "run.log")
    try:
        log.info("run started; config hash %s", cfg.hash())
        model = gm.GmvaeModel.create(arch, cfg.seed)
        status = 0
        try:
            _, metrics = training.train(
                model, train_ds, cfg, eval_dataset=eval_ds,
                progress=lambda r: log.info("epoch %d elbo %.4f z_kl %.4f accuracy %s", r.epoch, r.total, r.z_kl, r.accuracy),
            )
        except training.TrainingAborted as exc:
            metrics = exc.metrics
            status = 2
            print(f"gmvae: training aborted: {exc}", file=sys.stderr)
        final = None
        if status == 0 and eval_ds.labels is not None:
            final = training.evaluate(model, eval_ds, cfg.eval_m, cfg.seed, (FINAL_EVAL_TAG,)).accuracy
        outputs = ["metrics.csv", "summary.json", "checkpoint.bin", "model.json", "run.log"]
        training.write_metrics_csv(out / "metrics.csv", metrics)
        summary = training.summarize(metrics, cfg, final)
        summary["status"] = "ok" if status == 0 else "aborted"
        write_json(out / "summary.json", summary)
        nn.save_params(out / "checkpoint.bin", model.params)
        write_json(out / "model.json", {"architecture": arch.to_dict(), "config": cfg.to_dict(), "config_hash": cfg.hash()})
        write_json(
            out / "manifest.json",
            {
                "config": cfg.to_dict(),
                "config_hash": cfg.hash(),
                "seed": cfg.seed,
                "outputs": outputs + ["manifest.json"],
                "timestamps": "run.log",
            },
        )
        log.info("run finished with status %d", status)
    finally:
        logging.getLogger().removeHandler(handler)
        handler.close()
    print(out)
    return status


def cmd_eval(args) -> int:
    model, cfg = load_checkpoint(args.checkpoint)
    if args.dataset is not None:
        cfg = training.TrainConfig.from_dict({**cfg.to_dict(), "dataset": args.dataset})
    _, eval_ds = load_datasets(cfg)
    if eval_ds.labels is None:
        raise ConfigError("evaluation needs a labelled dataset")
    seed = cfg.seed if args.seed is None else args.seed
    m = cfg.eval_m if args.mc_samples is None else args.mc_samples
    report = training.evaluate(model, eval_ds, m, seed, (FINAL_EVAL_TAG,))
    out = Path(args.out or args.checkpoint.parent)
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"eval-{cfg.dataset}-s{seed}.json"
    write_json(path, {"dataset": cfg.dataset, "seed": seed, "mc_samples": m, **report.to_dict()})
    print(f"accuracy {report.accuracy:.4f} -> {path}")
    return 0


def cmd_generate(args) -> int:
    model, cfg = load_checkpoint(args.checkpoint)
    seed = cfg.seed if args.seed is None else args.seed
    rng = np.random.Generator(np.random.PCG64(seed))
    out = Path(args.out or args.checkpoint.parent)
    out.mkdir(parents=True, exist_ok=True)
    if not 0 <= args.component < model.k:
        raise ConfigError(f"component {args.component} out of range for K={model.k}")
    if math.isqrt(model.arch.input_dim) ** 2 == model.arch.input_dim and model.arch.input_dim > 1:
        img = evaluation.sample_grid(model, args.mode, rng, component=args.component)
        path = out / f"samples-{args.mode}-s{seed}.pgm"
        evaluation.write_pgm(path, img)
    else:
        # non-image data: write the generated points themselves
        path = out / f"samples-{args.mode}-s{seed}.csv"
        with open(path, "w") as fh:
            fh.write(",".join([f"y{i}" for i in range(model.arch.input_dim)] + ["component"]) + "\n")
            comps = range(model.k) if args.mode == "vary-z" else [args.component]
            for k in comps:
                w = np.zeros(model.n_w) if args.mode == "vary-z" else rng.standard_normal((10, model.n_w))
                pts = gm.generate(model, k, w, noise=rng.standard_normal((10, model.n_x)))
                for row in pts:
                    fh.write(",".join(repr(float(v)) for v in row) + f",{k}\n")
    print(path)
    return 0


def cmd_density(args) -> int:
    model, cfg = load_checkpoint(args.checkpoint)
    seed = cfg.seed if args.seed is None else args.seed
    if args.resolution < 1 or args.mc_samples < 1:
        raise ConfigError("resolution and mc-samples must be positive")
    grid = evaluation.density_grid(model, tuple(args.bounds), args.resolution, args.mc_samples, np.random.Generator(np.random.PCG64(seed)))
    out = Path(args.out or args.checkpoint.parent)
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"density-s{seed}.csv"
    evaluation.write_density_csv(path, grid, tuple(args.bounds))
    print(path)
    return 0


def cmd_gmm(args) -> int:
    raw = read_config(args.config) if args.config else {"dataset": "synthetic", "lam": 0.0}
    cfg = resolve_config({**raw, "lam": raw.get("lam", 0.0)}, args)
    ds, _ = load_datasets(cfg)
    res = gmm.em_fit(ds.observations, cfg.k, max_iters=args.max_iters, seed=cfg.seed)
    out = Path(args.out or Path("runs") / f"gmm-{cfg.dataset}-k{cfg.k}-s{cfg.seed}")
    out.mkdir(parents=True, exist_ok=True)
    res.params.save(out / "gmm.json")
    write_json(out / "gmm_trace.json", {"log_likelihood": res.trace, "converged": res.converged, "reseeds": res.reseeds})
    if ds.d == 2:
        grid = evaluation.mixture_density_grid(
            res.params.means, res.params.variances, np.log(res.params.weights), tuple(args.bounds), args.resolution
        )
        evaluation.write_density_csv(out / "gmm_density.csv", grid, tuple(args.bounds))
    print(out)
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except NumericalError as exc:
        print(f"gmvae: numerical failure: {exc}", file=sys.stderr)
        return 2
    except (ConfigError, IdxFormatError, OSError, ValueError) as exc:
        print(f"gmvae: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
