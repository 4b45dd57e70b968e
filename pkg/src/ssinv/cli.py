"""Command-line entry point: ``ssinv <command> ...``.

Exit codes: 0 success, 2 usage error, 3 I/O error, 4 numeric failure.
Options may also come from a ``--config`` file of ``key = value`` lines
(``#`` starts a comment); flags given on the command line win.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

from . import runner
from .classical import LR_ITERATIONS
from .corpus import BENCHMARK_IMAGES, STANDARD_IMAGES, standard_image
from .degrade import NoiseSpec
from .errors import NumericError, ParameterError, StateError
from .imageio import read_image, write_image
from .metrics import report
from .runner import RunManifest
from .trainer import PRECISIONS, TrainConfig

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_NUMERIC = 0, 2, 3, 4


class UsageError(ParameterError):
    pass


def float_list(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v.strip()]


def int_list(text: str) -> list[int]:
    return [int(v) for v in text.split(",") if v.strip()]


def parse_bool(text: str) -> bool:
    v = text.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise UsageError(f"not a boolean: {text!r}")


def read_config(path) -> dict[str, str]:
    """Parse ``key = value`` lines; blank lines and ``#`` comments are ignored."""
    out = {}
    for n, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{n}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


# -- argument groups ----------------------------------------------------------------

def add_noise(p):
    d = NoiseSpec()
    p.add_argument("--alpha", type=float, default=d.alpha, help="signal-dependent noise variance factor")
    p.add_argument("--sigma", type=float, default=d.sigma, help="signal-independent noise std")
    p.add_argument("--pepper", type=float, default=d.p, help="salt-and-pepper probability")
    p.add_argument("--bits", type=int, default=d.bits, help="quantization bit depth")
    p.add_argument("--noise-seed", type=int, default=0)


def add_psf(p):
    p.add_argument("--psf-sigma", type=float, default=1.0)
    p.add_argument("--psf-radius", type=int, default=8)


def add_train(p):
    d = TrainConfig()
    p.add_argument("--epochs", type=int, default=d.epochs)
    p.add_argument("--batches", dest="batches_per_epoch", type=int, default=d.batches_per_epoch)
    p.add_argument("--strategy", choices=("zero", "uniform_random", "interpolate"), default=d.strategy)
    p.add_argument("--d-start", type=float, default=d.d_start)
    p.add_argument("--d-end", type=float, default=d.d_end)
    p.add_argument("--l1", type=float, default=d.l1)
    p.add_argument("--l2", type=float, default=d.l2)
    p.add_argument("--lr", type=float, default=d.lr)
    p.add_argument("--lr-halvings", type=int, default=d.lr_halvings)
    p.add_argument("--noise-std", dest="noise_std0", type=float, default=d.noise_std0)
    p.add_argument("--gamma", type=float, default=d.gamma)
    p.add_argument("--depth", type=int, default=d.depth)
    p.add_argument("--base-channels", type=int, default=d.base_channels)
    p.add_argument("--boundary", choices=("circular", "reflect"), default=d.boundary)
    p.add_argument("--precision", choices=PRECISIONS, default=d.precision, help="network compute precision")


def noise_dict(a) -> dict:
    return NoiseSpec(a.alpha, a.sigma, a.pepper, a.bits, a.noise_seed).to_dict()


def kernel_dict(a) -> dict:
    return {"sigma": a.psf_sigma, "radius": a.psf_radius}


def train_dict(a, seed) -> dict:
    names = ("epochs", "batches_per_epoch", "strategy", "d_start", "d_end", "l1", "l2", "lr", "lr_halvings",
             "noise_std0", "gamma", "depth", "base_channels", "boundary", "precision")
    d = {n: getattr(a, n) for n in names}
    d.update(seed=seed, no_mask=getattr(a, "no_mask", False))
    return TrainConfig(**d).to_dict()


# -- commands -------------------------------------------------------------------------

def cmd_degrade(a):
    m = RunManifest("degrade", [a.input], a.output, noise_dict(a), kernel_dict(a),
                    {"boundary": "reflect"}, {"noise": a.noise_seed})
    runner.execute(m)


def cmd_train(a):
    m = RunManifest("train", [a.input], a.output, kernel=kernel_dict(a),
                    methods={"ssi": train_dict(a, a.seed), "loss_csv": a.loss_csv}, seeds={"train": a.seed})
    runner.execute(m)


def cmd_infer(a):
    if not Path(a.checkpoint).is_file():
        raise UsageError(f"checkpoint {a.checkpoint} not found")
    runner.execute(RunManifest("infer", [a.checkpoint, a.input], a.output))


def cmd_deconv(a):
    opts = {"iters": a.iters if a.iters is not None else {"lr": 10, "cp": 300, "cg": 200}[a.method]}
    if a.method != "lr":
        opts["lam"] = a.lam
    runner.execute(RunManifest("deconv", [a.input], a.output, kernel=kernel_dict(a), methods={a.method: opts}))


def cmd_spectrum(a):
    runner.execute(RunManifest("spectrum", [a.input], a.output))


def cmd_metrics(a):
    r = report(read_image(a.reference), read_image(a.candidate))
    rows = [runner.METRIC_HEADER, [runner.fmt(v) for v in r.row()]]
    if a.output:
        runner.write_csv(a.output, rows[0], rows[1:])
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerows(rows)


def cmd_benchmark(a):
    methods = {
        "lr": {"iters": a.lr_iters},
        "cp": {"lams": a.lams, "iters": a.cp_iters},
        "cg": {"lams": a.lams, "iters": a.cg_iters, "eps_tv": a.eps_tv},
        "ssi": train_dict(a, a.ssi_seeds[0]),
        "ssi_seeds": a.ssi_seeds,
        "no_mask": a.ablation,
    }
    m = RunManifest("benchmark", runner.corpus_files(a.corpus), a.output, noise_dict(a), kernel_dict(a),
                    methods, {"noise": a.noise_seed, "ssi": a.ssi_seeds})
    runner.execute(m)


def cmd_replay(a):
    runner.execute(RunManifest.load(a.manifest), a.output)


def cmd_make_corpus(a):
    out = Path(a.output)
    out.mkdir(parents=True, exist_ok=True)
    for name in a.images:
        write_image(out / f"{name}.png", standard_image(name, a.size))


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ssinv", description="Self-supervised deconvolution with masked training.")
    p.add_argument("-v", "--verbose", action="count", default=0, help="-v for progress, -vv for debug")
    sub = p.add_subparsers(dest="command", required=True)

    def command(name, func, help):
        sp = sub.add_parser(name, help=help, description=help)
        sp.add_argument("--config", help="key = value file; command-line flags override it")
        sp.set_defaults(func=func)
        return sp

    sp = command("degrade", cmd_degrade, "blur and add noise to a clean image")
    sp.add_argument("input")
    sp.add_argument("output")
    add_noise(sp)
    add_psf(sp)

    sp = command("train", cmd_train, "fit a pseudo-inverse network to one degraded image")
    sp.add_argument("input")
    sp.add_argument("output", help="checkpoint path")
    sp.add_argument("--loss-csv", help="defaults to <output>.loss.csv")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--no-mask", action="store_true", help="train without masking (ablation)")
    add_psf(sp)
    add_train(sp)

    sp = command("infer", cmd_infer, "apply a trained network to an image")
    sp.add_argument("checkpoint")
    sp.add_argument("input")
    sp.add_argument("output")

    sp = command("deconv", cmd_deconv, "run a classical deconvolution method")
    sp.add_argument("method", choices=("lr", "cp", "cg"))
    sp.add_argument("input")
    sp.add_argument("output")
    sp.add_argument("--iters", type=int)
    sp.add_argument("--lam", type=float, default=0.01)
    add_psf(sp)

    sp = command("metrics", cmd_metrics, "score a candidate image against a reference")
    sp.add_argument("reference")
    sp.add_argument("candidate")
    sp.add_argument("--output", help="also write the row to this CSV file")

    sp = command("spectrum", cmd_spectrum, "write the normalized log magnitude spectrum of an image")
    sp.add_argument("input")
    sp.add_argument("output")

    sp = command("benchmark", cmd_benchmark, "degrade a corpus and compare all methods")
    sp.add_argument("corpus")
    sp.add_argument("output")
    sp.add_argument("--lams", type=float_list, default=[0.003, 0.01, 0.03])
    sp.add_argument("--lr-iters", type=int_list, default=list(LR_ITERATIONS))
    sp.add_argument("--cp-iters", type=int, default=300)
    sp.add_argument("--cg-iters", type=int, default=200)
    sp.add_argument("--eps-tv", type=float, default=1e-3)
    sp.add_argument("--ssi-seeds", type=int_list, default=[0, 1, 2])
    sp.add_argument("--ablation", type=parse_bool, default=True, help="also train without masking")
    add_noise(sp)
    add_psf(sp)
    add_train(sp)

    sp = command("replay", cmd_replay, "rerun a saved manifest")
    sp.add_argument("manifest")
    sp.add_argument("--output", help="write results here instead of the recorded location")

    sp = command("make-corpus", cmd_make_corpus, "write standard 256x256 test images")
    sp.add_argument("output")
    sp.add_argument("--images", nargs="+", choices=STANDARD_IMAGES, default=list(BENCHMARK_IMAGES))
    sp.add_argument("--size", type=int, default=256)
    return p


def apply_config(parser, argv):
    """Parse ``argv``; when ``--config`` is given, its values become the subcommand defaults."""
    args = parser.parse_args(argv)
    if not getattr(args, "config", None):
        return args
    sub = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction)).choices[args.command]
    actions = {a.dest: a for a in sub._actions}
    defaults = {}
    for key, raw in read_config(args.config).items():
        action = actions.get(key)
        if action is None or key in ("config", "help", "func"):
            raise UsageError(f"{args.config}: unknown option {key!r} for {args.command}")
        if isinstance(action, argparse._StoreTrueAction):
            defaults[key] = parse_bool(raw)
        else:
            try:
                defaults[key] = action.type(raw) if action.type else raw
            except ValueError as e:
                raise UsageError(f"{args.config}: bad value for {key}: {e}") from None
            if action.choices is not None and defaults[key] not in action.choices:
                raise UsageError(f"{args.config}: {key} must be one of {', '.join(map(str, action.choices))}")
    sub.set_defaults(**defaults)
    return parser.parse_args(argv)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = apply_config(parser, argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code else EXIT_OK
    except (ParameterError, OSError) as e:
        print(f"ssinv: error: {e}", file=sys.stderr)
        return EXIT_IO if isinstance(e, OSError) else EXIT_USAGE
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except (ParameterError, StateError) as e:
        print(f"ssinv: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except NumericError as e:
        print(f"ssinv: numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as e:
        print(f"ssinv: I/O error: {e}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
