"""Reproducible command execution: run manifests, the single-image commands and the benchmark.

Every command is described by a :class:`RunManifest`. The CLI builds one from
its arguments and hands it to :func:`execute`; ``replay`` reads one back from
JSON and does the same, so a replay goes through exactly the same code path.
"""

from __future__ import annotations

import csv
import json
import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import classical
from .classical import LR_ITERATIONS, TvConfig
from .degrade import NoiseSpec, degrade
from .errors import ParameterError
from .imageio import read_image, write_image
from .metrics import report
from .neural import load_params, save_params
from .tensor import as_image, convolve, gaussian_psf, log_spectrum
from .trainer import TrainConfig, derived_seed, infer, train

log = logging.getLogger(__name__)

MANIFEST_VERSION = 1
METRIC_HEADER = ["PSNR", "SSIM", "MI", "SMI"]
PER_IMAGE_HEADER = ["image", "method", "setting"] + METRIC_HEADER
SUMMARY_HEADER = ["method"] + METRIC_HEADER
TIMING_HEADER = ["method", "training time (s)", "inference time (s)"]
LOSS_HEADER = ["epoch", "batch", "density", "loss"]
IMAGE_SUFFIXES = (".png", ".pgm", ".ssif")
COMMANDS = ("degrade", "train", "infer", "deconv", "spectrum", "benchmark")


@dataclass
class RunManifest:
    """Everything needed to rerun a command; wall-clock values are never stored here."""

    command: str
    inputs: list = field(default_factory=list)
    output: str = ""
    noise: dict = field(default_factory=lambda: NoiseSpec().to_dict())
    kernel: dict = field(default_factory=lambda: {"sigma": 1.0, "radius": 8})
    methods: dict = field(default_factory=dict)
    seeds: dict = field(default_factory=dict)
    version: int = MANIFEST_VERSION

    def __post_init__(self):
        if self.command not in COMMANDS:
            raise ParameterError(f"unknown command {self.command!r}")
        if self.version != MANIFEST_VERSION:
            raise ParameterError(f"unsupported manifest version {self.version}")

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "RunManifest":
        try:
            d = json.loads(text)
        except json.JSONDecodeError as e:
            raise ParameterError(f"manifest is not valid JSON: {e}") from None
        if not isinstance(d, dict):
            raise ParameterError("manifest must be a JSON object")
        return cls(**d)

    def save(self, path):
        Path(path).write_text(self.to_json(), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "RunManifest":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))

    def psf(self):
        return gaussian_psf(float(self.kernel["sigma"]), int(self.kernel["radius"]))

    def noise_spec(self, seed: int | None = None) -> NoiseSpec:
        d = dict(self.noise)
        if seed is not None:
            d["seed"] = seed
        return NoiseSpec(**d)


def fmt(v: float) -> str:
    return repr(float(v))


def write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def manifest_path(output) -> Path:
    return Path(str(output) + ".manifest.json")


# -- single-image commands --------------------------------------------------------

def run_degrade(m: RunManifest):
    x = read_image(m.inputs[0])
    y = degrade(x, m.psf(), m.noise_spec(), m.methods.get("boundary", "reflect"))
    write_image(m.output, y)
    m.save(manifest_path(m.output))
    return y


def run_train(m: RunManifest):
    y = read_image(m.inputs[0])
    cfg = TrainConfig.from_dict(m.methods["ssi"])
    rows = []
    params = train(y, m.psf(), cfg, on_batch=lambda e, b, d, l: rows.append([e, b, fmt(d), fmt(l)]))
    save_params(m.output, params)
    write_csv(m.methods.get("loss_csv") or str(m.output) + ".loss.csv", LOSS_HEADER, rows)
    m.save(manifest_path(m.output))
    return params


def run_infer(m: RunManifest):
    params = load_params(m.inputs[0])
    out = infer(params, read_image(m.inputs[1]))
    write_image(m.output, out)
    return out


def deconvolve(method: str, y, k, opts: dict):
    if method == "lr":
        return classical.lucy_richardson(y, k, int(opts.get("iters", 10)))
    if method == "cp":
        cfg = TvConfig(lam=float(opts.get("lam", 0.01)), iters=int(opts.get("iters", 300)))
        return np.clip(classical.chambolle_pock_tv(y, k, cfg), 0.0, 1.0)
    if method == "cg":
        cfg = TvConfig(lam=float(opts.get("lam", 0.01)), iters=int(opts.get("iters", 200)),
                       eps_tv=float(opts.get("eps_tv", 1e-3)))
        return np.clip(classical.cg_tv(y, k, cfg), 0.0, 1.0)
    raise ParameterError(f"unknown deconvolution method {method!r}")


def run_deconv(m: RunManifest):
    (method, opts), = m.methods.items()
    out = deconvolve(method, read_image(m.inputs[0]), m.psf(), opts)
    write_image(m.output, out)
    return out


def run_spectrum(m: RunManifest):
    s = log_spectrum(read_image(m.inputs[0]))
    write_image(m.output, s)
    return s


# -- benchmark ---------------------------------------------------------------------

DEFAULT_BENCHMARK = {
    "lr": {"iters": list(LR_ITERATIONS)},
    "cp": {"lams": [0.003, 0.01, 0.03], "iters": 300},
    "cg": {"lams": [0.003, 0.01, 0.03], "iters": 200, "eps_tv": 1e-3},
    "ssi": TrainConfig().to_dict(),
    "ssi_seeds": [0, 1, 2],
    "no_mask": True,
}


def corpus_files(corpus_dir) -> list[str]:
    d = Path(corpus_dir)
    if not d.is_dir():
        raise FileNotFoundError(f"corpus directory {d} does not exist")
    files = sorted(str(p) for p in d.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
    if not files:
        raise ParameterError(f"corpus directory {d} contains no images")
    return files


def _best(candidates):
    """Pick the candidate with the highest SSIM; ties keep the first."""
    return max(candidates, key=lambda c: c[2].ssim)


def _ssi_runs(name, y, x, k, base_cfg, seeds, no_mask, img_dir):
    runs = []
    for seed in seeds:
        cfg = TrainConfig.from_dict({**base_cfg, "seed": seed, "no_mask": no_mask})
        rows = []
        t0 = time.perf_counter()
        params = train(y, k, cfg, on_batch=lambda e, b, d, l: rows.append([e, b, fmt(d), fmt(l)]))
        t_train = time.perf_counter() - t0
        t0 = time.perf_counter()
        out = infer(params, y)
        t_infer = time.perf_counter() - t0
        tag = "SSI-no-mask" if no_mask else "SSI"
        write_csv(img_dir / f"{tag}_seed{seed}_loss.csv", LOSS_HEADER, rows)
        runs.append((f"seed={seed}", out, report(x, out, name, tag), t_train, t_infer))
    return runs


def benchmark_image(args):
    """Process one clean image; returns per-image rows and timings."""
    index, path, m = args
    x = as_image(read_image(path))
    name = Path(path).stem
    k = m.psf()
    img_dir = Path(m.output) / name
    img_dir.mkdir(parents=True, exist_ok=True)
    methods = m.methods
    noise_seed = derived_seed(int(m.seeds.get("noise", 0)), index)
    blurry = np.clip(convolve(x, k), 0.0, 1.0)
    y = degrade(x, k, m.noise_spec(noise_seed))
    write_image(img_dir / "clean.ssif", x)
    write_image(img_dir / "blurry.png", blurry)
    write_image(img_dir / "degraded.ssif", y)

    results = []  # (method, setting, image, report, train_s, infer_s)

    def add(method, setting, img, t_train=0.0, t_infer=0.0, rep=None):
        rep = rep or report(x, img, name, method)
        results.append((method, setting, rep, t_train, t_infer))
        write_image(img_dir / f"{method}.png", img)

    add("blurry", "", blurry)
    add("blurry&noisy", "", y)
    for n in methods["lr"]["iters"]:
        t0 = time.perf_counter()
        out = deconvolve("lr", y, k, {"iters": n})
        add(f"LR{n}", f"iters={n}", out, t_infer=time.perf_counter() - t0)
    for key, label in (("cp", "CP"), ("cg", "CG")):
        opts = methods[key]
        cands = []
        for lam in opts["lams"]:
            t0 = time.perf_counter()
            out = deconvolve(key, y, k, {**opts, "lam": lam})
            dt = time.perf_counter() - t0
            cands.append((f"lam={lam}", out, report(x, out, name, label), 0.0, dt))
        setting, out, rep, _, dt = _best(cands)
        add(label, setting, out, t_infer=dt, rep=rep)
    seeds = methods["ssi_seeds"]
    variants = [("SSI", False)] + ([("SSI-no-mask", True)] if methods.get("no_mask", True) else [])
    for label, no_mask in variants:
        runs = _ssi_runs(name, y, x, k, methods["ssi"], seeds, no_mask, img_dir)
        setting, out, rep, t_train, t_infer = _best(runs)
        add(label, setting, out, t_train, t_infer, rep=rep)
        for s, _, r, tt, ti in runs:
            results.append((f"{label}[{s}]", s, r, tt, ti))

    rows = [[name, method, setting] + [fmt(v) for v in rep.row()] for method, setting, rep, _, _ in results]
    write_csv(img_dir / "metrics.csv", PER_IMAGE_HEADER, rows)
    timings = [(method, tt, ti) for method, _, _, tt, ti in results if "[" not in method]
    return name, results, timings


def _workers(n_images: int) -> int:
    raw = os.environ.get("SSI_THREADS")
    if raw is None:
        cap = os.cpu_count() or 1
    else:
        try:
            cap = int(raw)
        except ValueError:
            raise ParameterError(f"SSI_THREADS must be an integer, got {raw!r}") from None
        if cap < 1:
            raise ParameterError("SSI_THREADS must be >= 1")
    return max(1, min(cap, n_images))


def run_benchmark(m: RunManifest):
    """Degrade every corpus image, run all methods, write per-image, summary and timing CSVs."""
    if not m.inputs:
        raise ParameterError("benchmark needs at least one input image")
    out = Path(m.output)
    out.mkdir(parents=True, exist_ok=True)
    m.save(out / "manifest.json")
    jobs = [(i, p, m) for i, p in enumerate(m.inputs)]
    workers = _workers(len(jobs))
    if workers == 1:
        per_image = [benchmark_image(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            per_image = list(ex.map(benchmark_image, jobs))

    rows, by_method, times = [], {}, {}
    for name, results, timings in per_image:
        for method, setting, rep, _, _ in results:
            rows.append([name, method, setting] + [fmt(v) for v in rep.row()])
            if "[" not in method:
                by_method.setdefault(method, []).append(rep.row())
        for method, tt, ti in timings:
            times.setdefault(method, []).append((tt, ti))
    write_csv(out / "per_image.csv", PER_IMAGE_HEADER, rows)
    summary = [[method] + [fmt(v) for v in np.mean(vals, axis=0)] for method, vals in by_method.items()]
    write_csv(out / "summary.csv", SUMMARY_HEADER, summary)
    timing = [[method, f"{np.mean([t[0] for t in v]):.3f}", f"{np.mean([t[1] for t in v]):.3f}"]
              for method, v in times.items() if method not in ("blurry", "blurry&noisy")]
    write_csv(out / "timing.csv", TIMING_HEADER, timing)
    return per_image


RUNNERS = {
    "degrade": run_degrade,
    "train": run_train,
    "infer": run_infer,
    "deconv": run_deconv,
    "spectrum": run_spectrum,
    "benchmark": run_benchmark,
}


def execute(m: RunManifest, output: str | None = None):
    """Run the command a manifest describes, optionally redirecting its output."""
    if output is not None:
        m = RunManifest(**{**asdict(m), "output": str(output)})
    log.info("running %s -> %s", m.command, m.output)
    return RUNNERS[m.command](m)

