"""Command-line entry point: ``laren <command> ...``.

Exit codes: 0 success, 2 configuration error, 3 I/O error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import metrics
from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig
from .errors import (BadConfig, DimMismatch, IndexOutOfRange, LarenError, MissingFile,
                     NonFiniteError)
from .numerics import load_ltsr, save_ltsr
from .synthdata import Dataset, load_dataset, make_dataset, read_manifest, read_ppm, write_ppm
from .train import METRICS_HEADER, TrainState, evaluate, fit, format_row, gradcheck_pipeline, latents

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC = 0, 2, 3, 4
CHECKPOINT = "checkpoint"


def _range(text: str) -> tuple[int, int]:
    try:
        a, b = (int(v) for v in text.split(":"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a:b, got {text!r}") from None
    return a, b


def _check_data(config: RunConfig, data: Dataset) -> None:
    if (data.S, data.s) != (config.S, config.s):
        raise DimMismatch(f"dataset has S={data.S}, s={data.s}; config expects S={config.S}, s={config.s}")
    if len(data) <= config.n_test:
        raise BadConfig(f"dataset has {len(data)} samples, n_test = {config.n_test}")


def _out_dir(path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_gen_data(args) -> int:
    config = RunConfig.load(args.config)
    make_dataset(config.n_samples, config.S, config.s, config.seed, _out_dir(args.out))
    print(f"wrote {config.n_samples} samples to {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    config = RunConfig.load(args.config)
    data = load_dataset(args.data)
    _check_data(config, data)
    out = _out_dir(args.out)
    ckpt = out / CHECKPOINT
    metrics_path = out / "metrics.csv"
    if (ckpt / "meta.cfg").exists():
        model, state = load_checkpoint(ckpt, config)
        kept = []
        if metrics_path.exists():
            lines = metrics_path.read_text(encoding="utf-8").splitlines(keepends=True)
            kept = [ln for ln in lines[1:] if int(ln.split(",", 1)[0]) <= state.step]
        metrics_path.write_text(",".join(METRICS_HEADER) + "\n" + "".join(kept), encoding="utf-8")
    else:
        from .model import LarenModel
        model, state = LarenModel(config), TrainState()
        metrics_path.write_text(",".join(METRICS_HEADER) + "\n", encoding="utf-8")
    steps = args.steps if args.steps is not None else max(0, config.iters - state.step)

    with metrics_path.open("a", encoding="utf-8") as log:
        def on_step(row, st):
            log.write(format_row(row))
            if st.step % config.ckpt_every == 0:
                log.flush()
                save_checkpoint(ckpt, model, st)

        try:
            fit(model, data, steps, state, on_step)
        except NonFiniteError as exc:
            log.flush()
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_NUMERIC
    save_checkpoint(ckpt, model, state)
    print(f"trained to step {state.step}; checkpoint in {ckpt}")
    return EXIT_OK


def cmd_eval(args) -> int:
    model, _ = load_checkpoint(args.ckpt)
    data = load_dataset(args.data)
    _check_data(model.config, data)
    res = evaluate(model, data)
    line = f"psnr={res['psnr']!r} baseline_psnr={res['baseline_psnr']!r} n={res['n']}"
    print(line)
    if args.out:
        (_out_dir(args.out) / "eval.csv").write_text(
            f"psnr,baseline_psnr,n\n{res['psnr']!r},{res['baseline_psnr']!r},{res['n']}\n", encoding="utf-8")
    return EXIT_OK


def _latents(args):
    if args.latents:
        x = load_ltsr(args.latents)
        if x.ndim != 2:
            raise DimMismatch(f"latent dump must be samples x dims, got shape {x.shape}")
        return x
    if not args.ckpt:
        raise BadConfig("either --ckpt or --latents is required")
    model, _ = load_checkpoint(args.ckpt)
    data = load_dataset(args.data)
    _check_data(model.config, data)
    z, f = latents(model, data)
    return z if args.space == "z" else f


def cmd_dci(args) -> int:
    x = _latents(args)
    attrs = read_manifest(Path(args.data) / "manifest.csv")
    if len(attrs) != len(x):
        raise DimMismatch(f"{len(x)} latent rows but {len(attrs)} manifest rows")
    scores, importance = metrics.dci(x, attrs)
    print(f"disentanglement={scores.disentanglement!r} completeness={scores.completeness!r} "
          f"informativeness={scores.informativeness!r}")
    if args.out:
        out = _out_dir(args.out)
        (out / "dci.csv").write_text(
            "disentanglement,completeness,informativeness\n"
            f"{scores.disentanglement!r},{scores.completeness!r},{scores.informativeness!r}\n",
            encoding="utf-8")
        save_ltsr(out / "importance.ltsr", importance)
    return EXIT_OK


def cmd_corr(args) -> int:
    x = _latents(args)
    report = metrics.dim_subset_report(metrics.correlation_matrix(x), args.rows, args.cols)
    sys.stdout.write(report)
    if args.out:
        (_out_dir(args.out) / "corr.csv").write_text(report, encoding="utf-8")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    config = RunConfig.load(args.config)
    results = gradcheck_pipeline(config, batch=args.batch, max_coords=args.max_coords)
    failed = 0
    for path, res in results:
        status = "ok" if res.ok else "FAIL"
        failed += not res.ok
        print(f"{path:13s} {res.name:20s} max_rel_error={res.max_rel_error:.3e} "
              f"checked={res.checked} skipped={res.skipped} {status}")
    print("gradcheck " + ("passed" if not failed else f"failed for {failed} tensors"))
    return EXIT_OK if not failed else EXIT_NUMERIC


def cmd_synth(args) -> int:
    model, _ = load_checkpoint(args.ckpt)
    if args.lr.endswith(".ltsr"):
        lr = load_ltsr(args.lr)
    else:
        lr = read_ppm(args.lr)
    size = model.config.lr_size
    if lr.shape != (3, size, size):
        raise DimMismatch(f"LR image must be 3 x {size} x {size}, got {lr.shape}")
    sr = model.predict(lr[None], noise_keys=[("synth", 0)]).sr[0]
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    write_ppm(args.out, np.clip(sr, -1.0, 1.0))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="laren", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="write a synthetic dataset")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train (or resume) a model")
    p.add_argument("--config", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--steps", type=int, help="steps to run now (default: up to config iters)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="held-out PSNR of a checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    for name, func, helptext in (("dci", cmd_dci, "DCI scores of latents"),
                                 ("corr", cmd_corr, "correlation block of latent dimensions")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--ckpt")
        p.add_argument("--data", required=True)
        p.add_argument("--latents", help="LTSR samples x dims dump used instead of a checkpoint")
        p.add_argument("--space", choices=("g", "z"), default="g")
        p.add_argument("--out")
        if name == "corr":
            p.add_argument("--rows", type=_range, required=True)
            p.add_argument("--cols", type=_range, required=True)
        p.set_defaults(func=func)

    p = sub.add_parser("gradcheck", help="finite-difference check of the full objective")
    p.add_argument("--config", required=True)
    p.add_argument("--batch", type=int, default=2)
    p.add_argument("--max-coords", type=int, default=4)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("synth", help="super-resolve one LR image")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--lr", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (BadConfig, DimMismatch, IndexOutOfRange) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (MissingFile, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except NonFiniteError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except LarenError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
