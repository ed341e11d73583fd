"""``mclcr`` command line: gen, analyze, train, eval, ablate, gradcheck.

Exit codes: 0 ok, 2 usage or config error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from . import plotting
from .checkpoint import load_checkpoint, save_checkpoint
from .imageio import read_pnm, to_grayscale, write_pnm
from .model import ModelConfig
from .spectral import (patch_spectra, region_patch_mask, render_spectrum_map, residual_report,
                       write_residual_csv)
from .synth import KINDS, GenConfig, gen_dataset, manifest_path, read_manifest
from .train import TrainConfig, evaluate, load_dataset, train

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 2, 3
KIND_ALIASES = {"upsample": KINDS[0], "texture": KINDS[1], "all": None}

log = logging.getLogger("mclcr")


class UsageError(Exception):
    pass


# ---------------------------------------------------------------- parsing

def _add_model_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("model")
    g.add_argument("--patch", type=int, default=8, help="DFT patch side P (default 8)")
    g.add_argument("--heads", type=int, default=4, help="attention heads (default 4)")
    g.add_argument("--backbone-scale", type=int, default=4, help="divide backbone widths by this (default 4)")
    g.add_argument("--fusion-dim", type=int, default=1024, help="width of F_E (default 1024)")
    g.add_argument("--proj-dim", type=int, default=128, help="projection width (default 128)")
    g.add_argument("--dropout", type=float, default=0.5, help="dropout on F_E (default 0.5)")
    g.add_argument("--tau", type=float, default=0.1, help="contrastive temperature (default 0.1)")
    g.add_argument("--alpha", type=float, default=0.5, help="contrastive weight; 0 trains CE only (default 0.5)")
    g.add_argument("--no-ssrb", action="store_true", help="drop the style features")
    g.add_argument("--no-papda", action="store_true", help="drop the amplitude/phase branch")
    g.add_argument("--supcon-reduction", choices=("sum", "mean"), default="mean",
                   help="sum or mean over anchors (default mean)")


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("training")
    g.add_argument("--epochs", type=int, default=30, help="epochs (default 30)")
    g.add_argument("--batch-size", type=int, default=16, help="balanced batch size (default 16)")
    g.add_argument("--lr", type=float, default=1e-3, help="initial AdamW rate (default 1e-3)")
    g.add_argument("--weight-decay", type=float, default=1e-4, help="AdamW decay (default 1e-4)")
    g.add_argument("--patience", type=int, default=5, help="plateau epochs before halving the rate (default 5)")
    g.add_argument("--no-augment", action="store_true", help="disable flips, rotations and patch shifts")


def build_parser() -> argparse.ArgumentParser:
    root = argparse.ArgumentParser(prog="mclcr", description=__doc__.splitlines()[0])
    root.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = root.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def command(name, help_text):
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.add_argument("--config", type=Path, help="key=value file of defaults; flags win")
        return p

    p = command("gen", "Write a synthetic split (PNMs plus manifest).")
    p.add_argument("--out", type=Path, required=True, help="dataset root")
    p.add_argument("--real", type=int, default=64, help="pristine images (default 64)")
    p.add_argument("--fake", type=int, default=64, help="tampered images (default 64)")
    p.add_argument("--size", type=int, default=64, help="image side (default 64)")
    p.add_argument("--patch", type=int, default=8, help="tamper grid size (default 8)")
    p.add_argument("--mix", type=float, default=0.5, help="fraction of fakes that are upsample-artifact")
    p.add_argument("--split", choices=("train", "val", "test"), default="train", help="split name")
    p.add_argument("--seed", type=int, default=0, help="rng seed (default 0)")
    p.add_argument("--sources", action="store_true", help="also write each fake's pristine source image")

    p = command("analyze", "Patch-wise amplitude/phase maps and residuals of a real/fake pair.")
    p.add_argument("--real", type=Path, required=True, help="pristine PNM")
    p.add_argument("--fake", type=Path, required=True, help="tampered PNM")
    p.add_argument("--patch", type=int, default=8, help="patch side P (default 8)")
    p.add_argument("--region", help="x,y,w,h ground-truth rectangle for the tamper column")
    p.add_argument("--out", type=Path, required=True, help="output directory")

    p = command("train", "Train on <data>/manifest_train.tsv, select on manifest_val.tsv.")
    p.add_argument("--data", type=Path, required=True, help="dataset root")
    p.add_argument("--out", type=Path, default=Path("run"), help="output directory (default run/)")
    p.add_argument("--seed", type=int, default=0, help="rng seed (default 0)")
    _add_model_flags(p)
    _add_train_flags(p)

    p = command("eval", "Score a split with a checkpoint; prints ACC and AUC.")
    p.add_argument("--checkpoint", type=Path, required=True, help="model checkpoint")
    p.add_argument("--data", type=Path, required=True, help="dataset root")
    p.add_argument("--split", choices=("train", "val", "test"), default="test", help="split (default test)")
    p.add_argument("--kind", choices=tuple(KIND_ALIASES), default="all",
                   help="keep only this fake kind (reals are always kept)")
    p.add_argument("--out", type=Path, default=None, help="directory for scores.csv and roc.png")

    p = command("ablate", "Train the full model and its variants with one seed; tabulate test AUC.")
    p.add_argument("--data", type=Path, required=True, help="dataset root")
    p.add_argument("--out", type=Path, default=Path("ablation"), help="output directory")
    p.add_argument("--seed", type=int, default=0, help="rng seed (default 0)")
    p.add_argument("--variants", default="full,no-ssrb,no-papda,no-scloss",
                   help="comma list from full,no-ssrb,no-papda,no-scloss")
    _add_model_flags(p)
    _add_train_flags(p)

    p = command("gradcheck", "Central-difference check of every building block and a toy model.")
    p.add_argument("--seed", type=int, default=0, help="rng seed (default 0)")
    p.add_argument("--eps", type=float, default=1e-3, help="finite-difference step (default 1e-3)")
    p.add_argument("--coords", type=int, default=4, help="coordinates sampled per tensor (default 4)")
    p.add_argument("--tol", type=float, default=1e-4, help="pass threshold (default 1e-4)")
    return root


def read_config_file(path: Path) -> dict[str, str]:
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from exc
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key=value")
        k, v = (s.strip() for s in line.split("=", 1))
        out[k.replace("-", "_")] = v
    return out


def _subparser(parser: argparse.ArgumentParser, name: str) -> argparse.ArgumentParser:
    for action in parser._subparsers._group_actions:
        if name in action.choices:
            return action.choices[name]
    raise KeyError(name)


def _peek_config(argv: list[str]) -> tuple[str | None, Path | None]:
    command = next((a for a in argv if not a.startswith("-")), None)
    for i, a in enumerate(argv):
        if a == "--config" and i + 1 < len(argv):
            return command, Path(argv[i + 1])
        if a.startswith("--config="):
            return command, Path(a.split("=", 1)[1])
    return command, None


def parse_args(argv: list[str]) -> argparse.Namespace:
    parser = build_parser()
    command, config = _peek_config(argv)
    if config is not None and command in COMMANDS:
        sub = _subparser(parser, command)
        actions = {a.dest: a for a in sub._actions if a.dest not in ("help", "config")}
        defaults = {}
        for k, raw in read_config_file(config).items():
            if k not in actions:
                raise UsageError(f"unknown config key {k!r} for {command}")
            a = actions[k]
            if isinstance(a, argparse._StoreTrueAction):
                if raw.lower() not in ("true", "false", "1", "0", "yes", "no"):
                    raise UsageError(f"config key {k!r} expects a boolean, got {raw!r}")
                defaults[k] = raw.lower() in ("true", "1", "yes")
                continue
            try:
                val = a.type(raw) if a.type else raw
            except (TypeError, ValueError) as exc:
                raise UsageError(f"config key {k!r}: {exc}") from exc
            if a.choices is not None and val not in a.choices:
                raise UsageError(f"config key {k!r} must be one of {list(a.choices)}")
            defaults[k] = val
            a.required = False
        # file values become defaults, so explicit flags still win
        sub.set_defaults(**defaults)
    return parser.parse_args(argv)


# ---------------------------------------------------------------- helpers

def write_run_txt(args: argparse.Namespace, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    lines = [f"command={args.command}"]
    for k in sorted(vars(args)):
        if k in ("command", "verbose"):
            continue
        v = getattr(args, k)
        lines.append(f"{k}={'' if v is None else v}")
    (out / "run.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")


def model_config(args, image_size: int, **over) -> ModelConfig:
    kw = dict(image_size=image_size, patch=args.patch, heads=args.heads, backbone_scale=args.backbone_scale,
              fusion_dim=args.fusion_dim, proj_dim=args.proj_dim, dropout=args.dropout, tau=args.tau,
              alpha=args.alpha, use_ssrb=not args.no_ssrb, use_papda=not args.no_papda,
              supcon_reduction=args.supcon_reduction)
    kw.update(over)
    return ModelConfig(**kw)


def train_config(args) -> TrainConfig:
    return TrainConfig(batch_size=args.batch_size, epochs=args.epochs, lr=args.lr, weight_decay=args.weight_decay,
                       patience=args.patience, seed=args.seed, augment=not args.no_augment)


def _manifest(root: Path, split: str):
    path = manifest_path(root, split)
    if not path.is_file():
        raise UsageError(f"missing manifest {path}; create it with `mclcr gen --split {split}`")
    return read_manifest(path)


def _load_split(root: Path, split: str, patch: int):
    return load_dataset(_manifest(root, split), patch)


def _image_size(root: Path) -> int:
    m = _manifest(root, "train")
    if len(m) == 0:
        raise UsageError("training manifest is empty")
    img = m.load(0)
    if img.height != img.width:
        raise UsageError(f"images must be square, got {img.height}x{img.width}")
    return img.height


def filter_kind(data, kind: str | None):
    if kind is None:
        return data
    keep = [i for i, (y, k) in enumerate(zip(data.labels, data.kinds)) if y == 0 or k == kind]
    return data.subset(np.array(keep, dtype=int))


# ---------------------------------------------------------------- commands

def cmd_gen(args) -> int:
    cfg = GenConfig(n_real=args.real, n_fake=args.fake, size=args.size, tamper_mix=args.mix, seed=args.seed,
                    split=args.split, patch=args.patch, write_sources=args.sources)
    if cfg.size % cfg.patch:
        raise UsageError(f"size {cfg.size} is not a multiple of patch {cfg.patch}")
    m = gen_dataset(args.out, cfg)
    write_run_txt(args, args.out / f"run_{args.split}")
    print(f"wrote {len(m)} images and {manifest_path(args.out, args.split)}")
    return EXIT_OK


def cmd_analyze(args) -> int:
    real, fake = read_pnm(args.real), read_pnm(args.fake)
    if (real.height, real.width) != (fake.height, fake.width):
        raise UsageError(f"extent mismatch: {real.height}x{real.width} vs {fake.height}x{fake.width}")
    P = args.patch
    if real.height % P or real.width % P:
        raise UsageError(f"image {real.height}x{real.width} is not a multiple of patch {P}")
    mask = None
    if args.region:
        try:
            region = tuple(int(v) for v in args.region.split(","))
        except ValueError as exc:
            raise UsageError(f"--region expects x,y,w,h integers: {exc}") from exc
        if len(region) != 4:
            raise UsageError("--region expects four integers x,y,w,h")
        mask = region_patch_mask(real.height, real.width, P, region)
    s_real, s_fake = patch_spectra(to_grayscale(real), P), patch_spectra(to_grayscale(fake), P)
    rep = residual_report(s_real, s_fake, mask)
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    maps = {
        "amplitude_real": render_spectrum_map(s_real, "amplitude"),
        "amplitude_fake": render_spectrum_map(s_fake, "amplitude"),
        "phase_real": render_spectrum_map(s_real, "phase"),
        "phase_fake": render_spectrum_map(s_fake, "phase"),
        "amplitude_residual": render_spectrum_map(rep, "residual", "amplitude"),
        "phase_residual": render_spectrum_map(rep, "residual", "phase"),
    }
    for name, img in maps.items():
        write_pnm(img, out / f"{name}.pgm")
    write_residual_csv(rep, out / "residual.csv")
    plotting.save_analysis_panel({k.replace("_", " "): v.pixels[..., 0] for k, v in maps.items()},
                                 out / "analysis.png")
    write_run_txt(args, out)
    amp = rep.amp_residual
    top = int(np.argmax(amp))
    print(f"max amplitude residual {amp[top]:.6g} at patch {top} (row {top // rep.cols}, col {top % rep.cols})")
    if mask is not None:
        g = rep.group_means()
        print(f"mean amplitude residual tampered {g['amp_tampered']:.6g} untouched {g['amp_untouched']:.6g}")
    return EXIT_OK


def _train_one(args, cfg: ModelConfig, out: Path, tr, va):
    out.mkdir(parents=True, exist_ok=True)
    state, rows = train(tr, va, cfg, train_config(args), metrics_path=out / "metrics.csv")
    save_checkpoint(state, out / "model.ckpt")
    plotting.save_training_curves(rows, out / "curves.png")
    return state


def cmd_train(args) -> int:
    size = _image_size(args.data)
    cfg = model_config(args, size)
    tr, va = _load_split(args.data, "train", args.patch), _load_split(args.data, "val", args.patch)
    write_run_txt(args, args.out)
    state = _train_one(args, cfg, args.out, tr, va)
    print(f"best val ACC {state.best_val_acc:.4f}; checkpoint {args.out / 'model.ckpt'}")
    return EXIT_OK


def cmd_eval(args) -> int:
    state = load_checkpoint(args.checkpoint)
    data = filter_kind(_load_split(args.data, args.split, state.config.patch), KIND_ALIASES[args.kind])
    scores_path = None
    if args.out is not None:
        args.out.mkdir(parents=True, exist_ok=True)
        scores_path = args.out / "scores.csv"
    res = evaluate(data, state, scores_path)
    if args.out is not None:
        plotting.save_roc(res["scores"], data.labels, args.out / "roc.png", f"{args.split} ({args.kind})")
        write_run_txt(args, args.out)
    print(f"ACC {res['acc']:.4f} AUC {res['auc']:.4f}")
    return EXIT_OK


VARIANTS = {
    "full": {},
    "no-ssrb": {"use_ssrb": False},
    "no-papda": {"use_papda": False},
    "no-scloss": {"alpha": 0.0},
}


def cmd_ablate(args) -> int:
    names = [v.strip() for v in args.variants.split(",") if v.strip()]
    unknown = [n for n in names if n not in VARIANTS]
    if unknown or not names:
        raise UsageError(f"unknown variants {unknown}; choose from {list(VARIANTS)}")
    size = _image_size(args.data)
    tr, va = _load_split(args.data, "train", args.patch), _load_split(args.data, "val", args.patch)
    te = _load_split(args.data, "test", args.patch)
    write_run_txt(args, args.out)
    table = []
    for name in names:
        state = _train_one(args, model_config(args, size, **VARIANTS[name]), args.out / name, tr, va)
        row = [name]
        for kind in ("all", "upsample", "texture"):
            sub = filter_kind(te, KIND_ALIASES[kind])
            res = evaluate(sub, state)
            row += [f"{res['acc']:.4f}", f"{res['auc']:.4f}"]
        table.append(row)
        print(f"{name:<10} ACC {row[1]} AUC {row[2]} | upsample AUC {row[4]} | texture AUC {row[6]}")
    with (args.out / "ablation.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["variant", "acc", "auc", "acc_upsample", "auc_upsample", "acc_texture", "auc_texture"])
        w.writerows(table)
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .verify import ZERO_TOLERANCE, gradient_suite

    if args.coords < 1:
        raise UsageError("--coords must be at least 1")
    results = gradient_suite(args.seed, args.eps, args.coords)
    print(f"{'module':<20} {'tensors':>7} {'coords':>7} {'max rel err':>12} {'zero-grad':>10}  status")
    ok = True
    for name, res in results.items():
        good = res.report.passed(args.tol) and res.zero_grad_max <= ZERO_TOLERANCE
        ok &= good
        zero = f"{res.zero_grad_max:.1e}" if res.n_zero else "-"
        print(f"{name:<20} {len(res.report.checked):>7} {sum(res.report.checked.values()):>7} "
              f"{res.report.worst:>12.3e} {zero:>10}  {'ok' if good else 'FAIL'}")
    return EXIT_OK if ok else EXIT_NUMERIC


COMMANDS = {"gen": cmd_gen, "analyze": cmd_analyze, "train": cmd_train, "eval": cmd_eval,
            "ablate": cmd_ablate, "gradcheck": cmd_gradcheck}


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = parse_args(argv)
    except SystemExit as exc:  # argparse: --help exits 0, usage errors exit 2
        return int(exc.code or 0)
    except UsageError as exc:
        print(f"mclcr: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(message)s", stream=sys.stderr)
    try:
        # overflow surfaces as a non-finite loss, which is reported below
        with np.errstate(over="ignore", invalid="ignore"):
            return COMMANDS[args.command](args)
    except FloatingPointError as exc:
        print(f"mclcr: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (UsageError, ValueError, OSError) as exc:
        print(f"mclcr: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
