"""Command-line entry point: ``mxfontpp <command> [flags]``.

Exit codes: 0 success, 1 validation error (bad flags, config, or a failed
check), 2 runtime failure.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from .checkpoint import CheckpointFormatError, load_checkpoint
from .config import FIELDS, ConfigError, TrainConfig, load_config
from .glyphgen import IMAGE_SIZE, Dataset, make_dataset, write_pgm
from .heads import RECON_LOSSES
from .model import VARIANTS

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2
ABLATION_TSV = "ablation.tsv"


class UsageError(Exception):
    """Bad command-line input; reported with exit code 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


class _HelpFormatter(argparse.ArgumentDefaultsHelpFormatter):
    def _get_help_string(self, action):
        # config overrides name their built-in default themselves
        if action.default is None and "default:" in (action.help or ""):
            return action.help
        return super()._get_help_string(action)


def _help_fmt(prog):
    return _HelpFormatter(prog, max_help_position=36)


def _add_train_overrides(p: argparse.ArgumentParser) -> None:
    """One ``--key`` flag per config field; unset flags fall through to the file."""
    defaults = TrainConfig()
    for name, f in FIELDS.items():
        kind = {"int": int, "float": float}.get(f.type if isinstance(f.type, str) else f.type.__name__, str)
        choices = {"variant": VARIANTS, "content_font": ("random", "base"), "recon_loss": RECON_LOSSES}
        extra = {"choices": choices[name]} if name in choices else {}
        p.add_argument(
            f"--{name.replace('_', '-')}",
            dest=name,
            type=kind,
            default=None,
            help=f"config key {name} (default: {getattr(defaults, name)})",
            **extra,
        )


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mxfontpp", description="Few-shot glyph generation with heterogeneous aggregation experts.", formatter_class=_help_fmt)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-data", help="render the synthetic glyph corpus", formatter_class=_help_fmt)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, required=True, help="generation seed")
    p.add_argument("--fonts", type=int, default=16, help="number of fonts")
    p.add_argument("--unseen-fonts", type=int, default=4, help="fonts held out from training")
    p.add_argument("--chars", type=int, default=80, help="number of characters")
    p.add_argument("--unseen-chars", type=int, default=20, help="characters held out from training")
    p.add_argument("--force", action="store_true", help="overwrite an existing dataset")

    p = sub.add_parser("train", help="train one model", formatter_class=_help_fmt)
    p.add_argument("--config", help="key = value config file (flags take precedence)")
    p.add_argument("--resume", help="checkpoint to resume from")
    p.add_argument("--force", action="store_true", help="overwrite an existing run in out_dir")
    _add_train_overrides(p)

    p = sub.add_parser("eval", help="score a checkpoint on an unseen-font split", formatter_class=_help_fmt)
    p.add_argument("--ckpt", required=True, help="checkpoint file")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--split", required=True, choices=("ufsc", "ufuc"), help="evaluation split")
    p.add_argument("--out", required=True, help="report directory")
    p.add_argument("--refs", type=int, default=4, help="style reference glyphs per pair")
    p.add_argument("--seed", type=int, default=0, help="reference sampling seed")
    p.add_argument("--force", action="store_true", help="overwrite existing report files")

    p = sub.add_parser("generate", help="render characters in a font's style", formatter_class=_help_fmt)
    p.add_argument("--ckpt", required=True, help="checkpoint file")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--font-id", type=int, required=True, help="style font")
    p.add_argument("--chars", required=True, help="comma-separated char ids")
    p.add_argument("--out", required=True, help="output directory for PGMs")
    p.add_argument("--refs", type=int, default=4, help="style reference glyphs")
    p.add_argument("--seed", type=int, default=0, help="reference sampling seed")
    p.add_argument("--force", action="store_true", help="overwrite existing PGMs")

    p = sub.add_parser("ablate", help="train and evaluate full / no_hae / no_csh over seeds", formatter_class=_help_fmt)
    p.add_argument("--config", required=True, help="base config file")
    p.add_argument("--seeds", type=int, default=3, help="number of seeds (0..n-1)")
    p.add_argument("--out", help="root output directory (default: <out_dir>/ablation)")
    p.add_argument("--refs", type=int, default=4, help="style reference glyphs at evaluation")
    p.add_argument("--force", action="store_true", help="overwrite existing runs")

    p = sub.add_parser("gradcheck", help="64-bit gradient verification suite", formatter_class=_help_fmt)
    p.add_argument("--h", type=float, default=1e-5, help="central-difference step")
    p.add_argument("--tol", type=float, default=1e-4, help="relative-error tolerance")
    p.add_argument("--seed", type=int, default=0, help="input seed")
    p.add_argument("--sabotage", metavar="OP", help="scale OP's gradients by 2 (negative control)")
    p.add_argument("--skip-model", action="store_true", help="check ops and blocks only")
    return parser


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------

def cmd_gen_data(args) -> int:
    split = make_dataset(
        args.out, n_fonts=args.fonts, n_unseen_fonts=args.unseen_fonts,
        n_chars=args.chars, n_unseen_chars=args.unseen_chars, seed=args.seed, force=args.force,
    )
    print(f"wrote {len(split.samples)} glyphs to {args.out}")
    return EXIT_OK


def _overrides(args) -> dict:
    return {name: getattr(args, name) for name in FIELDS if getattr(args, name, None) is not None}


def cmd_train(args) -> int:
    from .trainer import train

    cfg = load_config(args.config, _overrides(args))
    result = train(cfg, resume=args.resume, force=args.force)
    last = result.reports[-1] if result.reports else None
    print(f"trained to step {result.checkpoint.step}; checkpoint {result.path}")
    if last is not None:
        print(f"final recon={last.recon:.4f} total={last.total:.4f}")
    return EXIT_OK


def cmd_eval(args) -> int:
    from .evaluate import evaluate

    report = evaluate(args.ckpt, args.data, args.split, args.refs, args.seed, args.out, args.force)
    for key, value in report.summary().items():
        print(f"{key}={value}")
    return EXIT_OK


def _parse_chars(text: str) -> list[int]:
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise UsageError(f"--chars must be comma-separated integers, got {text!r}") from None


def cmd_generate(args) -> int:
    from .evaluate import reference_chars
    from .model import synthesize
    from .trainer import restore

    chars = _parse_chars(args.chars)
    data = Dataset(args.data)
    if not 0 <= args.font_id < data.n_fonts:
        raise UsageError(f"--font-id {args.font_id} is not in the dataset")
    unknown = [c for c in chars if c not in data.components]
    if not chars or unknown:
        raise UsageError(f"unknown char ids {unknown}" if unknown else "--chars is empty")
    out = Path(args.out)
    paths = [out / f"f{args.font_id:03d}_c{c:03d}.pgm" for c in chars]
    if not args.force and any(p.exists() for p in paths):
        raise FileExistsError(f"{next(p for p in paths if p.exists())} exists; use --force")
    _, mcfg, params, _ = restore(load_checkpoint(args.ckpt), data.n_train_fonts)
    # references come from the style font's own chars of the same split kind
    pool = data.split.unseen_chars if args.font_id in data.split.unseen_fonts and data.split.unseen_chars else data.split.train_chars
    content = np.stack([data.read(data.base_font, c, "content") for c in chars])
    refs = np.stack(
        [
            np.stack([data.read(args.font_id, rc, "style") for rc in reference_chars(pool, c, args.font_id, args.refs, args.seed)])
            for c in chars
        ]
    )
    images = synthesize(params, mcfg, content, refs)
    out.mkdir(parents=True, exist_ok=True)
    for path, img in zip(paths, images):
        write_pgm(path, img.reshape(IMAGE_SIZE, IMAGE_SIZE))
    print(f"wrote {len(paths)} glyphs to {out}")
    return EXIT_OK


def cmd_ablate(args) -> int:
    from .ablation import run_ablation

    if args.seeds < 1:
        raise UsageError("--seeds must be >= 1")
    cfg = load_config(args.config)
    root = Path(args.out) if args.out else Path(cfg.out_dir) / "ablation"
    table = run_ablation(cfg, root, seeds=range(args.seeds), n_style_refs=args.refs, force=args.force)
    print(table.to_text(), end="")
    print(f"wrote {root / ABLATION_TSV}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .autodiff import sabotage
    from .gradsuite import run_suite

    if args.sabotage:
        with sabotage(args.sabotage, 2.0):
            result = run_suite(args.h, args.tol, args.seed, include_model=not args.skip_model)
    else:
        result = run_suite(args.h, args.tol, args.seed, include_model=not args.skip_model)
    for line in result.report.lines():
        print(line)
    status = "passed" if result.passed else f"FAILED ({len(result.report.failures)} blocks)"
    print(f"gradcheck {status}: max_rel_err={result.report.max_rel_err:.3e} tol={args.tol:g} in {result.seconds:.1f}s")
    return EXIT_OK if result.passed else EXIT_INVALID


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "eval": cmd_eval,
    "generate": cmd_generate,
    "ablate": cmd_ablate,
    "gradcheck": cmd_gradcheck,
}

# exceptions that mean "the request was invalid" rather than "something broke"
_VALIDATION = (
    UsageError, ConfigError, FileExistsError, FileNotFoundError, CheckpointFormatError, ValueError, KeyError,
)


def run(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        print(f"mxfontpp: error: {e}", file=sys.stderr)
        return EXIT_INVALID
    except SystemExit as e:  # --help
        return int(e.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return COMMANDS[args.command](args)
    except _VALIDATION as e:
        print(f"mxfontpp {args.command}: error: {_one_line(e)}", file=sys.stderr)
        return EXIT_INVALID
    except Exception as e:  # noqa: BLE001 - the contract is a one-line cause and exit 2
        print(f"mxfontpp {args.command}: failed: {type(e).__name__}: {_one_line(e)}", file=sys.stderr)
        return EXIT_RUNTIME


def _one_line(e: BaseException) -> str:
    text = str(e).strip() or type(e).__name__
    return text.splitlines()[0]


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
