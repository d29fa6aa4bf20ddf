"""``tslm`` command line: data generation, training stages, denoising, captioning, evaluation."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from importlib import resources
from pathlib import Path

from . import persistence as io
from .autoencoder import train_autoencoder
from .datagen import duplicate_rate, generate_dataset, inject_mispairs, make_synth_dataset
from .decoder import SamplingConfig, generate_captions, train_tslm
from .denoiser import denoise_report, filter_pairs, score_pairs, score_stats, train_denoiser
from .errors import (
    ContractError,
    FormatError,
    GenerationError,
    NumericError,
    ParameterError,
    ParseError,
    ProtocolError,
    TransportError,
)
from .evalkit import evaluate_run, fraction_subset
from .llm_client import LLMClient, summarize_captions
from .textrep import Vocabulary, build_vocab

log = logging.getLogger("tslm")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC, EXIT_TRANSPORT = 0, 1, 2, 3, 4


class UsageError(Exception):
    pass


class Parser(argparse.ArgumentParser):
    """argparse with usage errors mapped to exit code 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# ----------------------------------------------------------------------
# helpers
# ----------------------------------------------------------------------
def load_config(path: str | None) -> io.PipelineConfig:
    if path is None:
        return io.PipelineConfig()
    if path == "toy":
        text = resources.files("tslm").joinpath("data/toy_config.json").read_text(encoding="utf-8")
        return io.PipelineConfig.from_dict(json.loads(text))
    return io.PipelineConfig.load(_existing(path))


def _existing(path: str) -> str:
    if not Path(path).exists():
        raise UsageError(f"no such file: {path}")
    return path


def _pick(flag, default):
    return default if flag is None else flag


def _seed(args, cfg) -> int:
    return _pick(args.seed, cfg.seed)


def _vocab_for(pairs, cfg) -> Vocabulary:
    if cfg.vocab_path:
        return Vocabulary.load(cfg.vocab_path)
    return build_vocab([p.caption for p in pairs])


def _load_kind(path: str, kind: str):
    model = io.load_checkpoint(_existing(path))
    got = getattr(model, "kind", "autoencoder")
    if got != kind:
        raise FormatError(f"{path} holds a {got} checkpoint, expected {kind}")
    return model


def _check_ae(model, ae_path: str | None) -> None:
    """The frozen autoencoder travels inside denoiser/tslm checkpoints; --ae must agree with it."""
    if ae_path is None:
        return
    ae = _load_kind(ae_path, "autoencoder")
    if ae.checksum() != model.ae.checksum():
        raise FormatError(f"{ae_path} is not the autoencoder this model was trained with")


def _write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2) + "\n", encoding="utf-8")


def _parse_series(text: str) -> list[float]:
    try:
        return [float(v) for v in text.replace(" ", "").split(",") if v]
    except ValueError as exc:
        raise UsageError(f"--series must be comma-separated numbers ({exc})") from exc


# ----------------------------------------------------------------------
# subcommands
# ----------------------------------------------------------------------
def cmd_make_synth(args) -> int:
    cfg = load_config(args.config)
    pairs = make_synth_dataset(args.series, _seed(args, cfg), annotations=args.annotations)
    io.write_pairs(args.out, pairs)
    log.info("wrote %d pairs (%d series) to %s", len(pairs), args.series, args.out)
    return EXIT_OK


def cmd_gen_data(args) -> int:
    cfg = load_config(args.config)
    seed = _seed(args, cfg)
    demos = io.read_pairs(_existing(args.demos))
    client = LLMClient.from_env(args.endpoint, args.model) if args.backend == "remote" else None
    pairs = generate_dataset(
        demos,
        args.count,
        bootstrap=args.bootstrap,
        backend=args.backend,
        rng_seed=seed,
        sim_threshold=args.group_threshold,
        client=client,
    )
    noisy = set()
    if args.inject_noise:
        pairs, noisy = inject_mispairs(pairs, args.inject_noise, seed)
        _write_json(Path(args.out).with_suffix(".noise.json"), {"rate": args.inject_noise, "indices": sorted(noisy)})
    io.write_pairs(args.out, pairs)
    log.info("wrote %d generated pairs (duplicate rate %.1f%%, %d injected mispairs)", len(pairs), duplicate_rate(pairs), len(noisy))
    return EXIT_OK


def cmd_train_ae(args) -> int:
    cfg = load_config(args.config)
    series = [p.series for p in io.read_many(_existing(p) for p in args.data)]
    model, losses = train_autoencoder(
        series,
        epochs=_pick(args.epochs, cfg.ae_epochs),
        batch=_pick(args.batch, cfg.ae_batch),
        seed=_seed(args, cfg),
        config=replace(cfg.ae_config(), seed=_seed(args, cfg)),
        lr=_pick(args.lr, cfg.ae_lr or cfg.lr),
        warmup_ratio=cfg.warmup_ratio,
        weight_decay=cfg.weight_decay,
    )
    io.save_checkpoint(model, args.out)
    _write_json(Path(args.out).with_suffix(".losses.json"), losses)
    log.info("autoencoder loss %.5f -> %.5f", losses[0], losses[-1])
    return EXIT_OK


def cmd_train_denoiser(args) -> int:
    cfg = load_config(args.config)
    seed = _seed(args, cfg)
    pairs = io.read_pairs(_existing(args.data))
    ae = _load_kind(args.ae, "autoencoder")
    vocab = _vocab_for(pairs, cfg)
    model, history = train_denoiser(
        pairs,
        vocab,
        ae,
        cfg.encoder_config(len(vocab), seed=seed),
        batch=_pick(args.batch, cfg.batch),
        epochs=_pick(args.epochs, cfg.denoiser_epochs),
        seed=seed,
        lr=_pick(args.lr, cfg.denoiser_lr or cfg.lr),
        warmup_ratio=cfg.warmup_ratio,
        weight_decay=cfg.weight_decay,
    )
    io.save_checkpoint(model, args.out)
    _write_json(Path(args.out).with_suffix(".losses.json"), history.losses)
    return EXIT_OK


def resolve_threshold(value, stats) -> float:
    """A number, or ``auto`` = lower end of the suggested interval (mean - 2 sd)."""
    if value == "auto":
        return stats.suggested_interval[0]
    return float(value)


def cmd_denoise(args) -> int:
    from .plotting import plot_score_histogram

    cfg = load_config(args.config)
    model = _load_kind(args.model, "denoiser")
    pairs = io.read_pairs(_existing(args.data))
    scored = score_pairs(pairs, model)
    stats = score_stats([p.score for p in scored])
    threshold = resolve_threshold(_pick(args.threshold, cfg.threshold), stats)
    kept, removed, stats = filter_pairs(scored, threshold)
    io.write_pairs(args.out, kept)
    if args.removed:
        io.write_pairs(args.removed, removed)
    _write_json(args.report, denoise_report(kept, removed, stats, threshold))
    plot_score_histogram([p.score for p in scored], threshold, stats, Path(args.report).with_suffix(".png"))
    log.info("kept %d, removed %d at threshold %.3f", len(kept), len(removed), threshold)
    return EXIT_OK


def _training_pairs(paths, fraction: float, seed: int):
    pairs = io.read_many(_existing(p) for p in paths)
    originals = [p for p in pairs if p.source == "original"]
    generated = [p for p in pairs if p.source == "generated"]
    return originals + fraction_subset(generated, fraction, seed)


def _train_tslm_from(pairs, ae, cfg, variant, seed, epochs, batch, lr):
    if not pairs:
        raise ParameterError("no training pairs")
    vocab = _vocab_for(pairs, cfg)
    model, history = train_tslm(
        pairs,
        vocab,
        ae,
        cfg.encoder_config(len(vocab), variant, seed),
        epochs=epochs,
        batch=batch,
        seed=seed,
        lr=lr,
        warmup_ratio=cfg.warmup_ratio,
        weight_decay=cfg.weight_decay,
        dec_layers=cfg.dec_layers,
        max_len=cfg.max_len,
    )
    return model, history


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    seed = _seed(args, cfg)
    ae = _load_kind(args.ae, "autoencoder")
    pairs = _training_pairs(args.data, args.fraction, seed)
    model, history = _train_tslm_from(
        pairs, ae, cfg, args.variant, seed, _pick(args.epochs, cfg.tslm_epochs), _pick(args.batch, cfg.batch), _pick(args.lr, cfg.lr)
    )
    io.save_checkpoint(model, args.out)
    _write_json(Path(args.out).with_suffix(".losses.json"), history)
    return EXIT_OK


def _sampling(args, cfg) -> SamplingConfig:
    s = cfg.sampling
    return SamplingConfig(
        k=_pick(args.k, s.k),
        top_k=_pick(args.top_k, s.top_k),
        top_p=_pick(args.top_p, s.top_p),
        temperature=_pick(args.temperature, s.temperature),
        max_len=s.max_len,
        seed=_seed(args, cfg),
    )


def cmd_caption(args) -> int:
    cfg = load_config(args.config)
    model = _load_kind(args.model, "tslm")
    _check_ae(model, args.ae)
    series = _parse_series(args.series)
    if len(series) < 3:
        raise UsageError("--series needs at least 3 values")
    captions = generate_captions(series, model, _sampling(args, cfg))
    for c in captions:
        print(c)
    if args.summarize != "none":
        print(f"summary: {summarize_captions(captions, args.summarize)}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    from .plotting import plot_sweep

    cfg = load_config(args.config)
    seed = _seed(args, cfg)
    model = _load_kind(args.model, "tslm")
    _check_ae(model, args.ae)
    denoiser = _load_kind(args.denoiser, "denoiser")
    test = io.read_pairs(_existing(args.test))
    sampling = _sampling(args, cfg)
    if args.sweep == "fraction" and not args.data:
        raise UsageError("--sweep fraction needs --data (originals + denoised generated pairs)")
    epochs = _pick(args.epochs, cfg.tslm_epochs)

    def trainer(pct):
        pairs = _training_pairs(args.data, pct, seed)
        log.info("fraction %d%%: training on %d pairs", pct, len(pairs))
        return _train_tslm_from(pairs, model.ae, cfg, model.config.variant, seed, epochs, cfg.batch, cfg.lr)[0]

    report = evaluate_run(model, test, sampling, denoiser, sweep=args.sweep, trainer=trainer)
    report.save_json(args.report)
    report.save_csv(Path(args.report).with_suffix(".csv"))
    if args.sweep:
        plot_sweep(report, Path(args.report).with_suffix(".png"))
    for row in report.rows:
        log.info("%s=%s R-1 %.2f R-2 %.2f R-L %.2f TSLMScore %.3f", row.axis, row.value, row.rouge1, row.rouge2, row.rougeL, row.tslm_score)
    return EXIT_OK


def cmd_score(args) -> int:
    model = _load_kind(args.denoiser, "denoiser")
    pairs = io.read_pairs(_existing(args.pairs))
    io.write_pairs(args.out, score_pairs(pairs, model))
    return EXIT_OK


# ----------------------------------------------------------------------
# parser
# ----------------------------------------------------------------------
def _threshold(text: str):
    if text == "auto":
        return text
    try:
        return float(text)
    except ValueError:
        raise argparse.ArgumentTypeError("threshold must be a number or 'auto'") from None


def build_parser() -> argparse.ArgumentParser:
    parser = Parser(prog="tslm", description="Time-series captioning pipeline.")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    parser.add_argument("-q", "--quiet", action="store_true", help="warnings only")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=Parser)

    def add(name, func, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="pipeline config JSON, or 'toy' for the bundled toy config")
        p.add_argument("--seed", type=int)
        p.set_defaults(func=func)
        return p

    p = add("make-synth", cmd_make_synth, "write synthetic groundtruth pairs")
    p.add_argument("--out", required=True)
    p.add_argument("--series", type=int, default=100)
    p.add_argument("--annotations", type=int, default=3)

    p = add("gen-data", cmd_gen_data, "generate pairs from demonstrations")
    p.add_argument("--demos", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--bootstrap", action="store_true")
    p.add_argument("--group-threshold", type=float, default=60.0)
    p.add_argument("--backend", choices=("template", "remote"), default="template")
    p.add_argument("--inject-noise", type=float, default=0.0, metavar="RATE")
    p.add_argument("--endpoint")
    p.add_argument("--model")

    p = add("train-ae", cmd_train_ae, "train the series autoencoder")
    p.add_argument("--data", nargs="+", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch", type=int)
    p.add_argument("--lr", type=float)

    p = add("train-denoiser", cmd_train_denoiser, "train the retrieval denoiser on groundtruth pairs")
    p.add_argument("--data", required=True)
    p.add_argument("--ae", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--batch", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)

    p = add("denoise", cmd_denoise, "score and filter generated pairs")
    p.add_argument("--data", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--threshold", type=_threshold)
    p.add_argument("--out", required=True)
    p.add_argument("--report", required=True)
    p.add_argument("--removed", help="also write the removed pairs here")

    p = add("train", cmd_train, "train the captioning model")
    p.add_argument("--data", nargs="+", required=True)
    p.add_argument("--ae", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--fraction", type=float, default=100.0, help="percent of generated pairs used")
    p.add_argument("--variant", choices=("joint", "text", "timeseries"), default="joint")

    def sampling_flags(p):
        p.add_argument("-k", type=int)
        p.add_argument("--top-k", type=int)
        p.add_argument("--top-p", type=float)
        p.add_argument("--temperature", type=float)

    p = add("caption", cmd_caption, "caption one series")
    p.add_argument("--model", required=True)
    p.add_argument("--ae")
    p.add_argument("--series", required=True, help="comma-separated values")
    p.add_argument("--summarize", choices=("remote", "fallback", "none"), default="fallback")
    sampling_flags(p)

    p = add("evaluate", cmd_evaluate, "ROUGE / TSLMScore report, optionally swept")
    p.add_argument("--model", required=True)
    p.add_argument("--ae")
    p.add_argument("--denoiser", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--sweep", choices=("temperature", "fraction"))
    p.add_argument("--report", required=True)
    p.add_argument("--data", nargs="+", help="training pairs for the fraction sweep")
    p.add_argument("--epochs", type=int)
    sampling_flags(p)

    p = add("score", cmd_score, "attach denoiser scores to pairs")
    p.add_argument("--denoiser", required=True)
    p.add_argument("--pairs", required=True)
    p.add_argument("--out", required=True)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", force=True)
    try:
        return args.func(args)
    except (UsageError, ParameterError) as exc:
        parser.print_usage(sys.stderr)
        print(f"tslm: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (TransportError, ProtocolError, GenerationError) as exc:
        print(f"tslm: transport error: {exc}", file=sys.stderr)
        return EXIT_TRANSPORT
    except (FormatError, ParseError, OSError) as exc:
        print(f"tslm: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericError, ContractError) as exc:
        print(f"tslm: training error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
