"""``mtlm`` command line: corpus, vocab, train, nbest, decode, rescore, eval, sweep.

Every subcommand accepts ``--config FILE`` with ``key = value`` lines (keys
are flag names with dashes or underscores); explicit flags override it.
Exit codes: 0 ok, 2 usage, 3 data error, 4 runtime error.  Log verbosity
follows ``MTLM_LOG`` (error, info, debug).
"""

from __future__ import annotations

import argparse
import csv
import io
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from mtlm import __version__
from mtlm.errors import ConfigurationError, DataError, MTLMError, ParseError

log = logging.getLogger("mtlm")

SEED_HELP = (
    "randomness: a single --seed feeds every component through fixed offsets - "
    "model init [seed, 0], batch shuffling [seed, 1], mask plans [seed, 2], dropout [seed, 3], "
    "synthetic AM seed = seed + 1000."
)


def _floats(s: str) -> tuple[float, ...]:
    return tuple(float(x) for x in s.split(","))


def _ints(s: str) -> tuple[int, ...]:
    return tuple(int(x) for x in s.split(","))


def _strs(s: str) -> tuple[str, ...]:
    return tuple(x.strip() for x in s.split(",") if x.strip())


def _bool(s) -> bool:
    if isinstance(s, bool):
        return s
    v = str(s).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"not a boolean: {s!r}")


def _write_text(path, text: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(text)


# ---------------------------------------------------------------------------
# shared flag groups

def _add_model_flags(p):
    g = p.add_argument_group("model")
    g.add_argument("--layers", type=int, default=2, help="transformer blocks")
    g.add_argument("--heads", type=int, default=2, help="attention heads per block")
    g.add_argument("--d-model", type=int, default=64, help="hidden size")
    g.add_argument("--d-ff", type=int, default=256, help="feed-forward size")
    g.add_argument("--max-len", type=int, default=64, help="longest sequence incl. <sos>/<eos>")
    g.add_argument("--dropout", type=float, default=0.0)
    g.add_argument("--activation", choices=("gelu", "relu"), default="gelu")
    g.add_argument("--norm", choices=("pre", "post"), default="pre")
    g.add_argument("--positional", choices=("learned", "sinusoidal"), default="learned")
    g.add_argument("--tie-embeddings", type=_bool, default=False)


def _add_beam_flags(p):
    p.add_argument("--beam", type=int, default=3, help="beam size")
    p.add_argument("--lambda", dest="lam", type=float, default=0.5, help="LM weight in shallow fusion")
    p.add_argument("--length-window", type=int, default=2,
                   help="completed lengths must lie within this distance of the CTC length estimate")
    p.add_argument("--guide-score", choices=("s2s", "mtlm+s2s"), default="s2s",
                   help="candidate-token selection: AM only, or AM + lambda * LM")


def _add_am_flags(p):
    p.add_argument("--refs", required=True, help="reference transcripts, one per line")
    p.add_argument("--eta", type=float, default=0.3, help="synthetic AM noise level")
    p.add_argument("--seed", type=int, default=0, help="base seed (AM seed = seed + 1000)")


def _add_lm_flags(p, required=True):
    p.add_argument("--checkpoint", required=required, help="LM checkpoint")
    p.add_argument("--vocab", required=True, help="vocabulary file")
    p.add_argument("--token-mode", choices=("char", "word"), default=None,
                   help="tokenization mode (default: the checkpoint's, else char)")


# ---------------------------------------------------------------------------
# loading helpers

def _load_lm(args):
    from mtlm.model import load_checkpoint
    from mtlm.tokenizer import Vocab

    ckpt = load_checkpoint(args.checkpoint) if getattr(args, "checkpoint", None) else None
    mode = args.token_mode or (ckpt.meta.get("mode") if ckpt else None) or "char"
    vocab = Vocab.load(args.vocab, mode)
    if ckpt is not None and ckpt.vocab_hash and ckpt.vocab_hash != vocab.fingerprint():
        raise ConfigurationError(f"vocabulary {args.vocab} does not match checkpoint {args.checkpoint}")
    if ckpt is not None and ckpt.params.config.vocab_size != len(vocab):
        raise ConfigurationError("checkpoint vocab_size differs from the vocabulary")
    return vocab, (ckpt.params if ckpt else None)


def _read_refs(path, vocab):
    from mtlm.tokenizer import encode, read_corpus

    refs = read_corpus(path)
    for r in refs:
        encode(vocab, r)  # OOV check up front
    return refs


# ---------------------------------------------------------------------------
# commands

def cmd_corpus(args):
    from mtlm.grammar import synthetic_corpus

    lines = synthetic_corpus(args.sentences, args.seed, args.max_words)
    _write_text(args.out, "".join(line + "\n" for line in lines))
    return 0


def cmd_vocab(args):
    from mtlm.tokenizer import build_vocab, read_corpus

    vocab = build_vocab(read_corpus(args.corpus), args.mode, args.max_size)
    vocab.save(args.out)
    log.info("vocab of %d tokens -> %s", len(vocab), args.out)
    return 0


def cmd_train(args):
    from mtlm.model import ModelConfig, save_checkpoint
    from mtlm.numerics import LrSchedule
    from mtlm.plotting import plot_loss_curve
    from mtlm.tokenizer import Vocab, build_vocab, read_corpus
    from mtlm.training import TrainConfig, train

    corpus = read_corpus(args.corpus)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if args.vocab:
        vocab = Vocab.load(args.vocab, args.mode)
    else:
        vocab = build_vocab(corpus, args.mode)
        vocab.save(out / "vocab.txt")
    mc = ModelConfig(
        vocab_size=len(vocab), n_layers=args.layers, n_heads=args.heads, d_model=args.d_model,
        d_ff=args.d_ff, max_len=args.max_len, dropout=args.dropout, activation=args.activation,
        norm=args.norm, positional=args.positional, tie_embeddings=args.tie_embeddings,
    )
    total = args.steps
    schedule = LrSchedule(args.warmup, args.peak_lr, args.min_lr, max(total, args.warmup + 1))
    tc = TrainConfig(
        total_steps=total, batch_size=args.batch_size, mask_rate=args.mask_rate, schedule=schedule,
        seed=args.seed, task_weights=args.task_weights, log_interval=args.log_interval,
        grad_clip=args.grad_clip, weight_decay=args.weight_decay,
        replace_masked_inputs=args.replace_masked_inputs,
    )
    result = train(corpus, vocab, mc, tc, log_file=out / "loss.tsv",
                   checkpoint_every=args.checkpoint_every, checkpoint_prefix=str(out / "model"))
    save_checkpoint(out / "model.ckpt", result.checkpoint)
    if result.log:
        plot_loss_curve(result.log, out / "loss.png")
    log.info("trained %d steps -> %s", total, out / "model.ckpt")
    return 0


def cmd_nbest(args):
    from mtlm.acoustic_sim import write_nbest
    from mtlm.pipeline import AM_SEED_OFFSET, build_ams, nbest_corpus
    from mtlm.tokenizer import Vocab

    vocab = Vocab.load(args.vocab, args.token_mode or "char")
    refs = _read_refs(args.refs, vocab)
    ams = build_ams(vocab, refs, args.eta, args.seed + AM_SEED_OFFSET)
    write_nbest(args.out, nbest_corpus(ams, args.n, args.beam, args.length_window), vocab)
    return 0


def cmd_decode(args):
    from mtlm.decoding import BeamConfig
    from mtlm.pipeline import AM_SEED_OFFSET, build_ams, decode_corpus, utt_id
    from mtlm.tokenizer import decode, escape_token

    vocab, params = _load_lm(args)
    if params is None and (args.lam > 0 or args.guide_score == "mtlm+s2s"):
        raise ConfigurationError("--checkpoint is required unless --lambda 0 with --guide-score s2s")
    refs = _read_refs(args.refs, vocab)
    ams = build_ams(vocab, refs, args.eta, args.seed + AM_SEED_OFFSET)
    cfg = BeamConfig(args.beam, args.lam, args.guide_score, args.length_window)
    results = decode_corpus(ams, params, cfg)
    _write_text(args.out, "".join(decode(vocab, r.best.ids) + "\n" for r in results))
    if args.scores:
        rows = ["utt\tam_score\tlm_score\tcombined\ttokens\n"]
        for k, r in enumerate(results):
            b = r.best
            toks = " ".join(escape_token(vocab.tokens[i]) for i in b.ids[1:-1])
            rows.append(f"{utt_id(k)}\t{b.am_score!r}\t{b.lm_score!r}\t{b.combined(args.lam)!r}\t{toks}\n")
        _write_text(args.scores, "".join(rows))
    if args.trace:
        lines = []
        for k, r in enumerate(results):
            for step, chosen in enumerate(r.trace, start=1):
                sets = " | ".join(",".join(str(t) for t in c) for c in chosen)
                lines.append(f"{utt_id(k)}\t{step}\t{sets}\n")
        _write_text(args.trace, "".join(lines))
    return 0


def cmd_rescore(args):
    from mtlm.acoustic_sim import read_nbest, write_nbest
    from mtlm.decoding import RescoreMode
    from mtlm.pipeline import rescore_corpus
    from mtlm.tokenizer import decode

    vocab, params = _load_lm(args)
    lists = read_nbest(args.nbest, vocab)
    mode = RescoreMode("unidirectional" if args.mode == "uni" else "bidirectional",
                       args.lambda_rescore, not args.exclude_eos)
    rescored = rescore_corpus(lists, params, mode)
    write_nbest(args.out, rescored, vocab)
    if args.text_out:
        _write_text(args.text_out, "".join(decode(vocab, nb.entries[0].ids) + "\n" for nb in rescored))
    return 0


def _parse_hyp_spec(spec: str):
    label, sep, path = spec.partition("=")
    return (label, path) if sep else (Path(spec).stem, spec)


def cmd_eval(args):
    from mtlm.evaluation import evaluate_corpus
    from mtlm.plotting import plot_error_types
    from mtlm.tokenizer import read_corpus

    refs = read_corpus(args.ref)
    labels, pair_lists = [], []
    for spec in args.hyp:
        label, path = _parse_hyp_spec(spec)
        text = Path(path).read_text(encoding="utf-8")
        hyps = text.split("\n")
        if hyps and hyps[-1] == "":
            hyps.pop()
        if len(hyps) != len(refs):
            raise DataError(f"{path}: {len(hyps)} hypotheses for {len(refs)} references")
        labels.append(label)
        pair_lists.append(list(zip(refs, hyps)))
    report = evaluate_corpus(pair_lists, labels, args.unit)
    prefix = Path(args.out)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    _write_text(f"{prefix}.tsv", report.to_tsv())
    _write_text(f"{prefix}.txt", report.to_text())
    plot_error_types(report, f"{prefix}.png")
    sys.stdout.write(report.to_text())
    return 0


def _sweep_worker(job):
    from mtlm.model import load_checkpoint
    from mtlm.pipeline import sweep_cell
    from mtlm.tokenizer import Vocab

    system, beam, vocab_path, mode, setup, ckpts = job
    vocab = Vocab.load(vocab_path, mode)
    models = {k: (load_checkpoint(p).params if p else None) for k, p in ckpts.items()}
    return sweep_cell(system, beam, vocab, setup, models)


def cmd_sweep(args):
    from mtlm.pipeline import AM_SEED_OFFSET, SYSTEMS, SweepSetup
    from mtlm.plotting import plot_beam_sweep
    from mtlm.tokenizer import Vocab, read_corpus

    unknown = [s for s in args.systems if s not in SYSTEMS]
    if unknown:
        raise ConfigurationError(f"unknown systems {unknown}; choose from {SYSTEMS}")
    ckpts = {"unilm": args.unilm, "mtlm": args.mtlm}
    for s in args.systems:
        lm = s.split("-")[0]
        if lm in ckpts and not ckpts[lm]:
            raise ConfigurationError(f"system {s} needs --{lm}")
    mode = args.token_mode or "char"
    vocab = Vocab.load(args.vocab, mode)
    refs = tuple(_read_refs(args.refs, vocab))
    setup = SweepSetup(refs, args.eta, args.seed + AM_SEED_OFFSET, args.lam, args.lambda_rescore,
                       args.length_window, args.guide_score, args.unit)
    jobs = [(s, b, args.vocab, mode, setup, ckpts) for b in args.beams for s in args.systems]
    if args.workers > 1:
        with ProcessPoolExecutor(args.workers) as pool:
            rows = list(pool.map(_sweep_worker, jobs))
    else:
        rows = [_sweep_worker(j) for j in jobs]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["beam", "system", "wer"])
    for beam, system, wer in rows:
        w.writerow([beam, system, f"{wer:.4f}"])
    _write_text(args.out, buf.getvalue())
    plot_beam_sweep(rows, str(Path(args.out).with_suffix(".png")))
    return 0


# ---------------------------------------------------------------------------
# parser

def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    parser = argparse.ArgumentParser(prog="mtlm", description=__doc__.split("\n")[0], epilog=SEED_HELP,
                                     formatter_class=fmt)
    parser.add_argument("--version", action="version", version=f"mtlm {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, help_):
        p = sub.add_parser(name, help=help_, description=help_, epilog=SEED_HELP, formatter_class=fmt)
        p.add_argument("--config", help="key = value file; flags override it")
        p.set_defaults(func=fn)
        return p

    p = add("corpus", cmd_corpus, "write a synthetic regular-grammar corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--sentences", type=int, default=500)
    p.add_argument("--max-words", type=int, default=12)
    p.add_argument("--seed", type=int, default=0)

    p = add("vocab", cmd_vocab, "build a vocabulary file from a corpus")
    p.add_argument("--corpus", required=True)
    p.add_argument("--mode", choices=("char", "word"), default="char")
    p.add_argument("--max-size", type=int, default=1 << 30)
    p.add_argument("--out", required=True)

    p = add("train", cmd_train, "train the multi-task LM (use --task-weights 1,0,0 for the ULM-only baseline)")
    p.add_argument("--corpus", required=True)
    p.add_argument("--vocab", help="existing vocab file (built from the corpus when omitted)")
    p.add_argument("--mode", choices=("char", "word"), default="char")
    p.add_argument("--out-dir", default="run", help="checkpoint, vocab, loss log and figure go here")
    p.add_argument("--steps", type=int, default=2000)
    p.add_argument("--batch-size", type=int, default=8)
    p.add_argument("--mask-rate", type=float, default=0.3)
    p.add_argument("--task-weights", type=_floats, default=(1.0, 1.0, 1.0), help="ULM,UMLM,BMLM weights")
    p.add_argument("--warmup", type=int, default=100)
    p.add_argument("--peak-lr", type=float, default=3e-3)
    p.add_argument("--min-lr", type=float, default=1e-5)
    p.add_argument("--grad-clip", type=float, default=None)
    p.add_argument("--weight-decay", type=float, default=0.0)
    p.add_argument("--replace-masked-inputs", type=_bool, default=True,
                   help="feed <mask> at masked positions in addition to blocking their attention columns")
    p.add_argument("--log-interval", type=int, default=10)
    p.add_argument("--checkpoint-every", type=int, default=0, help="0 disables periodic checkpoints")
    p.add_argument("--seed", type=int, default=0)
    _add_model_flags(p)

    p = add("nbest", cmd_nbest, "AM-only n-best lists from the synthetic channel")
    _add_am_flags(p)
    p.add_argument("--vocab", required=True)
    p.add_argument("--token-mode", choices=("char", "word"), default=None)
    p.add_argument("--n", type=int, default=8)
    p.add_argument("--beam", type=int, default=8)
    p.add_argument("--length-window", type=int, default=2)
    p.add_argument("--out", required=True)

    p = add("decode", cmd_decode, "shallow-fusion decoding against the synthetic AM")
    _add_am_flags(p)
    _add_lm_flags(p, required=False)
    _add_beam_flags(p)
    p.add_argument("--out", required=True, help="1-best transcripts, one per line")
    p.add_argument("--scores", help="optional per-utterance score TSV")
    p.add_argument("--trace", help="optional candidate-selection trace")

    p = add("rescore", cmd_rescore, "rescore an n-best file with the LM")
    p.add_argument("--nbest", required=True)
    _add_lm_flags(p)
    p.add_argument("--mode", choices=("uni", "bi"), default="uni",
                   help="uni: one causal pass; bi: one single-mask pass per position")
    p.add_argument("--lambda-rescore", type=float, default=0.5)
    p.add_argument("--exclude-eos", type=_bool, default=False, help="drop the <eos> term in bi mode")
    p.add_argument("--out", required=True)
    p.add_argument("--text-out", help="optional 1-best transcripts after rescoring")

    p = add("eval", cmd_eval, "WER and error-type report by utterance length")
    p.add_argument("--ref", required=True)
    p.add_argument("--hyp", action="append", required=True, help="LABEL=PATH (repeatable)")
    p.add_argument("--unit", choices=("word", "char"), default="word")
    p.add_argument("--out", required=True, help="prefix for .tsv / .txt / .png")

    p = add("sweep", cmd_sweep, "WER over beam sizes and systems (CSV + figure)")
    _add_am_flags(p)
    p.add_argument("--vocab", required=True)
    p.add_argument("--token-mode", choices=("char", "word"), default=None)
    p.add_argument("--unilm", help="ULM-only checkpoint")
    p.add_argument("--mtlm", help="multi-task checkpoint")
    p.add_argument("--beams", type=_ints, default=(1, 2, 4, 8))
    p.add_argument("--systems", type=_strs, default=("am", "unilm-fusion", "mtlm-fusion", "mtlm-rescore-uni"))
    p.add_argument("--lambda", dest="lam", type=float, default=0.5)
    p.add_argument("--lambda-rescore", type=float, default=0.5)
    p.add_argument("--length-window", type=int, default=2)
    p.add_argument("--guide-score", choices=("s2s", "mtlm+s2s"), default="s2s")
    p.add_argument("--unit", choices=("word", "char"), default="word")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", required=True, help="CSV path; the figure goes next to it as .png")
    return parser


def _apply_config(parser: argparse.ArgumentParser, argv: list[str]) -> None:
    """Load ``--config`` into the chosen subparser's defaults before the real parse."""
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("command", nargs="?")
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if not known.config or not known.command:
        return
    subparsers = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
    sp = subparsers.choices.get(known.command)
    if sp is None:
        return
    by_dest = {}
    for action in sp._actions:
        by_dest[action.dest] = action
        for opt in action.option_strings:
            by_dest[opt.lstrip("-").replace("-", "_")] = action
    values = {}
    text = Path(known.config).read_text(encoding="utf-8")
    for lineno, raw in enumerate(text.split("\n"), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, val = line.partition("=")
        if not sep:
            raise ParseError(f"{known.config}: expected key = value", line=lineno)
        key = key.strip().replace("-", "_")
        action = by_dest.get(key)
        if action is None:
            raise ConfigurationError(f"{known.config}:{lineno}: unknown key {key!r}")
        val = val.strip()
        if action.nargs == 0 or action.type is None:
            conv = val
        else:
            conv = action.type(val)
        if action.choices is not None and conv not in action.choices:
            raise ConfigurationError(f"{known.config}:{lineno}: {key} must be one of {list(action.choices)}")
        values[action.dest] = conv
        action.required = False
    sp.set_defaults(**values)


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    level = os.environ.get("MTLM_LOG", "error").upper()
    logging.basicConfig(level=getattr(logging, level, logging.ERROR), format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        _apply_config(parser, argv)
        args = parser.parse_args(argv)
        return args.func(args)
    except DataError as exc:
        print(f"mtlm: data error: {exc}", file=sys.stderr)
        return 3
    except (OSError, MTLMError, ValueError) as exc:
        print(f"mtlm: error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
