"""Command-line entry point: ``vqg synth | train | generate | eval | stats``.

Exit codes: 0 success, 1 usage error, 2 data/schema error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import functools
import json
import logging
import sys
from collections import defaultdict
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__, checkpoint
from .config import ConfigError, RunConfig, parse_assignments, resolve
from .corpus import (DatasetError, Vocabulary, load_dataset, load_embeddings, parse_record, tokenize,
                     write_dataset)
from .metrics import (METRIC_NAMES, coverage_image, entropy, length_distribution, metric_suite,
                      pr_table, precision_image, type_distribution)
from .model import DecodeConfig, VQGModel, generate, record_ids
from .numerics import NumericError
from .streams import substream
from .synth import generate_synthetic_dataset
from .training import train

log = logging.getLogger("vqg")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# -- helpers ----------------------------------------------------------------


def _overrides(args) -> dict:
    out = {}
    for item in args.set or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
        out[key.strip()] = value
    for key in ("seed", "workers"):
        if getattr(args, key, None) is not None:
            out[key] = getattr(args, key)
    return out


def _meta(config: RunConfig, **extra) -> dict:
    return {"tool_version": __version__, "config": config.to_dict(), **extra}


def _pmap(fn, items: list, workers: int) -> list:
    """Map in input order, optionally over a process pool."""
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, items, chunksize=max(1, len(items) // (4 * workers))))


def _read_jsonl(path: str | Path) -> list[dict]:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rows.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise DatasetError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from None
    return rows


GENERATED_FIELDS = ("image_id", "question", "type", "caption_index", "score")


def load_generated(path: str | Path) -> tuple[dict, dict[str, list[dict]]]:
    """(meta, image_id -> generated records in file order)."""
    meta, by_image = {}, defaultdict(list)
    for i, row in enumerate(_read_jsonl(path), 1):
        if set(row) == {"meta"}:
            meta = row["meta"]
            continue
        missing = [f for f in GENERATED_FIELDS if f not in row]
        if missing:
            raise DatasetError(f"{path}: record {i}: missing field(s) {', '.join(missing)}")
        by_image[row["image_id"]].append(row)
    return meta, dict(by_image)


# -- commands ---------------------------------------------------------------


def cmd_synth(args) -> int:
    if args.n_images < 1:
        raise UsageError("--n-images must be >= 1")
    config = resolve(path=args.config, overrides=_overrides(args))
    records = generate_synthetic_dataset(config.seed, args.n_images)
    write_dataset(records, args.out, meta=_meta(config, n_images=args.n_images))
    log.info("wrote %d synthetic images to %s", len(records), args.out)
    return EXIT_OK


def cmd_train(args) -> int:
    resume, base = None, None
    if args.resume:
        resume, base = checkpoint.load(args.resume)
    config = resolve(base=base, path=args.config, overrides=_overrides(args))
    records = load_dataset(args.data)
    if not records:
        raise DatasetError(f"{args.data}: no records")
    log_path = args.log or f"{args.out}.log.jsonl"
    result = train(records, config.train_config(), log_path=log_path, resume=resume)
    checkpoint.save(args.out, result, config.to_dict())
    if result.history:
        log.info("final mean loss %.6f after %d epochs", result.history[-1]["mean_loss"], result.epoch)
    return EXIT_OK


def _generate_image(record, model: VQGModel, decode_cfg: DecodeConfig, n: int, seed: int,
                    type_mode: str) -> list[dict]:
    if not record.captions:
        return []
    caps, confs, _ = record_ids(model.vocab, record)
    rng = substream(seed, "sampling", record.image_id)
    out = generate(model, record.feature, caps, confs, n, decode_cfg, rng, type_mode)
    return [{"image_id": record.image_id, "question": " ".join(model.vocab.decode(g.tokens)),
             "type": g.qtype.keyword, "caption_index": g.caption_index, "score": g.score} for g in out]


def cmd_generate(args) -> int:
    if args.n < 1:
        raise UsageError("--n must be >= 1")
    result, stored = checkpoint.load(args.checkpoint)
    overrides = _overrides(args)
    config = resolve(base=stored, path=args.config, overrides=overrides)
    explicit_beta = "beta" in overrides or (args.config and "beta" in _file_keys(args.config))
    beta = config.beta if explicit_beta or result.beta is None else result.beta
    records = load_dataset(args.data)
    fn = functools.partial(_generate_image, model=result.model, decode_cfg=config.decode_config(beta),
                           n=args.n, seed=config.seed, type_mode=config.type_mode)
    per_image = _pmap(fn, records, config.workers)
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write(json.dumps({"meta": _meta(config, beta=beta, n_questions=args.n)}, sort_keys=True) + "\n")
        for rows in per_image:
            for row in rows:
                fh.write(json.dumps(row, sort_keys=True) + "\n")
    log.info("wrote %d questions for %d images to %s", sum(map(len, per_image)), len(records), args.out)
    return EXIT_OK


def _file_keys(path) -> set[str]:
    return set(parse_assignments(Path(path).read_text(encoding="utf-8").splitlines(), str(path)))


def _eval_image(item, metrics) -> dict:
    image_id, generated, references = item
    scores = {name: {"precision": precision_image(generated, references, m),
                     "coverage": coverage_image(generated, references, m)} for name, m in metrics.items()}
    return {"image_id": image_id, "n": len(generated), "scores": scores}


def _pretrained_vectors(path: str, words: list[str]) -> dict[str, np.ndarray]:
    vocab = Vocabulary(sorted(set(words)))
    emb = load_embeddings(path, vocab, np.random.default_rng(0))
    return {w: emb.vectors[:, i] for w, i in vocab.stoi.items() if emb.pretrained[i]}


def cmd_eval(args) -> int:
    config = resolve(path=args.config, overrides=_overrides(args))
    _, by_image = load_generated(args.generated)
    references = [r for r in load_dataset(args.reference) if r.questions]
    if not references:
        raise DatasetError(f"{args.reference}: no image has reference questions")
    gen_lists = [[tokenize(g["question"]) for g in by_image.get(r.image_id, [])] for r in references]
    ref_lists = [[q.words for q in r.questions] for r in references]
    embeddings = None
    if config.embeddings_path:
        words = [w for qs in gen_lists + ref_lists for q in qs for w in q]
        embeddings = _pretrained_vectors(config.embeddings_path, words)
    metrics = metric_suite(embeddings)
    max_n = args.max_n or max([len(g) for g in gen_lists] + [1])
    if max_n < 1:
        raise UsageError("--max-n must be >= 1")

    items = [(r.image_id, g, refs) for r, g, refs in zip(references, gen_lists, ref_lists)]
    per_image = _pmap(functools.partial(_eval_image, metrics=metrics), items, config.workers)
    rows = pr_table(gen_lists, ref_lists, metrics, max_n)

    prefix = Path(args.out)
    meta = _meta(config, generated=str(args.generated), reference=str(args.reference), max_n=max_n)
    with open(prefix.with_suffix(".jsonl"), "w", encoding="utf-8") as fh:
        fh.write(json.dumps({"meta": meta}, sort_keys=True) + "\n")
        for entry in per_image:
            fh.write(json.dumps(entry, sort_keys=True) + "\n")
        corpus = {name: {o: float(np.mean([e["scores"][name][o] for e in per_image]))
                         for o in ("precision", "coverage")} for name in METRIC_NAMES}
        fh.write(json.dumps({"corpus": corpus}, sort_keys=True) + "\n")
    with open(prefix.with_suffix(".tsv"), "w", encoding="utf-8") as fh:
        fh.write(f"# {json.dumps(meta, sort_keys=True)}\n")
        fh.write("metric\torientation\tn\tvalue\n")
        for row in rows:
            fh.write(f"{row.metric}\t{row.orientation}\t{row.n}\t{row.value:.6f}\n")
    for row in rows:
        if row.n == max_n:
            print(f"{row.metric:8s} {row.orientation:9s} n={row.n} {row.value:.4f}")
    return EXIT_OK


def _questions_in(path) -> list[list[str]]:
    questions = []
    for i, row in enumerate(_read_jsonl(path), 1):
        if set(row) == {"meta"}:
            continue
        if "question" in row:
            questions.append(tokenize(str(row["question"])))
        elif "questions" in row:
            questions.extend(q.words for q in parse_record(row, i).questions)
        else:
            raise DatasetError(f"{path}: record {i}: neither a generated question nor an image record")
    return questions


def question_stats(questions: list[list[str]]) -> dict:
    types = type_distribution(questions)
    return {
        "n_questions": len(questions),
        "types": {t.value: p for t, p in types.items()},
        "lengths": {str(k): v for k, v in length_distribution(questions).items()},
        "type_entropy": entropy(types),
    }


def cmd_stats(args) -> int:
    config = resolve(path=args.config, overrides=_overrides(args))
    stats = question_stats(_questions_in(args.path))
    text = json.dumps({"meta": _meta(config, source=str(args.path)), **stats}, sort_keys=True, indent=2)
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
    print(text)
    return EXIT_OK


# -- parser -----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="vqg", description="Grounded visual question generation toolkit.")
    parser.add_argument("--version", action="version", version=f"vqg {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, out_required=True):
        p.add_argument("--config", help="flat 'key = value' config file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")
        p.add_argument("--seed", type=int)
        p.add_argument("--workers", type=int)
        p.add_argument("--out", required=out_required)

    p = sub.add_parser("synth", help="write a synthetic dataset")
    p.add_argument("--n-images", type=int, required=True)
    common(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a model and write a checkpoint")
    p.add_argument("data")
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--log", help="per-epoch JSONL log (default: <out>.log.jsonl)")
    common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("generate", help="generate questions for every image in a dataset")
    p.add_argument("checkpoint")
    p.add_argument("data")
    p.add_argument("--n", type=int, default=3, help="questions per image")
    common(p)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("eval", help="score generated questions against references")
    p.add_argument("generated")
    p.add_argument("reference")
    p.add_argument("--max-n", type=int, help="largest top-n prefix in the table")
    common(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("stats", help="question type and length histograms")
    p.add_argument("path")
    common(p, out_required=False)
    p.set_defaults(func=cmd_stats)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"vqg: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericError as exc:
        print(f"vqg: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DatasetError, checkpoint.CheckpointError, OSError, ValueError, KeyError) as exc:
        print(f"vqg: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
