"""Versioned JSON checkpoints: vocabulary, named float64 tensors, bigram counts, config.

Tensor payloads are base64 of little-endian float64 bytes, so values round-trip exactly
and save -> load -> save reproduces the same file byte for byte.
"""

from __future__ import annotations

import base64
import json
from collections import Counter
from pathlib import Path

import numpy as np

from . import __version__
from .corpus import RESERVED, Vocabulary
from .model import GeneratorParams, SelectorParams, VQGModel
from .ngram import KneserNeyModel, stats_from_counts
from .numerics import AdamState, LstmParams, Tensor
from .training import TrainResult

FORMAT = "vqg-checkpoint"
VERSION = 1


class CheckpointError(ValueError):
    pass


def _pack(name: str, array: np.ndarray) -> dict:
    data = np.ascontiguousarray(array, dtype="<f8")
    return {"name": name, "shape": list(array.shape), "data": base64.b64encode(data.tobytes()).decode("ascii")}


def _unpack(entry: dict) -> np.ndarray:
    raw = base64.b64decode(entry["data"])
    arr = np.frombuffer(raw, dtype="<f8").astype(np.float64)
    shape = tuple(entry["shape"])
    if arr.size != int(np.prod(shape)):
        raise CheckpointError(f"tensor {entry['name']!r}: {arr.size} values do not fill shape {shape}")
    return arr.reshape(shape)


def to_dict(result: TrainResult, config: dict) -> dict:
    model = result.model
    stats = model.lm.stats
    doc = {
        "format": FORMAT,
        "version": VERSION,
        "tool_version": __version__,
        "config": config,
        "vocab": model.vocab.itos,
        "lm": {
            "discount": stats.discount,
            "bigrams": sorted([int(v), int(w), int(c)] for (v, w), c in stats.bigrams.items()),
        },
        "tensors": [_pack(name, t.data) for name, t in sorted(model.parameters().items())],
        "epoch": result.epoch,
        "losses": [h["mean_loss"] for h in result.history],
        "beta": result.beta,
        "optimizer": {
            "step": result.adam.step,
            "first": [_pack(n, a) for n, a in sorted(result.adam.first.items())],
            "second": [_pack(n, a) for n, a in sorted(result.adam.second.items())],
        },
    }
    return doc


def dumps(result: TrainResult, config: dict) -> str:
    return json.dumps(to_dict(result, config), sort_keys=True, separators=(",", ":")) + "\n"


def save(path: str | Path, result: TrainResult, config: dict):
    Path(path).write_text(dumps(result, config), encoding="utf-8")


def from_dict(doc: dict) -> tuple[TrainResult, dict]:
    if doc.get("format") != FORMAT:
        raise CheckpointError("not a vqg checkpoint")
    if doc.get("version") != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {doc.get('version')}")
    itos = doc["vocab"]
    if tuple(itos[:len(RESERVED)]) != RESERVED:
        raise CheckpointError("checkpoint vocabulary lacks the reserved tokens")
    vocab = Vocabulary(itos[len(RESERVED):])
    arrays = {e["name"]: _unpack(e) for e in doc["tensors"]}

    def t(name):
        try:
            return Tensor(arrays[name], True, name)
        except KeyError:
            raise CheckpointError(f"checkpoint is missing tensor {name!r}") from None

    E = t("embedding")
    gen = GeneratorParams(E, LstmParams(t("encoder.weight"), t("encoder.bias")), t("corr.weight"),
                          t("corr.bias"), t("corr.slope"), LstmParams(t("decoder.weight"), t("decoder.bias")),
                          t("out.weight"), t("out.bias"))
    sel = SelectorParams(E, LstmParams(t("selector.weight"), t("selector.bias")),
                         t("selector.out.weight"), t("selector.out.bias"))
    lm_doc = doc["lm"]
    stats = stats_from_counts(Counter({(v, w): c for v, w, c in lm_doc["bigrams"]}), lm_doc["discount"])
    lm = KneserNeyModel(stats, vocabulary=list(range(len(vocab))))
    opt = doc.get("optimizer") or {}
    adam = AdamState(opt.get("step", 0),
                     {e["name"]: _unpack(e) for e in opt.get("first", [])},
                     {e["name"]: _unpack(e) for e in opt.get("second", [])})
    history = [{"epoch": i + 1, "mean_loss": v} for i, v in enumerate(doc.get("losses", []))]
    result = TrainResult(VQGModel(vocab, gen, sel, lm), adam, doc.get("epoch", 0), history, doc.get("beta"))
    return result, doc.get("config", {})


def load(path: str | Path) -> tuple[TrainResult, dict]:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"{path}: not valid JSON ({exc.msg})") from None
    return from_dict(doc)
