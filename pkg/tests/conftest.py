"""Shared fixtures: a tiny random model for unit tests and the seed-7 overfit model.

Acceptance tests record one line per criterion through ``criterion``; the lines are
printed together in the terminal summary.
"""

import time
from dataclasses import dataclass

import numpy as np
import pytest

from vqg.corpus import build_vocab
from vqg.model import VQGModel, fit_question_lm, init_params
from vqg.synth import SyntheticData, generate_synthetic
from vqg.training import TrainConfig, TrainResult, train

_CRITERIA: dict[int, str] = {}


@pytest.fixture(scope="session")
def criterion():
    def record(number: int, title: str, passed: bool, detail: str = "") -> str:
        line = f"criterion {number} [{'PASS' if passed else 'FAIL'}] {title}" + (f" -- {detail}" if detail else "")
        _CRITERIA[number] = line
        print(line)
        return line
    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for n in sorted(_CRITERIA):
            terminalreporter.write_line(_CRITERIA[n])


@pytest.fixture(scope="session")
def small_model() -> VQGModel:
    """Random (untrained) model with hidden size 8 over a handful of question words."""
    questions = [["what", "color", "is", "the", "car"], ["where", "is", "the", "dog"],
                 ["who", "is", "surfing"], ["how", "many", "cars", "are", "there"],
                 ["why", "is", "the", "man", "wet"], ["when", "is", "the", "road", "busy"]]
    vocab = build_vocab(questions + [["the", "car", "is", "red"]])
    gen, sel = init_params(len(vocab), 8, np.random.default_rng(11))
    lm = fit_question_lm([vocab.encode(q) for q in questions], len(vocab))
    return VQGModel(vocab, gen, sel, lm)


@dataclass
class OverfitRun:
    data: SyntheticData
    result: TrainResult
    seconds: float

    @property
    def train_records(self):
        held_out = {r.image_id for r in self.result.validation}
        return [(r, a) for r, a in zip(self.data.records, self.data.alignment) if r.image_id not in held_out]


@pytest.fixture(scope="session")
def overfit() -> OverfitRun:
    """Seed-7 synthetic set, 50 images, default training for 500 epochs (about two minutes)."""
    data = generate_synthetic(7, 50)
    t0 = time.perf_counter()
    result = train(data.records, TrainConfig(epochs=500))
    return OverfitRun(data, result, time.perf_counter() - t0)
