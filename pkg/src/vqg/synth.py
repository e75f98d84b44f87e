"""Deterministic toy image/caption/question data.

Each synthetic image is a handful of facts ("the car is red", "a man is surfing").
Every fact yields one caption and one templated question whose type is fixed by the
fact kind, so the caption that grounds each question is known.
"""

from __future__ import annotations

import hashlib
import string
from dataclasses import dataclass, field

import numpy as np

from .corpus import FEATURE_DIM, Caption, ImageRecord, QuestionType, make_question, tokenize


@dataclass(frozen=True)
class FactTemplate:
    qtype: QuestionType
    caption: str
    question: str

    def slots(self) -> list[str]:
        names = [f for _, f, _, _ in string.Formatter().parse(self.caption) if f]
        return list(dict.fromkeys(names))


@dataclass
class TemplateBank:
    slots: dict[str, list[str]]
    facts: list[FactTemplate]
    facts_per_image: int = 4
    questions_per_image: int = 3

    def __post_init__(self):
        if not self.facts:
            raise ValueError("template bank has no fact templates")
        if not 1 <= self.questions_per_image <= self.facts_per_image <= len(self.facts):
            raise ValueError("need 1 <= questions_per_image <= facts_per_image <= number of fact templates")


DEFAULT_BANK = TemplateBank(
    slots={
        "object": ["car", "bus", "dog", "cat", "bike", "kite", "boat", "horse"],
        "color": ["red", "blue", "green", "white", "black", "brown"],
        "place": ["street", "grass", "beach", "road", "table"],
        "person": ["man", "woman", "boy", "girl"],
        "activity": ["surfing", "running", "eating", "skating", "reading"],
        "time": ["night", "noon", "dawn"],
        "mood": ["wet", "tired", "happy"],
        "cause": ["rain", "work", "play"],
        "number": ["two", "three", "four"],
    },
    facts=[
        FactTemplate(QuestionType.WHAT, "the {object} is {color}", "what color is the {object}"),
        FactTemplate(QuestionType.WHERE, "the {object} is on the {place}", "where is the {object}"),
        FactTemplate(QuestionType.WHO, "a {person} is {activity}", "who is {activity}"),
        FactTemplate(QuestionType.WHEN, "the {place} is busy at {time}", "when is the {place} busy"),
        FactTemplate(QuestionType.WHY, "the {person} is {mood} from {cause}", "why is the {person} {mood}"),
        FactTemplate(QuestionType.HOW, "{number} {object}s are parked", "how many {object}s are there"),
    ],
)


def attribute_vector(attribute: str) -> np.ndarray:
    """Fixed pseudo-random N(0, 1) vector keyed by a stable hash of the attribute name."""
    digest = hashlib.sha256(attribute.encode("utf-8")).digest()
    rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
    return rng.standard_normal(FEATURE_DIM)


def bag_of_attributes(attributes: list[str]) -> np.ndarray:
    vec = np.zeros(FEATURE_DIM)
    for a in attributes:
        vec += attribute_vector(a)
    norm = np.linalg.norm(vec)
    return vec / norm if norm > 0 else vec


@dataclass
class SyntheticData:
    records: list[ImageRecord]
    # alignment[i][j]: caption index that grounds question j of record i
    alignment: list[list[int]] = field(default_factory=list)


def generate_synthetic(seed: int, n_images: int, bank: TemplateBank = DEFAULT_BANK) -> SyntheticData:
    if n_images < 1:
        raise ValueError("n_images must be >= 1")
    if not bank.facts:
        raise ValueError("template bank has no fact templates")
    rng = np.random.default_rng(seed)
    records, alignment = [], []
    for i in range(n_images):
        kinds = rng.choice(len(bank.facts), size=bank.facts_per_image, replace=False)
        pools = {name: list(rng.permutation(len(values))) for name, values in bank.slots.items()}
        facts = []
        attributes = []
        for k in kinds:
            tmpl = bank.facts[int(k)]
            fill = {}
            for slot in tmpl.slots():
                if not pools[slot]:
                    raise ValueError(f"slot {slot!r} has too few values for {bank.facts_per_image} facts per image")
                fill[slot] = bank.slots[slot][int(pools[slot].pop())]
                attributes.append(f"{slot}={fill[slot]}")
            facts.append((tmpl, fill))
        order = rng.permutation(len(facts))
        captions = []
        for j in order:
            tmpl, fill = facts[int(j)]
            captions.append(Caption(tokenize(tmpl.caption.format(**fill)), float(rng.normal(0.0, 1.0))))
        position = {int(j): pos for pos, j in enumerate(order)}
        asked = sorted(rng.choice(len(facts), size=bank.questions_per_image, replace=False))
        questions, aligned = [], []
        for j in asked:
            tmpl, fill = facts[int(j)]
            questions.append(make_question(tmpl.question.format(**fill)))
            aligned.append(position[int(j)])
        feature = bag_of_attributes(sorted(attributes))
        records.append(ImageRecord(f"syn{seed}-{i:05d}", feature, captions, questions))
        alignment.append(aligned)
    return SyntheticData(records, alignment)


def generate_synthetic_dataset(seed: int, n_images: int, bank: TemplateBank = DEFAULT_BANK) -> list[ImageRecord]:
    return generate_synthetic(seed, n_images, bank).records
