"""Question vocabulary and answer-class maps."""

import re
from dataclasses import dataclass, field
from collections import Counter

from .records import VqaSample, normalize_answer

PAD_TOKEN = "<pad>"
UNK_TOKEN = "<unk>"

_TOKEN = re.compile(r"[a-z0-9]+(?:'[a-z0-9]+)?")


def tokenize(text: str) -> list[str]:
    """Lowercased word tokens; punctuation and whitespace act as separators."""
    return _TOKEN.findall(text.lower())


@dataclass
class Vocabulary:
    """Token <-> id map with PAD=0 and UNK special entries, ids contiguous."""

    token_to_id: dict[str, int]
    id_to_token: dict[int, str]

    @property
    def pad_id(self) -> int:
        return self.token_to_id[PAD_TOKEN]

    @property
    def unk_id(self) -> int:
        return self.token_to_id[UNK_TOKEN]

    def __len__(self) -> int:
        return len(self.token_to_id)

    def encode(self, text: str) -> list[int]:
        unk = self.unk_id
        return [self.token_to_id.get(tok, unk) for tok in tokenize(text)]

    def decode(self, ids: list[int]) -> list[str]:
        return [self.id_to_token[i] for i in ids]

    def to_json(self) -> dict:
        return {"tokens": [self.id_to_token[i] for i in range(len(self.id_to_token))]}

    @classmethod
    def from_json(cls, payload: dict) -> "Vocabulary":
        tokens = payload["tokens"]
        t2i = {t: i for i, t in enumerate(tokens)}
        return cls(token_to_id=t2i, id_to_token=dict(enumerate(tokens)))


def build_vocabulary(samples: list[VqaSample], min_freq: int = 1) -> Vocabulary:
    """Vocabulary over question tokens with frequency >= min_freq.

    PAD gets id 0 and UNK id 1; remaining ids are assigned by descending
    frequency, ties broken lexicographically, so builds are deterministic.
    """
    if not samples:
        raise ValueError("cannot build a vocabulary from an empty corpus")
    counts = Counter(tok for s in samples for tok in tokenize(s.question))
    kept = sorted(
        (tok for tok, c in counts.items() if c >= min_freq),
        key=lambda tok: (-counts[tok], tok),
    )
    tokens = [PAD_TOKEN, UNK_TOKEN] + kept
    t2i = {t: i for i, t in enumerate(tokens)}
    return Vocabulary(token_to_id=t2i, id_to_token=dict(enumerate(tokens)))


@dataclass
class AnswerClassMap:
    """Bijective normalized-answer <-> class-id map, classes contiguous from 0."""

    answer_to_class: dict[str, int]
    class_to_answer: dict[int, str]
    class_frequency: dict[int, int]

    @property
    def n_classes(self) -> int:
        return len(self.answer_to_class)

    def class_of(self, raw_answer: str, synonyms: dict[str, str] | None = None) -> int | None:
        """Class id for a raw answer, or None if outside the map."""
        return self.answer_to_class.get(normalize_answer(raw_answer, synonyms))

    def to_json(self) -> dict:
        answers = [self.class_to_answer[i] for i in range(self.n_classes)]
        freqs = [self.class_frequency[i] for i in range(self.n_classes)]
        return {"answers": answers, "frequencies": freqs}

    @classmethod
    def from_json(cls, payload: dict) -> "AnswerClassMap":
        answers = payload["answers"]
        freqs = payload["frequencies"]
        return cls(
            answer_to_class={a: i for i, a in enumerate(answers)},
            class_to_answer=dict(enumerate(answers)),
            class_frequency=dict(enumerate(freqs)),
        )


def build_answer_classes(
    samples: list[VqaSample], synonyms: dict[str, str] | None = None
) -> AnswerClassMap:
    """Class ids for distinct normalized answers, ordered by descending
    frequency then lexicographically."""
    if not samples:
        raise ValueError("cannot build answer classes from an empty corpus")
    counts = Counter(normalize_answer(s.answer, synonyms) for s in samples)
    ordered = sorted(counts, key=lambda a: (-counts[a], a))
    a2c = {a: i for i, a in enumerate(ordered)}
    return AnswerClassMap(
        answer_to_class=a2c,
        class_to_answer={i: a for a, i in a2c.items()},
        class_frequency={a2c[a]: counts[a] for a in ordered},
    )


def answer_category_map(
    samples: list[VqaSample], synonyms: dict[str, str] | None = None
) -> dict[str, str]:
    """Owning category per normalized answer.

    An answer appearing under several categories is assigned to the category
    that uses it most often (ties broken by category name).
    """
    counts: Counter = Counter()
    for s in samples:
        counts[(normalize_answer(s.answer, synonyms), s.category)] += 1
    owners: dict[str, tuple[int, str]] = {}
    for (answer, category), n in counts.items():
        best = owners.get(answer)
        if best is None or (n, _neg(category)) > (best[0], _neg(best[1])):
            owners[answer] = (n, category)
    return {answer: cat for answer, (_, cat) in owners.items()}


def _neg(s: str):
    # Invert lexicographic order so max() picks the alphabetically first name on ties.
    return tuple(-ord(c) for c in s)
