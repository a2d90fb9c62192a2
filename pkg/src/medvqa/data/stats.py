"""Dataset statistics: question prefix structure and answer-length histogram."""

from dataclasses import dataclass, field

from .records import VqaSample
from .vocab import tokenize

OTHER_BUCKET = "<other>"


@dataclass
class PrefixNode:
    """One word in the question-prefix tree with its fraction of all questions."""

    word: str
    fraction: float
    children: list["PrefixNode"] = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "word": self.word,
            "fraction": self.fraction,
            "children": [c.to_json() for c in self.children],
        }


@dataclass
class PrefixTree:
    """Distribution of the first ``depth`` words over all questions.

    Children whose fraction falls below ``prune`` are collapsed into a single
    ``<other>`` sibling carrying their combined mass, mirroring the convention
    of hiding next words that make up less than 2% of questions.
    """

    depth: int
    prune: float
    n_questions: int
    roots: list[PrefixNode]

    def to_json(self) -> dict:
        return {
            "depth": self.depth,
            "prune": self.prune,
            "n_questions": self.n_questions,
            "roots": [r.to_json() for r in self.roots],
        }


def question_prefix_distribution(
    samples: list[VqaSample], depth: int = 4, prune: float = 0.02
) -> PrefixTree:
    """Prefix tree of the first ``depth`` question words with pruning."""
    if depth < 1:
        raise ValueError("depth must be >= 1")
    questions = [tokenize(s.question) for s in samples]
    total = len(questions)

    def build(group: list[list[str]], level: int) -> list[PrefixNode]:
        if level >= depth or total == 0:
            return []
        buckets: dict[str, list[list[str]]] = {}
        for toks in group:
            if len(toks) > level:
                buckets.setdefault(toks[level], []).append(toks)
        nodes = []
        other_mass = 0.0
        for word in sorted(buckets, key=lambda w: (-len(buckets[w]), w)):
            frac = len(buckets[word]) / total
            if frac < prune:
                other_mass += frac
            else:
                nodes.append(PrefixNode(word, frac, build(buckets[word], level + 1)))
        if other_mass > 0.0:
            nodes.append(PrefixNode(OTHER_BUCKET, other_mass))
        return nodes

    return PrefixTree(depth=depth, prune=prune, n_questions=total, roots=build(questions, 0))


def answer_length_stats(samples: list[VqaSample]) -> dict:
    """Histogram of answer word counts plus headline cumulative fractions.

    Returns ``{"histogram": {length: fraction}, "counts": {length: n},
    "frac_one_word": f, "frac_one_to_three_words": f}``. An empty answer
    string counts in the length-0 bucket.
    """
    counts: dict[int, int] = {}
    for s in samples:
        n = len(s.answer.split())
        counts[n] = counts.get(n, 0) + 1
    total = sum(counts.values())
    histogram = {n: c / total for n, c in sorted(counts.items())} if total else {}
    frac_one = histogram.get(1, 0.0)
    frac_1_3 = sum(f for n, f in histogram.items() if 1 <= n <= 3)
    return {
        "histogram": histogram,
        "counts": dict(sorted(counts.items())),
        "frac_one_word": frac_one,
        "frac_one_to_three_words": frac_1_3,
    }
