"""Supervised training loop, cross-validation harness and evaluation metrics."""

import copy
import dataclasses
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F

from .data.augment import AugmentConfig, augment
from .data.records import VqaSample, normalize_answer
from .data.splits import split_cv
from .data.vocab import answer_category_map, build_answer_classes, build_vocabulary
from .encoders.question import pad_token_batch
from .model import ModelConfig, VqaModel, build_model


@dataclass
class TrainConfig:
    epochs: int = 50
    learning_rate: float = 1e-4
    batch_size: int = 64
    seed: int = 0
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    early_stop: int | None = None  # patience in epochs, judged on validation accuracy
    stop_at_train_accuracy: float | None = None  # optional early exit for overfit runs

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be non-negative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


@dataclass
class EvalReport:
    overall_accuracy: float
    per_category_accuracy: dict[str, float]
    n_per_category: dict[str, int]
    correct_per_category: dict[str, int]
    confusion_pairs: list[tuple[str, str, int]]  # (gold, predicted, count), errors only
    n_samples: int
    n_correct: int
    fold_id: int | None = None
    seed: int | None = None

    def to_json(self) -> dict:
        return dataclasses.asdict(self)


class TrainingDiverged(RuntimeError):
    pass


def _batch_tensors(model: VqaModel, samples: list[VqaSample], images: list[np.ndarray] | None = None):
    imgs = images if images is not None else [s.image for s in samples]
    x = torch.cat([model.prepare_image(img) for img in imgs], dim=0)
    token_lists = []
    for s in samples:
        ids = model.vocab.encode(s.question)
        token_lists.append(ids if ids else [model.vocab.unk_id])
    ids, lengths = pad_token_batch(token_lists, model.cfg.question_encoder.max_tokens, model.vocab.pad_id)
    return x, ids, lengths


def _target_classes(model: VqaModel, samples: list[VqaSample]) -> torch.Tensor:
    targets = []
    for s in samples:
        c = model.answer_map.class_of(s.answer)
        if c is None:
            raise ValueError(
                f"training answer {s.answer!r} is outside the model's answer map; "
                "build the map from the training split"
            )
        targets.append(c)
    return torch.tensor(targets, dtype=torch.long)


def train(
    model: VqaModel,
    train_samples: list[VqaSample],
    cfg: TrainConfig,
    val_samples: list[VqaSample] | None = None,
) -> dict:
    """Train in place; returns ``{"log": [...], "best_state": ..., "stopped_epoch": int}``.

    Augmentation runs on training batches only. The log has one entry per
    epoch with mean loss and training accuracy (plus validation accuracy when
    a validation set is given). A non-finite loss aborts with a diagnostic
    naming the epoch and batch.
    """
    if not train_samples:
        raise ValueError("training set is empty")
    torch.manual_seed(cfg.seed)
    model.train()
    opt = torch.optim.Adam((p for p in model.parameters() if p.requires_grad), lr=cfg.learning_rate)
    n = len(train_samples)
    log: list[dict] = []
    best_state = None
    best_val, best_epoch = -1.0, -1
    stopped_epoch = cfg.epochs - 1

    for epoch in range(cfg.epochs):
        order = np.random.default_rng([cfg.seed, epoch]).permutation(n)
        epoch_loss, epoch_correct = 0.0, 0
        for b, start in enumerate(range(0, n, cfg.batch_size)):
            batch = [train_samples[i] for i in order[start : start + cfg.batch_size]]
            rng = np.random.default_rng([cfg.seed, epoch, b])
            images = [augment(s.image, cfg.augment, rng) for s in batch]
            x, ids, lengths = _batch_tensors(model, batch, images)
            targets = _target_classes(model, batch)
            logits = model(x, ids, lengths)
            loss = F.cross_entropy(logits, targets)
            if not torch.isfinite(loss):
                raise TrainingDiverged(f"non-finite loss at epoch {epoch}, batch {b}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            epoch_loss += float(loss.detach()) * len(batch)
            epoch_correct += int((logits.detach().argmax(1) == targets).sum())
        entry = {
            "epoch": epoch,
            "split": "train",
            "loss": epoch_loss / n,
            "accuracy": epoch_correct / n,
        }
        if val_samples:
            entry["val_accuracy"] = evaluate(model, val_samples).overall_accuracy
            model.train()
            if entry["val_accuracy"] > best_val:
                best_val, best_epoch = entry["val_accuracy"], epoch
                best_state = copy.deepcopy(model.state_dict())
        log.append(entry)
        if cfg.stop_at_train_accuracy is not None and entry["accuracy"] >= cfg.stop_at_train_accuracy:
            stopped_epoch = epoch
            break
        if cfg.early_stop is not None and val_samples and epoch - best_epoch >= cfg.early_stop:
            stopped_epoch = epoch
            break
    model.eval()
    return {"log": log, "best_state": best_state, "stopped_epoch": stopped_epoch}


def predict_answers(
    model: VqaModel, samples: list[VqaSample], batch_size: int = 64
) -> list[str]:
    """Deterministic eval-mode answer strings for each sample."""
    model.eval()
    out: list[str] = []
    with torch.no_grad():
        for start in range(0, len(samples), batch_size):
            batch = samples[start : start + batch_size]
            x, ids, lengths = _batch_tensors(model, batch)
            logits = model(x, ids, lengths).numpy()
            for row in logits:
                order = np.lexsort((np.arange(len(row)), -row))
                out.append(model.answer_map.class_to_answer[int(order[0])])
    return out


def evaluate(model: VqaModel, test_samples: list[VqaSample]) -> EvalReport:
    """Exact-match accuracy on normalized answers, micro overall + per category."""
    predictions = predict_answers(model, test_samples)
    n_cat: dict[str, int] = {}
    correct_cat: dict[str, int] = {}
    confusion: dict[tuple[str, str], int] = {}
    for s, pred in zip(test_samples, predictions):
        gold = normalize_answer(s.answer)
        n_cat[s.category] = n_cat.get(s.category, 0) + 1
        if pred == gold:
            correct_cat[s.category] = correct_cat.get(s.category, 0) + 1
        else:
            confusion[(gold, pred)] = confusion.get((gold, pred), 0) + 1
    n_total = sum(n_cat.values())
    n_correct = sum(correct_cat.values())
    pairs = sorted(((g, p, c) for (g, p), c in confusion.items()), key=lambda t: (-t[2], t[0], t[1]))
    return EvalReport(
        overall_accuracy=n_correct / n_total if n_total else 0.0,
        per_category_accuracy={
            cat: correct_cat.get(cat, 0) / n for cat, n in sorted(n_cat.items())
        },
        n_per_category=dict(sorted(n_cat.items())),
        correct_per_category={cat: correct_cat.get(cat, 0) for cat in sorted(n_cat)},
        confusion_pairs=pairs,
        n_samples=n_total,
        n_correct=n_correct,
    )


def format_mean_std(values: list[float]) -> str:
    """Population mean±std in the two-decimal style used for headline accuracy."""
    arr = np.asarray(values, dtype=np.float64)
    return f"{arr.mean():.2f}±{arr.std():.2f}"


def _fold_seed(master_seed: int, fold: int) -> int:
    return int(np.random.SeedSequence([master_seed, fold]).generate_state(1)[0])


def cross_validate(
    model_cfg: ModelConfig,
    samples: list[VqaSample],
    train_cfg: TrainConfig,
    folds: int = 5,
    train_frac: float = 0.8,
) -> dict:
    """Repeated seeded random splits; one independently seeded model per fold.

    Vocabulary and answer classes are rebuilt from each fold's training split
    (test answers outside the map can never match and score incorrect).
    Returns ``{"reports": [EvalReport...], "summary": {...}}`` with the
    mean±std summary string formatted like headline accuracy figures.
    """
    splits = split_cv(samples, folds=folds, train_frac=train_frac, seed=train_cfg.seed)
    reports = []
    for fold, (train_idx, test_idx) in enumerate(splits):
        tr = [samples[i] for i in train_idx]
        te = [samples[i] for i in test_idx]
        vocab = build_vocabulary(tr)
        answer_map = build_answer_classes(tr)
        cfg = dataclasses.replace(model_cfg, n_classes=answer_map.n_classes)
        fold_seed = _fold_seed(train_cfg.seed, fold)
        model = build_model(cfg, vocab, answer_map, seed=fold_seed)
        fold_train_cfg = dataclasses.replace(train_cfg, seed=fold_seed)
        train(model, tr, fold_train_cfg, val_samples=None)
        report = evaluate(model, te)
        report.fold_id = fold
        report.seed = fold_seed
        reports.append(report)
    overall = [r.overall_accuracy for r in reports]
    summary = {
        "mean_overall_accuracy": float(np.mean(overall)),
        "std_overall_accuracy": float(np.std(overall)),
        "formatted": format_mean_std(overall),
        "per_fold": overall,
        "folds": folds,
        "seed": train_cfg.seed,
    }
    return {"reports": reports, "summary": summary}


YES_NO = ("yes", "no")
_ARTICLES = ("a", "an", "the")


def extract_options(question: str, known_answers: set[str] | None = None) -> tuple[str, str] | None:
    """Parse an "X or Y" construction out of a question, if present.

    Prefers known answers (longest match) on each side of "or"; otherwise
    falls back to the single word adjacent to it. Returns None when the
    question has no usable construction.
    """
    text = normalize_answer(question)
    words = text.split()
    if "or" not in words:
        return None
    pivot = len(words) - 1 - words[::-1].index("or")  # last occurrence
    left_words = words[:pivot]
    right_words = words[pivot + 1 :]
    while right_words and right_words[0] in _ARTICLES:
        right_words = right_words[1:]
    if not left_words or not right_words:
        return None

    def best(candidates: list[str]) -> str | None:
        if known_answers:
            for cand in sorted(candidates, key=len, reverse=True):
                if cand in known_answers:
                    return cand
        return None

    left_cands = [" ".join(left_words[-k:]) for k in range(1, min(4, len(left_words)) + 1)]
    right_cands = [" ".join(right_words[:k]) for k in range(1, min(4, len(right_words)) + 1)]
    x = best(left_cands) or left_words[-1]
    y = best(right_cands) or right_words[0]
    return x, y


def answer_type_analysis(
    model: VqaModel,
    test_samples: list[VqaSample],
    answer_categories: dict[str, str] | None = None,
) -> dict:
    """Three error diagnostics beyond plain accuracy.

    1. category misclassification: the predicted answer belongs to a
       different category's answer set than the question's category;
    2. yes/no type errors: a yes/no gold answered with a non-yes/no
       prediction, or the reverse;
    3. options violations: for "X or Y" questions, a prediction outside
       {X, Y}.
    """
    if answer_categories is None:
        answer_categories = answer_category_map(test_samples)
    predictions = predict_answers(model, test_samples)
    known = set(model.answer_map.answer_to_class)

    cat_mis = {"count": 0, "total": 0, "examples": [], "by_category": {}}
    yesno = {"count": 0, "total": 0, "examples": []}
    options = {"count": 0, "total": 0, "examples": []}
    for s, pred in zip(test_samples, predictions):
        gold = normalize_answer(s.answer)
        pred_cat = answer_categories.get(pred)
        cat_mis["total"] += 1
        if pred_cat is not None and pred_cat != s.category:
            cat_mis["count"] += 1
            cat_mis["by_category"][s.category] = cat_mis["by_category"].get(s.category, 0) + 1
            if len(cat_mis["examples"]) < 10:
                cat_mis["examples"].append(
                    {"question": s.question, "gold": gold, "predicted": pred, "predicted_category": pred_cat}
                )
        gold_yn, pred_yn = gold in YES_NO, pred in YES_NO
        yesno["total"] += 1
        if gold_yn != pred_yn:
            yesno["count"] += 1
            if len(yesno["examples"]) < 10:
                yesno["examples"].append({"question": s.question, "gold": gold, "predicted": pred})
        opts = extract_options(s.question, known)
        if opts is not None:
            options["total"] += 1
            if pred not in opts:
                options["count"] += 1
                if len(options["examples"]) < 10:
                    options["examples"].append(
                        {"question": s.question, "options": list(opts), "predicted": pred}
                    )
    for section in (cat_mis, yesno, options):
        section["rate"] = section["count"] / section["total"] if section["total"] else 0.0
    return {
        "category_misclassification": cat_mis,
        "yes_no_type_errors": yesno,
        "options_violations": options,
    }


_ARCH_NAMES = {
    "vgg_small": "VGG-Small",
    "vgg16": "VGG-16",
    "resnet_small": "ResNet-Small",
    "resnet50": "ResNet-50",
    "resnet152": "ResNet-152",
}
_QUESTION_NAMES = {"lstm": "LSTM", "transformer": "BERT"}
_FUSION_NAMES = {"concat": "Concatenation", "san": "SAN"}


def variant_name(cfg: ModelConfig) -> str:
    """Display name for a component triple, e.g. "VGG-16 + BERT + Concatenation"."""
    name = (
        f"{_ARCH_NAMES[cfg.image_encoder.arch]} + {_QUESTION_NAMES[cfg.question_encoder.arch]}"
        f" + {_FUSION_NAMES[cfg.fusion]}"
    )
    if cfg.image_encoder.pretrained_weights:
        name = "Pretrained " + name
    return name


def model_comparison_table(rows: list[tuple[str, float]]) -> tuple[str, str]:
    """(aligned text, csv) accuracy table, sorted descending by accuracy."""
    if not rows:
        raise ValueError("no variant metrics to tabulate")
    ordered = sorted(rows, key=lambda r: (-r[1], r[0]))
    width = max(len("Model Variation"), max(len(name) for name, _ in ordered))
    lines = [f"{'Model Variation':<{width}}  Test Accuracy"]
    lines += [f"{name:<{width}}  {acc:.2f}" for name, acc in ordered]
    text = "\n".join(lines)
    csv = "model_variation,test_accuracy\n" + "\n".join(
        f"{name},{acc:.2f}" for name, acc in ordered
    )
    return text, csv
