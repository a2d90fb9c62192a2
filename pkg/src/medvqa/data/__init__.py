"""Dataset ingestion, vocabularies, statistics, augmentation and synthesis."""

from .records import (
    CATEGORIES,
    DatasetFormatError,
    VqaSample,
    load_synonyms,
    load_vqamed,
    normalize_answer,
    save_dataset,
)
from .vocab import (
    PAD_TOKEN,
    UNK_TOKEN,
    AnswerClassMap,
    Vocabulary,
    answer_category_map,
    build_answer_classes,
    build_vocabulary,
    tokenize,
)
from .stats import OTHER_BUCKET, PrefixNode, PrefixTree, answer_length_stats, question_prefix_distribution
from .augment import PRETRAIN_AUGMENT, AugmentConfig, augment
from .synthetic import (
    MODALITY_STYLES,
    PLANES,
    SHAPE_TO_ORGAN,
    SyntheticLatents,
    make_cluster_images,
    make_synthetic_dataset,
    oracle_answer,
    render_synthetic_image,
)
from .splits import split_cv

__all__ = [
    "CATEGORIES",
    "DatasetFormatError",
    "VqaSample",
    "load_synonyms",
    "load_vqamed",
    "normalize_answer",
    "save_dataset",
    "PAD_TOKEN",
    "UNK_TOKEN",
    "AnswerClassMap",
    "Vocabulary",
    "answer_category_map",
    "build_answer_classes",
    "build_vocabulary",
    "tokenize",
    "OTHER_BUCKET",
    "PrefixNode",
    "PrefixTree",
    "answer_length_stats",
    "question_prefix_distribution",
    "PRETRAIN_AUGMENT",
    "AugmentConfig",
    "augment",
    "MODALITY_STYLES",
    "PLANES",
    "SHAPE_TO_ORGAN",
    "SyntheticLatents",
    "make_cluster_images",
    "make_synthetic_dataset",
    "oracle_answer",
    "render_synthetic_image",
    "split_cv",
]
