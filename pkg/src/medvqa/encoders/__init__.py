"""Configurable image and question encoders."""

from .image import (
    IMAGE_ARCHS,
    FeatureMap,
    FeatureVector,
    ImageEncoder,
    ImageEncoderConfig,
    build_image_encoder,
    encode_image,
    image_to_tensor,
)
from .question import (
    QUESTION_ARCHS,
    LstmQuestionEncoder,
    QuestionEncoderConfig,
    TransformerQuestionEncoder,
    build_question_encoder,
    encode_question,
    load_word_vectors,
    pad_token_batch,
)

__all__ = [
    "IMAGE_ARCHS",
    "FeatureMap",
    "FeatureVector",
    "ImageEncoder",
    "ImageEncoderConfig",
    "build_image_encoder",
    "encode_image",
    "image_to_tensor",
    "QUESTION_ARCHS",
    "LstmQuestionEncoder",
    "QuestionEncoderConfig",
    "TransformerQuestionEncoder",
    "build_question_encoder",
    "encode_question",
    "load_word_vectors",
    "pad_token_batch",
]
