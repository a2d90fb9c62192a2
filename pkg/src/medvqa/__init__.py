"""medvqa: configurable medical visual question answering toolkit.

Joint-embedding models over medical images and free-text questions with
swappable image/question encoders, concatenation or stacked-attention fusion,
a classification answer head, contrastive image-encoder pretraining, a
training/evaluation harness, GradCAM evidence maps, and an HTTP inference
service.

Research software: not a medical device, and not a substitute for
professional interpretation of medical images.
"""

__version__ = "0.1.0"
