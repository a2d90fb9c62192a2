"""Cross-validation splitting: repeated seeded random splits, grouped by image.

Each fold is an independent random train/test split of the *images* (the
published protocol repeats an 80/20 split five times rather than partitioning
into disjoint folds), so QA pairs of one image never straddle train and test.
"""

import numpy as np

from .records import VqaSample


def split_cv(
    samples: list[VqaSample],
    folds: int = 5,
    train_frac: float = 0.8,
    seed: int = 0,
) -> list[tuple[list[int], list[int]]]:
    """Per-fold (train_indices, test_indices) into ``samples``.

    Deterministic in ``seed``; fold k draws from an rng keyed by (seed, k),
    so folds are independent of each other and of fold count.
    """
    if folds < 1:
        raise ValueError("folds must be >= 1")
    if not 0.0 < train_frac < 1.0:
        raise ValueError("train_frac must be in (0, 1)")
    image_ids = sorted({s.image_id for s in samples})
    n_train = int(round(len(image_ids) * train_frac))
    if n_train < 1 or n_train >= len(image_ids):
        raise ValueError(
            f"cannot split {len(image_ids)} image(s) at train_frac={train_frac}: "
            "need at least one train and one test image"
        )
    by_image: dict[str, list[int]] = {}
    for idx, s in enumerate(samples):
        by_image.setdefault(s.image_id, []).append(idx)

    result = []
    for fold in range(folds):
        rng = np.random.default_rng([seed, fold])
        order = rng.permutation(len(image_ids))
        train_imgs = {image_ids[i] for i in order[:n_train]}
        train_idx, test_idx = [], []
        for image_id in image_ids:
            dest = train_idx if image_id in train_imgs else test_idx
            dest.extend(by_image[image_id])
        result.append((sorted(train_idx), sorted(test_idx)))
    return result
