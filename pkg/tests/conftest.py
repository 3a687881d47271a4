import numpy as np
import pytest
import torch

from segal.dataset import Dataset


@pytest.fixture(autouse=True)
def _single_thread():
    torch.set_num_threads(2)


@pytest.fixture
def rng():
    return np.random.default_rng(0)


def make_toy_dataset(n_train=6, n_val=2, n_test=2, size=16, num_classes=4, seed=0,
                     ignore_band=False):
    """Tiny deterministic dataset: class stripes with noise, optional ignore band."""
    gen = np.random.default_rng(seed)
    images, labels = {}, {}
    ids = [f"img{i}" for i in range(n_train + n_val + n_test)]
    for image_id in ids:
        lbl = np.zeros((size, size), dtype=np.int32)
        for c in range(num_classes):
            lbl[:, c * size // num_classes:(c + 1) * size // num_classes] = c
        if ignore_band:
            lbl[:2, :] = 255
        img = np.stack([(lbl % 3) / 2.0, (lbl % 2) * 1.0, lbl / max(1, num_classes)],
                       axis=-1).astype(np.float32)
        img += gen.normal(0, 0.02, img.shape).astype(np.float32)
        images[image_id] = np.clip(img, 0, 1)
        labels[image_id] = lbl
    return Dataset(num_classes=num_classes, images=images, labels=labels,
                   train_ids=ids[:n_train], val_ids=ids[n_train:n_train + n_val],
                   test_ids=ids[n_train + n_val:])


@pytest.fixture
def toy_dataset():
    return make_toy_dataset()
