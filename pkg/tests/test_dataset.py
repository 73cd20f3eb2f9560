import numpy as np
import pytest
import torch

from gat_transfer.data import AugmentConfig, Augmentation, Domain, choose_augmentation
from gat_transfer.dataset import UnpairedDataset, unpaired_order
from gat_transfer.errors import DatasetError


def test_unpaired_order_covers_each_image_once_per_pass():
    pairs = unpaired_order(5, 3, seed=0, epoch=0)
    assert len(pairs) == 5
    assert sorted(i for i, _ in pairs) == [0, 1, 2, 3, 4]
    assert set(j for _, j in pairs) == {0, 1, 2}


def test_unpaired_order_is_seeded_per_epoch():
    assert unpaired_order(6, 4, seed=3, epoch=2) == unpaired_order(6, 4, seed=3, epoch=2)
    epochs = {tuple(unpaired_order(6, 4, seed=3, epoch=e)) for e in range(5)}
    assert len(epochs) > 1


def test_unpaired_order_drops_incomplete_batches():
    assert len(unpaired_order(5, 3, seed=0, epoch=0, batch_size=2)) == 4
    with pytest.raises(DatasetError):
        unpaired_order(2, 1, seed=0, epoch=0, batch_size=4)
    with pytest.raises(DatasetError):
        unpaired_order(0, 3, seed=0, epoch=0)


def test_items_carry_images_and_masks(prepared):
    _, manifest, cache = prepared
    dataset = UnpairedDataset(manifest, cache, augment_cfg=None, dilation_px=1)
    assert len(dataset) == 3
    item = dataset[0]
    for side in ("x", "y"):
        assert item[side]["image"].shape == (3, 32, 32)
        assert item[side]["image"].abs().max() <= 1.0
        for name in ("eye", "nose", "lip", "head"):
            assert item[side][name].shape == (1, 32, 32)
        assert item[side]["nose"].sum() > 0
        assert item[side]["head"].sum() > 0
        assert item[side]["has_face"]
    assert item["x"]["id"].startswith("x/train/")
    assert item["y"]["id"].startswith("y/train/")


def test_flip_augmentation_mirrors_masks(prepared):
    _, manifest, cache = prepared
    plain = UnpairedDataset(manifest, cache, augment_cfg=None, dilation_px=1)
    flipped = UnpairedDataset(
        manifest, cache, augment_cfg=AugmentConfig(hflip=1.0, blur=0.0, noise=0.0), dilation_px=1
    )
    a, b = plain[0]["x"], flipped[0]["x"]
    assert torch.equal(b["image"], torch.flip(a["image"], dims=[2]))
    assert torch.equal(b["eye"], torch.flip(a["eye"], dims=[2]))


def test_test_split_is_never_augmented(prepared):
    _, manifest, cache = prepared
    dataset = UnpairedDataset(
        manifest, cache, split="test", augment_cfg=AugmentConfig(hflip=1.0, blur=0.0, noise=0.0)
    )
    assert dataset.augment_cfg is None
    x_id = dataset.ids_x[dataset.pairs[0][0]]
    sample = dataset.load_sample(Domain.X_PHOTO, x_id)
    np.testing.assert_array_equal(dataset[0]["x"]["image"].numpy().transpose(1, 2, 0), sample.pixels)


def test_missing_landmarks_give_empty_masks(prepared):
    _, manifest, cache = prepared
    key = f"y/train/{manifest.train_y[0]}"
    cache.put(key, None)
    dataset = UnpairedDataset(manifest, cache, augment_cfg=None)
    item = next(dataset[i]["y"] for i in range(len(dataset)) if dataset[i]["y"]["id"] == key)
    assert not item["has_face"]
    assert item["eye"].sum() == 0 and item["head"].sum() == 0


def test_augmentation_choice_distribution():
    rng = np.random.default_rng(0)
    cfg = AugmentConfig(hflip=0.5, blur=0.25, noise=0.25)
    draws = [choose_augmentation(rng, cfg) for _ in range(2000)]
    assert Augmentation.NONE not in draws
    assert 0.4 < draws.count(Augmentation.HFLIP) / len(draws) < 0.6


def test_smaller_domain_repeats_within_an_epoch():
    pairs = unpaired_order(5, 2, seed=1, epoch=0)
    assert sorted(i for i, _ in pairs) == [0, 1, 2, 3, 4]
    counts = [sum(1 for _, j in pairs if j == k) for k in range(2)]
    assert sorted(counts) == [2, 3]
