"""
The glyph classification dataset: one 5×5 training image per class, and
test images obtained by inverting pixels of the training ones.
"""
from __future__ import annotations

import logging
import os
from typing import List, Optional, Sequence, Tuple

import numpy as np

from . import codec, consts, fields
from .models import Model
from .validation import Validation

log = logging.getLogger("qbnn.dataset")

GLYPHS_PATHNAME = os.path.join(os.path.dirname(__file__), "data", "glyphs.txt")

Batch = List[Tuple[Tuple[int, ...], str]]


class Image(Model):
    label = fields.StringField(choices=consts.LABELS)
    pixels = fields.ListField(fields.BipolarField(), length=consts.IMAGE_SIDE * consts.IMAGE_SIDE)

    def hamming(self, other: "Image") -> int:
        """
        Number of pixels that differ between two images
        """
        return sum(1 for a, b in zip(self.pixels, other.pixels) if a != b)

    @property
    def outputs(self) -> Tuple[int, int]:
        return label_to_outputs(self.label)

    def flipped(self, positions: Sequence[int]) -> "Image":
        """
        Return a copy with the pixels at the given positions inverted
        """
        pixels = list(self.pixels)
        for pos in positions:
            pixels[pos] = -pixels[pos]
        return Image(label=self.label, pixels=pixels)


class Dataset(Model):
    train = fields.ModelListField(Image, min_num=1)
    test = fields.ModelListField(Image, null=True)

    def train_image(self, label: str) -> Optional[Image]:
        for image in self.train:
            if image.label == label:
                return image
        return None

    def validate_model(self, validation: Validation):
        train_field = self._meta["train"]
        test_field = self._meta["test"]

        labels = [image.label for image in self.train]
        for label in consts.LABELS:
            count = labels.count(label)
            if count != 1:
                validation.add_error(train_field, f"there are {count} training images for label {label}, not 1")

        for label in consts.LABELS:
            count = sum(1 for image in self.test if image.label == label)
            if count != consts.TEST_PER_CLASS:
                validation.add_warning(
                        test_field, f"there are {count} test images for label {label}, not {consts.TEST_PER_CLASS}")

        train_pixels = {tuple(image.pixels) for image in self.train}
        seen = set()
        for idx, image in enumerate(self.test):
            reference = self.train_image(image.label)
            if reference is not None:
                distance = image.hamming(reference)
                if distance != consts.PERTURBED_PIXELS:
                    validation.add_error(
                            test_field,
                            f"test image {idx} is {distance} pixels away from the {image.label} training image,"
                            f" not {consts.PERTURBED_PIXELS}")
            pixels = tuple(image.pixels)
            if pixels in train_pixels:
                validation.add_error(test_field, f"test image {idx} is identical to a training image")
            if pixels in seen:
                validation.add_error(test_field, f"test image {idx} is a duplicate")
            seen.add(pixels)


def label_to_outputs(label: str) -> Tuple[int, int]:
    """
    Return the bipolar values of the output neurons encoding a label
    """
    try:
        return consts.LABEL_OUTPUTS[label]
    except KeyError:
        raise ValueError(f"unknown label {label!r}") from None


def outputs_to_label(outputs: Sequence[int]) -> str:
    """
    Return the label encoded by the bipolar values of the output neurons
    """
    key = tuple(int(x) for x in outputs)
    for label, value in consts.LABEL_OUTPUTS.items():
        if value == key:
            return label
    raise ValueError(f"{key} does not encode a label")


def canonical_glyphs() -> List[Image]:
    """
    Load the training glyphs shipped with qbnn, in label order
    """
    glyphs = codec.GlyphText().load(GLYPHS_PATHNAME)
    return sorted(glyphs.train, key=lambda image: consts.LABELS.index(image.label))


def generate_canonical(seed: int) -> Dataset:
    """
    Build the dataset from the canonical glyphs, choosing the inverted pixel
    pairs of the test images with a generator seeded by seed
    """
    if seed < 0:
        raise ValueError(f"seed {seed} must not be negative")
    rng = np.random.default_rng(seed)
    side = consts.IMAGE_SIDE * consts.IMAGE_SIDE

    train = canonical_glyphs()
    test = []
    for glyph in train:
        chosen: List[Tuple[int, ...]] = []
        while len(chosen) < consts.TEST_PER_CLASS:
            pair = tuple(sorted(int(x) for x in rng.choice(side, size=consts.PERTURBED_PIXELS, replace=False)))
            if pair in chosen:
                continue
            chosen.append(pair)
        test.extend(glyph.flipped(pair) for pair in chosen)

    res = Dataset(train=train, test=test)
    res.check("generated dataset")
    log.debug("seed %d: generated %d training and %d test images", seed, len(train), len(test))
    return res


_codecs = codec.Codecs(include=(codec.GlyphText, codec.JSON, codec.YAML))


def save(ds: Dataset, pathname: str):
    """
    Write a dataset, in the format given by the file extension
    """
    _codecs.codec_from_filename(pathname)().save(ds, pathname)


def load(pathname: str) -> Dataset:
    """
    Read and validate a dataset, in the format given by the file extension
    """
    res = _codecs.codec_from_filename(pathname)().load(pathname, model=Dataset)
    res.check(pathname)
    return res


def make_batch(images: Sequence[Image]) -> Batch:
    """
    Turn images into (pixels, label) pairs for the QUBO builder
    """
    return [(tuple(image.pixels), image.label) for image in images]
