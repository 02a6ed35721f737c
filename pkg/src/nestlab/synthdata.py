"""Synthetic per-pixel segmentation worlds with controllable class similarity.

Each image is a background canvas with rectangular class blobs painted on
top; pixel features are drawn from per-class Gaussian prototypes.  Step
views relabel pixels of classes outside the current step as background,
reproducing background shift under the overlapped and disjoint protocols.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError
from .numerics import SplitMix64


@dataclass
class WorldSpec:
    num_classes: int = 10
    feature_dim: int = 16
    prototype_rule: str = "independent"  # "independent" | "mixture"
    mixture_beta: float = 0.3
    mixture_classes: tuple = ()  # class ids built as mixtures of earlier prototypes
    noise_sigma: float = 0.3
    height: int = 16
    width: int = 16
    blobs_min: int = 2
    blobs_max: int = 5
    images_per_class: int = 20
    test_images_per_class: int = 5
    seed: int = 1

    def validate(self):
        if self.num_classes < 2:
            raise ConfigError("num_classes must be >= 2")
        if self.feature_dim < 2:
            raise ConfigError("feature_dim must be >= 2")
        if self.height < 4 or self.width < 4:
            raise ConfigError("image size must be >= 4x4")
        if self.noise_sigma <= 0:
            raise ConfigError("noise_sigma must be positive")
        if not (0.0 <= self.mixture_beta <= 1.0):
            raise ConfigError("mixture_beta must lie in [0, 1]")
        if self.prototype_rule not in ("independent", "mixture"):
            raise ConfigError(f"unknown prototype_rule {self.prototype_rule!r}")
        if not (1 <= self.blobs_min <= self.blobs_max):
            raise ConfigError("blob count range must satisfy 1 <= min <= max")
        for c in self.mixture_classes:
            if not (2 <= c <= self.num_classes):
                raise ConfigError(f"mixture class {c} out of range")
        if self.images_per_class < 1 or self.test_images_per_class < 1:
            raise ConfigError("need at least one image per class in each pool")


@dataclass
class LabeledImage:
    features: np.ndarray  # (H, W, d_in) float64
    full_labels: np.ndarray  # (H, W) int64, 0 = background


@dataclass
class World:
    spec: WorldSpec
    prototypes: np.ndarray  # (K+1, d_in), row 0 = background
    train_pool: list  # of LabeledImage
    test_pool: list


@dataclass
class TaskSequence:
    class_order: tuple
    base_count: int
    increment: int
    setting: str = "overlapped"

    def validate(self, num_classes):
        if sorted(self.class_order) != list(range(1, num_classes + 1)):
            raise ConfigError("class_order must be a permutation of 1..K")
        if self.setting not in ("overlapped", "disjoint"):
            raise ConfigError(f"unknown setting {self.setting!r}")
        rest = num_classes - self.base_count
        if rest < 0 or (rest > 0 and (self.increment < 1 or rest % self.increment)):
            raise ConfigError("base_count + k*increment must reach num_classes")

    @property
    def num_steps(self):
        rest = len(self.class_order) - self.base_count
        return 1 + (rest // self.increment if rest else 0)

    def classes_at(self, t):
        if t == 0:
            return tuple(self.class_order[: self.base_count])
        lo = self.base_count + (t - 1) * self.increment
        return tuple(self.class_order[lo : lo + self.increment])

    def seen_classes(self, t):
        return tuple(self.class_order[: self.base_count + t * self.increment])


@dataclass
class StepData:
    step: int
    class_set: tuple
    train_images: list = field(default_factory=list)
    test_images: list = field(default_factory=list)


def _unit(v):
    return v / np.linalg.norm(v)


def _make_prototypes(spec, rng):
    d = spec.feature_dim
    protos = np.zeros((spec.num_classes + 1, d))
    protos[0] = _unit(rng.normal(d))
    mixture = set(spec.mixture_classes) if spec.prototype_rule == "mixture" else set()
    for c in range(1, spec.num_classes + 1):
        if c in mixture and c >= 2:
            weights = rng.uniform(c - 1)
            weights = weights / weights.sum()
            base = weights @ protos[1:c]
            noise = _unit(rng.normal(d))
            protos[c] = _unit(base + spec.mixture_beta * noise)
        else:
            protos[c] = _unit(rng.normal(d))
    return protos


def _render_image(spec, protos, primary_class, rng):
    h, w = spec.height, spec.width
    labels = np.zeros((h, w), dtype=np.int64)
    n_blobs = spec.blobs_min + rng.integers(spec.blobs_max - spec.blobs_min + 1)
    for b in range(n_blobs):
        cls = primary_class if b == 0 else 1 + rng.integers(spec.num_classes)
        bh = 4 + rng.integers(max(1, h // 2 - 3))
        bw = 4 + rng.integers(max(1, w // 2 - 3))
        top = rng.integers(h - bh + 1)
        left = rng.integers(w - bw + 1)
        labels[top : top + bh, left : left + bw] = cls
    feats = protos[labels] + spec.noise_sigma * rng.normal((h, w, spec.feature_dim))
    return LabeledImage(features=feats, full_labels=labels)


def build_world(spec):
    """Deterministically generate prototypes plus train/test image pools."""
    spec.validate()
    rng = SplitMix64(spec.seed)
    protos = _make_prototypes(spec, rng)
    train_pool = []
    for c in range(1, spec.num_classes + 1):
        for _ in range(spec.images_per_class):
            train_pool.append(_render_image(spec, protos, c, rng))
    test_pool = []
    for c in range(1, spec.num_classes + 1):
        for _ in range(spec.test_images_per_class):
            test_pool.append(_render_image(spec, protos, c, rng))
    return World(spec=spec, prototypes=protos, train_pool=train_pool, test_pool=test_pool)


def _relabel(labels, keep):
    out = np.where(np.isin(labels, list(keep)), labels, 0)
    return out.astype(np.int64)


def step_view(seq, world, t):
    """Training and evaluation views of the world at step t.

    Train labels collapse everything outside the step's classes to
    background; the disjoint protocol additionally drops train images that
    contain any future class.  Test labels keep all classes seen so far.
    """
    seq.validate(world.spec.num_classes)
    if not (0 <= t < seq.num_steps):
        raise ConfigError(f"step {t} outside sequence of {seq.num_steps} steps")
    current = set(seq.classes_at(t))
    seen = set(seq.seen_classes(t))
    future = set(seq.class_order) - seen

    train = []
    for img in world.train_pool:
        if seq.setting == "disjoint" and future and np.isin(img.full_labels, list(future)).any():
            continue
        train.append(LabeledImage(img.features, _relabel(img.full_labels, current)))
    if not train:
        raise DataError(f"disjoint filtering left no training images at step {t}")

    test = [
        LabeledImage(img.features, _relabel(img.full_labels, seen))
        for img in world.test_pool
    ]
    return StepData(step=t, class_set=tuple(sorted(current)), train_images=train, test_images=test)


def dump_images(images, path):
    """Write images as JSON lines; floats round-trip bit-exactly."""
    with open(path, "w") as fh:
        for img in images:
            h, w, d = img.features.shape
            rec = {
                "h": h,
                "w": w,
                "d": d,
                "features": img.features.ravel().tolist(),
                "labels": img.full_labels.ravel().tolist(),
            }
            fh.write(json.dumps(rec) + "\n")


def load_images(path):
    images = []
    with open(path) as fh:
        for line in fh:
            rec = json.loads(line)
            feats = np.array(rec["features"], dtype=np.float64).reshape(rec["h"], rec["w"], rec["d"])
            labels = np.array(rec["labels"], dtype=np.int64).reshape(rec["h"], rec["w"])
            images.append(LabeledImage(feats, labels))
    return images


def s61_world_spec(seed=1):
    """Default benchmark: 10 classes, 6 base + 1 per step, mixture tail."""
    return WorldSpec(
        num_classes=10,
        feature_dim=16,
        prototype_rule="mixture",
        mixture_beta=0.3,
        mixture_classes=(7, 8, 9, 10),
        noise_sigma=0.3,
        height=16,
        width=16,
        seed=seed,
    )


def s61_sequence(setting="overlapped"):
    return TaskSequence(class_order=tuple(range(1, 11)), base_count=6, increment=1, setting=setting)
