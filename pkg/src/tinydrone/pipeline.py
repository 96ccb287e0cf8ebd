"""End-to-end model recipes shared by the CLI and the mission runner."""

from __future__ import annotations

from dataclasses import dataclass

from .mission.scene import make_dataset, to_input
from .nn.graph import ModelGraph, build_mobilenet_v2
from .nn.train import extract_features, train_head
from .quantizer import calibrate, quantize_model

TEST_SEED_OFFSET = 10_000
CALIB_SEED_OFFSET = 20_000


@dataclass
class TrainedModel:
    model: ModelGraph
    train_accuracy: float


def train_classifier(n_train: int = 1000, seed: int = 0, lr: float = 2.0, epochs: int = 50) -> TrainedModel:
    """Default network with a head trained on ``n_train`` synthetic crops."""
    images, labels = make_dataset(n_train, seed=seed)
    x = to_input(images)
    model = build_mobilenet_v2(seed=seed)
    feats = extract_features(model, x)
    trained, acc = train_head(model, x, labels, lr=lr, epochs=epochs, seed=seed, features=feats)
    return TrainedModel(trained, acc)


def holdout_set(n: int = 1000, seed: int = 0):
    images, labels = make_dataset(n, seed=seed + TEST_SEED_OFFSET)
    return to_input(images), labels


def quantize_classifier(model: ModelGraph, n_calib: int = 100, seed: int = 0) -> ModelGraph:
    images, _ = make_dataset(n_calib, seed=seed + CALIB_SEED_OFFSET)
    return quantize_model(model, calibrate(model, to_input(images)))
