"""Colour-blob face detector and crop classifier."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from ..nn.graph import ModelGraph, run_inference
from .scene import FACE_RGB, FRAME, Frame, crop_resize, to_input

COLOR_THRESHOLD = 45.0
MIN_AREA = 16
MIN_CROP_PX = 4


@dataclass(frozen=True)
class Detection:
    cx: float
    cy: float
    w: float
    h: float
    confidence: float

    def __post_init__(self):
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence {self.confidence} outside [0, 1]")
        if self.w < 0 or self.h < 0:
            raise ValueError("negative bbox size")
        if not (0 <= self.cx - self.w / 2 and self.cx + self.w / 2 <= FRAME
                and 0 <= self.cy - self.h / 2 and self.cy + self.h / 2 <= FRAME):
            raise ValueError(f"bbox {self.bbox} leaves the frame")

    @property
    def bbox(self):
        return (self.cx, self.cy, self.w, self.h)


def face_mask(image: np.ndarray, threshold: float = COLOR_THRESHOLD) -> np.ndarray:
    diff = image.astype(np.float64) - FACE_RGB
    return np.einsum("...c,...c->...", diff, diff) < threshold * threshold


def detect_face(frame, min_area: int = MIN_AREA, threshold: float = COLOR_THRESHOLD) -> Detection | None:
    """Largest 4-connected skin-coloured blob, or None.

    Pixel ``j`` spans ``[j, j+1)``, so a blob covering columns ``x0..x1`` has
    centre ``(x0 + x1 + 1) / 2`` and width ``x1 - x0 + 1``.
    """
    image = frame.image if isinstance(frame, Frame) else frame
    labels, n = ndimage.label(face_mask(image, threshold))
    if n == 0:
        return None
    areas = np.bincount(labels.ravel())[1:]
    best = int(np.argmax(areas)) + 1
    area = int(areas[best - 1])
    if area < min_area:
        return None
    ys, xs = ndimage.find_objects(labels)[best - 1]
    w, h = xs.stop - xs.start, ys.stop - ys.start
    expected = math.pi * w * h / 4.0
    conf = min(1.0, area / expected)
    return Detection((xs.start + xs.stop) / 2, (ys.start + ys.stop) / 2, float(w), float(h), conf)


def classify_target(model: ModelGraph, frame, det: Detection, margin: float = 0.2):
    """Argmax label and its probability for the crop around ``det``.

    Returns None when the box is too small to classify.
    """
    if det.w < MIN_CROP_PX or det.h < MIN_CROP_PX:
        return None
    image = frame.image if isinstance(frame, Frame) else frame
    crop = crop_resize(image, det.bbox, margin)
    probs = run_inference(model, to_input(crop))
    label = int(np.argmax(probs))
    return label, float(probs[label])
