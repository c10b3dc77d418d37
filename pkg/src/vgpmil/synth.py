"""Synthetic MIL datasets with spatially contiguous positive regions."""
import json
import math
from dataclasses import asdict, dataclass, fields

import numpy as np

from .bags import Bag, MilDataset
from .errors import InputError

__all__ = ["SyntheticSpec", "generate_synthetic", "load_spec"]


@dataclass(frozen=True)
class SyntheticSpec:
    """Generator settings.

    Positive bags get ``n_blobs`` discs of radius ``blob_radius`` (grid units)
    of positive patches. Features are N(+feature_mean, noise^2 I) for
    positive patches and N(-feature_mean, noise^2 I) for negative ones; with
    probability ``label_noise`` a patch draws its features from the other
    class while keeping its true label.
    """

    n_bags: int = 50
    grid_height: int = 8
    grid_width: int = 8
    positive_fraction: float = 0.5
    n_blobs: int = 1
    blob_radius: float = 2.0
    feature_dim: int = 16
    feature_mean: float = 0.5
    noise_scale: float = 1.0
    label_noise: float = 0.0
    seed: int = 0

    def validate(self):
        if self.n_bags < 1 or self.grid_height < 1 or self.grid_width < 1:
            raise InputError("n_bags and grid sizes must be positive", component="data-cli")
        if not 0 <= self.positive_fraction <= 1 or not 0 <= self.label_noise <= 1:
            raise InputError("fractions must lie in [0, 1]", component="data-cli")
        if self.n_blobs < 1 or self.feature_dim < 1 or self.noise_scale <= 0:
            raise InputError("n_blobs, feature_dim and noise_scale must be positive",
                             component="data-cli")
        if self.blob_radius < 0 or self.blob_radius > math.hypot(self.grid_height, self.grid_width):
            raise InputError(
                f"blob radius {self.blob_radius} exceeds the "
                f"{self.grid_height}x{self.grid_width} grid",
                component="data-cli",
            )


def load_spec(path):
    with open(path, encoding="utf-8") as fh:
        raw = json.load(fh)
    known = {f.name for f in fields(SyntheticSpec)}
    unknown = set(raw) - known
    if unknown:
        raise InputError(f"unknown synthetic spec keys: {sorted(unknown)}", component="data-cli")
    return SyntheticSpec(**raw)


def _blob_mask(rows, cols, rng, spec):
    mask = np.zeros(rows.shape, dtype=bool)
    for _ in range(spec.n_blobs):
        r0 = rng.integers(spec.grid_height)
        c0 = rng.integers(spec.grid_width)
        mask |= (rows - r0) ** 2 + (cols - c0) ** 2 <= spec.blob_radius**2
    return mask


def generate_synthetic(spec):
    """Build a dataset from ``spec``; identical output for identical specs."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    rows, cols = np.divmod(np.arange(spec.grid_height * spec.grid_width), spec.grid_width)
    coords = np.column_stack([rows, cols])
    n_pos = int(round(spec.positive_fraction * spec.n_bags))
    labels = np.zeros(spec.n_bags, dtype=np.int64)
    labels[rng.permutation(spec.n_bags)[:n_pos]] = 1
    width = len(str(spec.n_bags - 1))
    bags = []
    for b in range(spec.n_bags):
        h = _blob_mask(rows, cols, rng, spec) if labels[b] else np.zeros(rows.shape, dtype=bool)
        flip = rng.random(h.shape) < spec.label_noise
        sign = np.where(h ^ flip, 1.0, -1.0)
        X = sign[:, None] * spec.feature_mean + spec.noise_scale * rng.standard_normal(
            (h.size, spec.feature_dim))
        bags.append(Bag(
            bag_id=f"bag{b:0{width}d}",
            label=int(labels[b]),
            X=X,
            coords=coords.copy(),
            instance_labels=h.astype(np.int64),
        ))
    return MilDataset(bags)


def spec_to_dict(spec):
    return asdict(spec)
