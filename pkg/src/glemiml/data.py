"""MIML data model: bags, datasets, JSON-lines I/O, splitting, synthetic generation."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataFormatError


@dataclass(frozen=True)
class Bag:
    """One sample: a set of instance feature vectors plus a binary label vector."""

    instances: np.ndarray  # (n_i, d) float64
    logical_labels: np.ndarray  # (t,) int, entries in {0, 1}

    def __post_init__(self):
        inst = np.asarray(self.instances, dtype=np.float64)
        lab = np.asarray(self.logical_labels, dtype=np.int64)
        if inst.ndim != 2 or inst.shape[0] < 1:
            raise DataFormatError("bag must hold a 2-D instance matrix with >= 1 row")
        if lab.ndim != 1:
            raise DataFormatError("logical labels must be a flat vector")
        if not np.all((lab == 0) | (lab == 1)):
            raise DataFormatError("logical labels must be 0 or 1")
        object.__setattr__(self, "instances", inst)
        object.__setattr__(self, "logical_labels", lab)

    @property
    def num_instances(self) -> int:
        return self.instances.shape[0]


@dataclass
class MIMLDataset:
    bags: list[Bag]
    feature_dim: int
    label_count: int
    name: str = "unnamed"

    def __post_init__(self):
        if self.feature_dim < 1 or self.label_count < 1:
            raise DataFormatError("feature_dim and label_count must be positive")
        if not self.bags:
            raise DataFormatError("dataset must contain at least one bag")
        for i, bag in enumerate(self.bags):
            if bag.instances.shape[1] != self.feature_dim:
                raise DataFormatError(
                    f"bag {i}: instance width {bag.instances.shape[1]} != feature_dim {self.feature_dim}"
                )
            if bag.logical_labels.shape[0] != self.label_count:
                raise DataFormatError(
                    f"bag {i}: label length {bag.logical_labels.shape[0]} != label_count {self.label_count}"
                )

    def __len__(self) -> int:
        return len(self.bags)

    def subset(self, indices, name: str | None = None) -> "MIMLDataset":
        return MIMLDataset(
            bags=[self.bags[i] for i in indices],
            feature_dim=self.feature_dim,
            label_count=self.label_count,
            name=name or self.name,
        )

    def logical_matrix(self) -> np.ndarray:
        """Stacked (B, t) matrix of logical labels."""
        return np.stack([b.logical_labels for b in self.bags]).astype(np.float64)


@dataclass(frozen=True)
class SplitSpec:
    train_frac: float = 0.7
    test_frac: float = 0.2
    val_frac: float = 0.1
    seed: int = 0

    def __post_init__(self):
        fracs = (self.train_frac, self.test_frac, self.val_frac)
        if any(f <= 0 for f in fracs):
            raise ConfigError("split fractions must be positive")
        if abs(sum(fracs) - 1.0) > 1e-12:
            raise ConfigError(f"split fractions must sum to 1, got {sum(fracs)!r}")


def load_dataset(path) -> MIMLDataset:
    """Parse a JSON-lines dataset file (header line, then one bag per line)."""
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise DataFormatError(f"{path}: empty file")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise DataFormatError(f"{path}: malformed header at line 1: {exc}") from exc
    for key in ("name", "feature_dim", "label_count"):
        if key not in header:
            raise DataFormatError(f"{path}: header missing field {key!r}")
    d, t = int(header["feature_dim"]), int(header["label_count"])

    bags = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DataFormatError(f"{path}: malformed line {lineno}: {exc}") from exc
        bag_idx = len(bags)
        inst = rec.get("instances")
        lab = rec.get("labels")
        if inst is None or lab is None:
            raise DataFormatError(f"{path}: line {lineno}: bag record needs 'instances' and 'labels'")
        if any(len(row) != d for row in inst):
            raise DataFormatError(f"{path}: bag {bag_idx}: instance row width != feature_dim {d}")
        if len(lab) != t:
            raise DataFormatError(f"{path}: bag {bag_idx}: label vector length != label_count {t}")
        bags.append(Bag(np.asarray(inst, dtype=np.float64), np.asarray(lab, dtype=np.int64)))
    return MIMLDataset(bags=bags, feature_dim=d, label_count=t, name=str(header["name"]))


def save_dataset(ds: MIMLDataset, path) -> None:
    """Write the canonical JSON-lines form; load(save(ds)) is structurally identical."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(
            {"name": ds.name, "feature_dim": ds.feature_dim, "label_count": ds.label_count}
        ) + "\n")
        for bag in ds.bags:
            fh.write(json.dumps({
                "instances": [[float(v) for v in row] for row in bag.instances],
                "labels": [int(v) for v in bag.logical_labels],
            }) + "\n")


def split_dataset(ds: MIMLDataset, spec: SplitSpec):
    """Deterministic shuffled partition; floor sizes, remainder goes to train."""
    n = len(ds)
    if n < 10:
        raise ConfigError(f"dataset too small to split ({n} bags, need >= 10)")
    n_train = int(np.floor(n * spec.train_frac))
    n_test = int(np.floor(n * spec.test_frac))
    n_val = int(np.floor(n * spec.val_frac))
    n_train += n - (n_train + n_test + n_val)
    perm = np.random.default_rng(np.uint64(spec.seed)).permutation(n)
    train_idx = perm[:n_train]
    test_idx = perm[n_train:n_train + n_test]
    val_idx = perm[n_train + n_test:]
    return (
        ds.subset(train_idx, name=f"{ds.name}/train"),
        ds.subset(test_idx, name=f"{ds.name}/test"),
        ds.subset(val_idx, name=f"{ds.name}/val"),
    )


@dataclass(frozen=True)
class SyntheticConfig:
    num_bags: int = 500
    feature_dim: int = 10
    label_count: int = 6
    instances_min: int = 2
    instances_max: int = 5
    seed: int = 7
    noise_scale: float = 0.1

    def __post_init__(self):
        if self.instances_min < 1:
            raise ConfigError("instances_min must be >= 1")
        if self.instances_max < self.instances_min:
            raise ConfigError("instances_max must be >= instances_min")
        if self.label_count < 2:
            raise ConfigError("label_count must be >= 2")
        if self.num_bags < 1:
            raise ConfigError("num_bags must be >= 1")
        if self.feature_dim < 1:
            raise ConfigError("feature_dim must be >= 1")


def generate_synthetic(cfg: SyntheticConfig):
    """Generate bags with known ground-truth label distributions.

    Each label owns a latent feature prototype. A bag's ground-truth
    distribution is the normalized exponential of Gaussian draws; its
    instances are that distribution's prototype mixture plus Gaussian noise.
    Logical label j is 1 iff the distribution entry exceeds 1/(2t); bags
    without at least one positive and one negative label are resampled.
    """
    rng = np.random.default_rng(np.uint64(cfg.seed))
    t, d = cfg.label_count, cfg.feature_dim
    prototypes = rng.normal(size=(t, d))
    threshold = 1.0 / (2 * t)

    bags = []
    truths = []
    while len(bags) < cfg.num_bags:
        z = rng.normal(size=t)
        dist = np.exp(z - z.max())
        dist /= dist.sum()
        labels = (dist > threshold).astype(np.int64)
        if labels.sum() == 0 or labels.sum() == t:
            continue
        n_i = int(rng.integers(cfg.instances_min, cfg.instances_max + 1))
        base = dist @ prototypes
        inst = base[None, :] + cfg.noise_scale * rng.normal(size=(n_i, d))
        bags.append(Bag(inst, labels))
        truths.append(dist)

    ds = MIMLDataset(bags=bags, feature_dim=d, label_count=t,
                     name=f"synthetic-seed{cfg.seed}")
    return ds, truths


def normalized_logical_baseline(ds: MIMLDataset) -> np.ndarray:
    """Row-normalized logical labels: the naive distribution a recovery must beat."""
    L = ds.logical_matrix()
    sums = L.sum(axis=1, keepdims=True)
    sums[sums == 0] = 1.0
    return L / sums
