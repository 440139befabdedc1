"""
Desk-scale synthetic zero-shot tasks.

A ground-truth projection (linear, or a tanh two-layer network) is drawn
first; acoustic embeddings are then constructed so that the ground truth
sends every instance onto the direction of its class semantic embedding,
before isotropic noise is added. Seen, validation and unseen classes are
disjoint.

Classes are grouped into families, one per seen class by default. Validation
and unseen classes join the family of a seen class, so knowledge learned on
seen classes has something to transfer to.
"""

import logging
from dataclasses import dataclass
from enum import Enum

import numpy as np

from embedding_data import ClassTable, EmbeddingVector, FoldAssignment, LabeledDataset, LabeledInstance
from errors import ConfigError
from projection_models import FC2, Activation, Bilinear, ProjectionModel


class MapKind(str, Enum):
    LINEAR = "linear"
    TANH_MLP = "tanh-mlp"


GROUPS = ("seen", "val", "unseen")
# members of a tanh family take magnitude rungs in this order, from the bottom
RUNG_ORDER = ("unseen", "seen", "val")


@dataclass(frozen=True)
class SynthSpec:
    acoustic_dim: int = 16
    semantic_dim: int = 12
    seen_classes: int = 8
    unseen_classes: int = 8
    val_classes: int = 4
    samples_per_class: int = 20
    noise: float = 0.0
    map_kind: MapKind = MapKind.LINEAR
    seed: int = 0
    latent_dim: int | None = None
    val_fraction: float = 0.25
    within_class_spread: float = 0.3
    families: int | None = None
    family_spread: float = 0.1
    saturation: float = 4.0
    magnitude_ratio: float = 3.0

    def __post_init__(self):
        try:
            object.__setattr__(self, "map_kind", MapKind(self.map_kind))
        except ValueError:
            raise ConfigError(f"Unknown map kind '{self.map_kind}', expected one of {[k.value for k in MapKind]}") from None
        for name in ("acoustic_dim", "semantic_dim", "seen_classes", "unseen_classes", "samples_per_class"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.val_classes < 0:
            raise ConfigError(f"val_classes must be non-negative, got {self.val_classes}")
        if self.noise < 0 or self.within_class_spread < 0 or self.family_spread < 0:
            raise ConfigError("noise, within_class_spread and family_spread must be non-negative")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ConfigError(f"val_fraction must lie in [0, 1), got {self.val_fraction}")
        if self.val_classes == 0 and (self.samples_per_class < 2 or self.val_fraction == 0.0):
            raise ConfigError(
                "Without validation classes, seen classes need samples_per_class >= 2 and val_fraction > 0 "
                "to hold out validation instances"
            )
        if self.saturation <= 0:
            raise ConfigError(f"saturation must be positive, got {self.saturation}")
        if self.magnitude_ratio <= 1:
            raise ConfigError(f"magnitude_ratio must exceed 1, got {self.magnitude_ratio}")
        if self.map_kind is MapKind.LINEAR and self.semantic_dim > self.acoustic_dim:
            raise ConfigError("A linear ground truth needs semantic_dim <= acoustic_dim")
        if self.latent_dim is not None and not 1 <= self.latent_dim <= self.semantic_dim:
            raise ConfigError(f"latent_dim must lie in [1, {self.semantic_dim}], got {self.latent_dim}")
        if self.families is not None and not 1 <= self.families <= self.seen_classes:
            raise ConfigError(f"families must lie in [1, {self.seen_classes}], got {self.families}")

    @property
    def hidden_dim(self) -> int:
        return min(self.acoustic_dim, self.semantic_dim)

    @property
    def n_families(self) -> int:
        return self.seen_classes if self.families is None else self.families

    def group_sizes(self) -> dict[str, int]:
        return {"seen": self.seen_classes, "val": self.val_classes, "unseen": self.unseen_classes}

    def held_out_per_class(self) -> int:
        """Validation instances taken from each seen class (0 with a validation class fold)."""
        if self.val_classes:
            return 0
        return min(max(1, int(self.samples_per_class * self.val_fraction)), self.samples_per_class - 1)


@dataclass(frozen=True, eq=False)
class SyntheticTask:
    train: LabeledDataset
    val: LabeledDataset
    test: LabeledDataset
    classes: ClassTable
    seen_classes: ClassTable
    val_classes: ClassTable
    unseen_classes: ClassTable
    folds: FoldAssignment
    ground_truth: ProjectionModel
    spec: SynthSpec


def _orthonormal_split(rng: np.random.Generator, rows: int, cols: int) -> tuple[np.ndarray, np.ndarray]:
    """Random (rows, cols) matrix with orthonormal columns, plus a basis of its orthogonal complement."""
    q, _ = np.linalg.qr(rng.standard_normal((rows, rows)))
    return q[:, :cols], q[:, cols:]


def _class_layout(spec: SynthSpec) -> tuple[list[str], np.ndarray, np.ndarray, np.ndarray]:
    """
    Class ids with their family and magnitude rung.

    The j-th class of each group joins family j % n_families. Inside a
    family, unseen, seen and validation members take turns climbing the rungs.

    Returns:
        tuple[list[str], np.ndarray, np.ndarray, np.ndarray]: Class ids, then family
        index, magnitude rung and family size per class.
    """
    sizes = spec.group_sizes()
    class_ids, families, groups = [], [], []
    for group in GROUPS:
        for j in range(sizes[group]):
            class_ids.append(f"{group}_{j:03d}")
            families.append(j % spec.n_families)
            groups.append(group)
    families = np.array(families, dtype=np.int64)
    rungs = np.zeros(len(class_ids), dtype=np.int64)
    family_size = np.bincount(families, minlength=spec.n_families)[families]
    for family in range(spec.n_families):
        queues = {group: [i for i in range(len(class_ids)) if families[i] == family and groups[i] == group]
                  for group in RUNG_ORDER}
        rung = 0
        while any(queues.values()):
            for group in RUNG_ORDER:
                if queues[group]:
                    rungs[queues[group].pop(0)] = rung
                    rung += 1
    return class_ids, families, rungs, family_size


def generate_synthetic_task(spec: SynthSpec) -> SyntheticTask:
    """
    Build train / validation / test splits and class tables for a synthetic task.

    Linear maps: every family gets a standard-normal anchor code (optionally
    through a latent_dim-dimensional basis); each class code is its anchor
    plus `family_spread` relative noise, and the semantic vector is the code
    scaled to unit norm. The ground truth is a bilinear W with orthonormal
    columns.

    Tanh-mlp maps: every family gets a standard-normal direction g; a class
    on rung k of a family of n sits at magnitude
    saturation * magnitude_ratio ** (k - n + 1) along g. Its semantic vector
    is tanh(code) V scaled to unit norm, with V of orthonormal rows, and the
    ground truth is FC2-tanh(U, V). Family members share an acoustic
    direction, so only a model that bends with magnitude tells them apart.

    Args:
        spec (SynthSpec): Generator configuration.

    Returns:
        SyntheticTask: Its `ground_truth` projects every zero-noise instance
        onto a positive multiple of its class semantic embedding.
    """
    rng = np.random.default_rng(spec.seed)
    class_ids, family_of, rungs, family_size = _class_layout(spec)
    n_classes = len(class_ids)

    if spec.map_kind is MapKind.LINEAR:
        code_dim = spec.semantic_dim if spec.latent_dim is None else spec.latent_dim
        anchors = rng.standard_normal((spec.n_families, code_dim))
        codes = anchors[family_of] + spec.family_spread * rng.standard_normal((n_classes, code_dim))
        if spec.latent_dim is not None:
            codes = codes @ rng.standard_normal((spec.semantic_dim, spec.latent_dim)).T
        codes = codes / np.linalg.norm(codes, axis=1, keepdims=True)
        semantic = codes
        W, null_basis = _orthonormal_split(rng, spec.acoustic_dim, spec.semantic_dim)
        ground_truth: ProjectionModel = Bilinear(W=W)
        encoder = W
        scale = np.ones(n_classes)
    else:
        hidden = spec.hidden_dim
        directions = rng.standard_normal((spec.n_families, hidden))
        scale = spec.saturation * spec.magnitude_ratio ** (rungs - family_size + 1.0)
        codes = scale[:, None] * directions[family_of]
        V = _orthonormal_split(rng, spec.semantic_dim, hidden)[0].T
        semantic = np.tanh(codes) @ V
        semantic = semantic / np.linalg.norm(semantic, axis=1, keepdims=True)
        U, null_basis = _orthonormal_split(rng, spec.acoustic_dim, hidden)
        ground_truth = FC2(U=U, V=V, nonlinearity=Activation.TANH)
        encoder = U

    classes = ClassTable({class_id: semantic[i] for i, class_id in enumerate(class_ids)})
    n_val = spec.held_out_per_class()

    train_items, val_items, test_items = [], [], []
    for index, class_id in enumerate(class_ids):
        # theta @ encoder recovers the class code exactly before noise
        base = codes[index] @ encoder.T
        jitter = rng.standard_normal((spec.samples_per_class, null_basis.shape[1])) @ null_basis.T
        noise = rng.standard_normal((spec.samples_per_class, spec.acoustic_dim))
        acoustic = base + spec.within_class_spread * scale[index] * jitter + spec.noise * noise
        items = [
            LabeledInstance(f"{class_id}_{j:04d}", EmbeddingVector(acoustic[j]), class_id)
            for j in range(spec.samples_per_class)
        ]
        if class_id.startswith("seen_"):
            cut = spec.samples_per_class - n_val
            train_items.extend(items[:cut])
            val_items.extend(items[cut:])
        elif class_id.startswith("val_"):
            val_items.extend(items)
        else:
            test_items.extend(items)

    seen = classes.subset(c for c in class_ids if c.startswith("seen_"))
    unseen = classes.subset(c for c in class_ids if c.startswith("unseen_"))
    val_table = classes.subset(c for c in class_ids if c.startswith("val_")) if spec.val_classes else seen
    fold_of = {"seen": 0, "unseen": 1, "val": 2}
    folds = FoldAssignment({c: fold_of[c.split("_")[0]] for c in class_ids}, 3 if spec.val_classes else 2)

    logging.info(
        f"Synthetic {spec.map_kind.value} task: {len(train_items)} train, {len(val_items)} val, "
        f"{len(test_items)} test instances over {n_classes} classes in {spec.n_families} families (seed {spec.seed})"
    )
    return SyntheticTask(
        train=LabeledDataset(tuple(train_items), spec.acoustic_dim),
        val=LabeledDataset(tuple(val_items), spec.acoustic_dim),
        test=LabeledDataset(tuple(test_items), spec.acoustic_dim),
        classes=classes,
        seen_classes=seen,
        val_classes=val_table,
        unseen_classes=unseen,
        folds=folds,
        ground_truth=ground_truth,
        spec=spec,
    )
