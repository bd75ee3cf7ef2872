import numpy as np
import pytest

from ricecnn.dataset import Sample
from ricecnn.model import ArchitectureSpec, LayerSpec, init_weights
from ricecnn.netpbm import write_ppm
from ricecnn.rng import RngState


def tiny_spec(num_classes=3, input_shape=(12, 12, 3), filters=(4, 8), fc_units=8,
              dropout_rate=0.0):
    """A shrunken ladder with the same operator composition as the real
    network, small enough for exhaustive numeric checks."""
    layers = []
    for i, f in enumerate(filters, start=1):
        layers.append(LayerSpec("conv", f"conv{i}", filters=f, kernel=3, activation="relu"))
        if i < len(filters):
            layers.append(LayerSpec("pool", f"pool{i}"))
    layers.append(LayerSpec("flatten", "flatten"))
    layers.append(LayerSpec("dropout", "dropout", rate=dropout_rate))
    layers.append(LayerSpec("dense", "fc1", units=fc_units, activation="relu"))
    layers.append(LayerSpec("dense", "head", units=num_classes, activation="softmax"))
    return ArchitectureSpec(tuple(input_shape), tuple(layers))


def tiny_builder(num_classes, rng, input_shape=(12, 12, 3), filters=(4, 8), fc_units=8,
                 dropout_rate=0.0):
    spec = tiny_spec(num_classes, input_shape, filters, fc_units, dropout_rate)
    return spec, init_weights(spec, rng)


def class_image(rng: RngState, size: int, mean: float) -> np.ndarray:
    """A noisy image whose mean intensity encodes its class."""
    img = rng.normal(mean, 0.08, (size, size, 3))
    return np.clip(img, 0.0, 1.0)


def make_samples(class_specs, size=12, seed=0, prefix=""):
    """In-memory samples: class_specs is a list of (symptom, parent, count,
    mean intensity)."""
    rng = RngState(seed)
    samples = []
    for symptom, parent, count, mean in class_specs:
        for i in range(count):
            img = class_image(rng.derive(f"{symptom}/{i}"), size, mean)
            samples.append(Sample.from_array(f"{prefix}{symptom}/{i:03d}.ppm",
                                             symptom, parent, img))
    return samples


def write_dataset_tree(root, class_specs, size=12, seed=0):
    """Materialize class_specs as a PPM directory tree ('<parent>__<symptom>'
    directories)."""
    rng = RngState(seed)
    for symptom, parent, count, mean in class_specs:
        d = root / f"{parent}__{symptom}"
        d.mkdir(parents=True, exist_ok=True)
        for i in range(count):
            img = class_image(rng.derive(f"{symptom}/{i}"), size, mean)
            write_ppm(d / f"img{i:03d}.ppm", img)


# symptom-class image counts mirroring the field dataset this package was
# built around: 9 parent classes, 17 symptom variants, 1426 images total
FIELD_TAXONOMY_COUNTS = {
    "BPH__early_stage": 50,
    "BPH__late_stage": 21,
    "False_Smut__brown_symptom": 66,
    "False_Smut__black_symptom": 27,
    "Others__healthy_green_leaf_stem": 96,
    "Others__healthy_yellow_grain": 71,
    "Others__dead_leaf_stem": 67,
    "Hispa__visible_pests_white_spots": 53,
    "Hispa__intense_spots_no_pest": 20,
    "Stemborer__symptom_on_grain": 180,
    "Stemborer__symptom_on_stem": 21,
    "Sheath_Blight_Rot__black_stem": 70,
    "Sheath_Blight_Rot__white_spots": 77,
    "Sheath_Blight_Rot__mixed_symptom": 72,
    "BLB__default": 138,
    "Brown_Spot__default": 111,
    "Neck_Blast__default": 286,
}


@pytest.fixture(scope="session")
def field_layout_samples():
    """In-memory sample list mirroring the field dataset's class structure."""
    flat = np.full((4, 4, 3), 0.5)
    samples = []
    for name, count in sorted(FIELD_TAXONOMY_COUNTS.items()):
        parent = name.split("__", 1)[0]
        for i in range(count):
            samples.append(Sample.from_array(f"{name}/img{i:04d}.ppm", name, parent, flat))
    return samples
