"""Dataset ingestion, the two-level class taxonomy, and stratified k-fold
planning.

A dataset is a directory tree with one subdirectory per symptom class named
``<parent>__<symptom>`` containing binary P6 PPM images. The taxonomy (the
parent classes, the finer symptom classes, and the symptom->parent
projection) is inferred from the directory names. Fold planning stratifies
by parent class; augmented variants always inherit the fold of their source
original so a variant can never leak across the train/validation split.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .netpbm import NetpbmError, read_ppm, read_ppm_header
from .rng import RngState


class DatasetError(ValueError):
    pass


_DIRNAME_RE = re.compile(r"^(?P<parent>[^_].*?)__(?P<symptom>.+)$")


@dataclass(frozen=True)
class ClassTaxonomy:
    parents: tuple[str, ...]
    symptoms: tuple[str, ...]          # full "<parent>__<symptom>" names
    parent_of: dict[str, str]          # symptom name -> parent name

    def __post_init__(self):
        if set(self.parent_of) != set(self.symptoms):
            raise DatasetError("projection must be total over the symptom classes")
        covered = set(self.parent_of.values())
        if covered != set(self.parents):
            missing = sorted(set(self.parents) - covered)
            raise DatasetError(f"parents with zero symptom classes: {missing}")

    def parent_index(self, name: str) -> int:
        return self.parents.index(name)

    def symptom_index(self, name: str) -> int:
        return self.symptoms.index(name)

    def project(self, symptom: str) -> str:
        try:
            return self.parent_of[symptom]
        except KeyError:
            raise DatasetError(f"unknown symptom class {symptom!r}") from None

    def to_dict(self) -> dict:
        return {
            "parents": list(self.parents),
            "symptoms": list(self.symptoms),
            "parent_of": {s: self.parent_of[s] for s in self.symptoms},
        }


def project_label(taxonomy: ClassTaxonomy, symptom_id: str) -> str:
    return taxonomy.project(symptom_id)


def taxonomy_from_symptoms(symptom_names: list[str]) -> ClassTaxonomy:
    """Build a taxonomy from ``<parent>__<symptom>`` directory names."""
    parent_of: dict[str, str] = {}
    parents: list[str] = []
    for name in symptom_names:
        m = _DIRNAME_RE.match(name)
        if not m:
            raise DatasetError(
                f"class directory {name!r} does not follow <parent>__<symptom>")
        parent = m.group("parent")
        parent_of[name] = parent
        if parent not in parents:
            parents.append(parent)
    return ClassTaxonomy(tuple(parents), tuple(symptom_names), parent_of)


@dataclass
class Sample:
    """One image: an original read from disk, or a lazily materialized
    augmented variant of another sample."""

    id: str
    symptom: str
    parent: str
    path: Path | None = None
    source: "Sample | None" = None
    plan: list | None = None           # augmentation plan for variants
    _cache: np.ndarray | None = field(default=None, repr=False, compare=False)
    _size: tuple[int, int] | None = field(default=None, repr=False, compare=False)

    @property
    def is_original(self) -> bool:
        return self.source is None

    @property
    def origin_id(self) -> str:
        """Id of the original this sample descends from (itself if original)."""
        s = self
        while s.source is not None:
            s = s.source
        return s.id

    def image_size(self) -> tuple[int, int]:
        if self._size is not None:
            return self._size
        if self.path is not None:
            self._size = read_ppm_header(self.path)
        elif self._cache is not None:
            self._size = self._cache.shape[:2]
        else:
            self._size = self.source.image_size()
        return self._size

    def load_pixels(self, target_hw: tuple[int, int] | None = None) -> np.ndarray:
        """(H, W, 3) float64 pixels in [0, 1]. Originals are resized to
        target_hw (the resized result is cached as 8-bit); variants re-apply
        their augmentation plan to the source pixels on every call."""
        from .augment import apply_plan, resize

        if not self.is_original:
            return apply_plan(self.source.load_pixels(target_hw), self.plan)
        if target_hw is not None:
            target_hw = (int(target_hw[0]), int(target_hw[1]))
        if self._cache is None:
            if self.path is None:
                raise DatasetError(f"sample {self.id} has no pixel source")
            img = read_ppm(self.path)
        elif target_hw is not None and self._cache.shape[:2] != target_hw:
            img = self._cache / 255.0
        else:
            return self._cache / 255.0
        if target_hw is not None and img.shape[:2] != target_hw:
            img = resize(img, *target_hw)
        self._cache = np.rint(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)
        self._size = self._cache.shape[:2]
        return self._cache / 255.0

    @staticmethod
    def from_array(id: str, symptom: str, parent: str, pixels: np.ndarray) -> "Sample":
        s = Sample(id=id, symptom=symptom, parent=parent)
        s._cache = np.rint(np.clip(np.asarray(pixels, dtype=np.float64), 0, 1) * 255).astype(np.uint8)
        s._size = s._cache.shape[:2]
        return s


def load_manifest(root) -> tuple[ClassTaxonomy, list[Sample]]:
    """Scan a dataset tree. Directories become symptom classes, files become
    samples, and everything is ordered lexicographically so repeated loads
    enumerate identically."""
    root = Path(root)
    if not root.is_dir():
        raise DatasetError(f"dataset root {root} does not exist")
    class_dirs = sorted(p for p in root.iterdir() if p.is_dir())
    if not class_dirs:
        raise DatasetError(f"no classes found under {root}")
    taxonomy = taxonomy_from_symptoms([p.name for p in class_dirs])
    samples: list[Sample] = []
    for d in class_dirs:
        files = sorted(p for p in d.iterdir() if p.is_file() and p.suffix == ".ppm")
        if not files:
            raise DatasetError(f"class directory {d.name!r} contains no .ppm images")
        for f in files:
            try:
                read_ppm_header(f)
            except NetpbmError as exc:
                raise DatasetError(f"ill-formed image {f}: {exc}") from exc
            samples.append(Sample(
                id=str(f.relative_to(root)),
                symptom=d.name,
                parent=taxonomy.project(d.name),
                path=f,
            ))
    return taxonomy, samples


@dataclass
class FoldPlan:
    k: int
    assignment: dict[str, int]        # original sample id -> fold index

    def fold_of(self, sample: Sample) -> int:
        """Fold of a sample; augmented variants inherit their source's fold."""
        try:
            return self.assignment[sample.origin_id]
        except KeyError:
            raise DatasetError(f"sample {sample.id!r} is not covered by the fold plan") from None

    def validate(self, samples: list[Sample]) -> None:
        originals = {s.id for s in samples if s.is_original}
        assigned = set(self.assignment)
        if assigned != originals:
            raise DatasetError("fold plan does not partition the original samples")
        if any(not 0 <= f < self.k for f in self.assignment.values()):
            raise DatasetError("fold index out of range")


def stratified_kfold(samples: list[Sample], k: int, seed: int) -> FoldPlan:
    """Stratified fold assignment over the original samples.

    Each parent class is shuffled with its own derived stream and dealt
    around the folds; the dealing offset carries over from class to class so
    overall fold sizes also differ by at most one.
    """
    if k < 2:
        raise DatasetError(f"k must be >= 2, got {k}")
    originals = [s for s in samples if s.is_original]
    by_parent: dict[str, list[Sample]] = {}
    for s in originals:
        by_parent.setdefault(s.parent, []).append(s)
    for parent, members in by_parent.items():
        if len(members) < k:
            raise DatasetError(
                f"class {parent!r} has {len(members)} originals, fewer than k={k}")
    master = RngState(seed).derive("kfold")
    assignment: dict[str, int] = {}
    offset = 0
    for parent in sorted(by_parent):
        members = by_parent[parent]
        order = master.derive(f"class/{parent}").permutation(len(members))
        for i, idx in enumerate(order):
            assignment[members[idx].id] = (offset + i) % k
        offset = (offset + len(members)) % k
    return FoldPlan(k, assignment)


def write_manifest(path, taxonomy: ClassTaxonomy, samples: list[Sample],
                   fold_plan: FoldPlan | None = None) -> None:
    """Serialize the resolved taxonomy, sample list and (optionally) fold
    assignment as stable-ordered JSON for audit."""
    doc = {
        "taxonomy": taxonomy.to_dict(),
        "samples": [
            {
                "id": s.id,
                "symptom": s.symptom,
                "parent": s.parent,
                "origin": "original" if s.is_original else f"augmented:{s.source.id}",
            }
            for s in samples
        ],
    }
    if fold_plan is not None:
        doc["folds"] = {
            "k": fold_plan.k,
            "assignment": {sid: fold_plan.assignment[sid]
                           for sid in sorted(fold_plan.assignment)},
        }
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
