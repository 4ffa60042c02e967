"""JSON experiment manifests and the per-combo measurement pipeline."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .intrinsic_dim import IdConfig
from .predictor import ComboRecord
from .replication import (DEFAULT_ALPHA, default_alpha_allowed,
                          sample_replication_points)
from .vecstore import read_vds

logger = logging.getLogger(__name__)


class ManifestError(ValueError):
    pass


@dataclass(frozen=True)
class Level:
    size: int
    training_path: Path
    generated_path: Path


@dataclass(frozen=True)
class ComboSpec:
    name: str
    levels: tuple


@dataclass
class ExperimentManifest:
    combos: list
    alpha: float = DEFAULT_ALPHA
    alpha_explicit: bool = False
    resolution: int = 128
    id_resolution: int = 32
    k1: int = 10
    k2: int = 20
    seed: int = 0
    base_dir: Path = field(default_factory=Path.cwd)

    @property
    def id_config(self) -> IdConfig:
        return IdConfig(self.k1, self.k2)


def load_manifest(path) -> ExperimentManifest:
    """Parse a manifest; relative paths resolve against the manifest's directory."""
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ManifestError(f"{path}: invalid JSON ({exc})") from None
    base = path.resolve().parent
    if not isinstance(raw.get("combos"), list):
        raise ManifestError(f"{path}: 'combos' must be a list")

    combos = []
    seen = set()
    for entry in raw["combos"]:
        name = entry.get("name")
        if not name:
            raise ManifestError("every combo needs a name")
        if name in seen:
            raise ManifestError(f"duplicate combo name {name!r}")
        seen.add(name)
        levels = []
        for lv in entry.get("levels", []):
            try:
                levels.append(Level(int(lv["size"]), base / lv["training_path"],
                                    base / lv["generated_path"]))
            except KeyError as exc:
                raise ManifestError(f"combo {name!r}: level is missing {exc}") from None
        if not levels:
            raise ManifestError(f"combo {name!r} has no levels")
        sizes = [lv.size for lv in levels]
        if any(b <= a for a, b in zip(sizes, sizes[1:])):
            raise ManifestError(f"combo {name!r}: level sizes must be strictly increasing")
        combos.append(ComboSpec(name, tuple(levels)))

    m = ExperimentManifest(
        combos=combos,
        alpha=float(raw.get("alpha", DEFAULT_ALPHA)),
        alpha_explicit="alpha" in raw,
        resolution=int(raw.get("resolution", 128)),
        id_resolution=int(raw.get("id_resolution", 32)),
        k1=int(raw.get("k1", 10)),
        k2=int(raw.get("k2", 20)),
        seed=int(raw.get("seed", 0)),
        base_dir=base,
    )
    if m.id_resolution > m.resolution:
        raise ManifestError("id_resolution exceeds resolution")
    try:
        IdConfig(m.k1, m.k2)
    except ValueError as exc:
        raise ManifestError(str(exc)) from None
    return m


def check_files(manifest: ExperimentManifest):
    for combo in manifest.combos:
        for lv in combo.levels:
            for p in (lv.training_path, lv.generated_path):
                if not p.is_file():
                    raise FileNotFoundError(f"combo {combo.name!r}: missing file {p}")


def measure_combo(combo: ComboSpec, manifest: ExperimentManifest, workers=None,
                  warnings: Optional[list] = None) -> ComboRecord:
    experiment = []
    for lv in combo.levels:
        train = read_vds(lv.training_path)
        gen = read_vds(lv.generated_path)
        if not manifest.alpha_explicit and not default_alpha_allowed(train):
            raise ManifestError(
                f"combo {combo.name!r}: the default alpha={DEFAULT_ALPHA:g} only applies to raw "
                f"128x128x3 pixels (dim {train.dim}, {train.space_tag.label}); "
                "set 'alpha' in the manifest"
            )
        if train.count != lv.size and warnings is not None:
            warnings.append(
                f"combo {combo.name!r}: level size {lv.size} but training file holds {train.count} rows"
            )
        experiment.append((train, gen, manifest.alpha))
    points = sample_replication_points(experiment, manifest.alpha, manifest.id_config,
                                       manifest.id_resolution, workers, warnings)
    return ComboRecord(combo.name, points)


def measure_all(manifest: ExperimentManifest, workers=None, warnings: Optional[list] = None):
    check_files(manifest)
    return [measure_combo(c, manifest, workers, warnings) for c in manifest.combos]
