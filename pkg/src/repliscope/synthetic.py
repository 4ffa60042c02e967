"""Procedural experiment fixtures with a known replication curve.

Each subset level is a set of small "images" lying on a low-dimensional
linear patch of pixel space. Generated samples are exact copies of training
rows (distance 0) or flat bright images far from every training row, so the
replication percentage is exactly ``copies / n_generated`` for any threshold
between 0 and the gap. The number of copies follows
``a ** (b * mu1 - c)`` evaluated at the measured intrinsic dimensionality,
rounded to whole samples.

Run ``python -m repliscope.synthetic OUT_DIR`` to write a manifest.
"""

from __future__ import annotations

import json
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .intrinsic_dim import IdConfig, estimate_id
from .vecstore import VectorDataset, write_vds


@dataclass(frozen=True)
class SyntheticCombo:
    name: str
    b: float
    sizes: tuple
    manifold_dims: tuple


DEFAULT_COMBOS = (
    SyntheticCombo("GanA-Shapes", 6.0, (100, 200, 400), (2, 3, 4)),
    SyntheticCombo("GanB-Shapes", 9.0, (100, 200, 400, 800), (2, 3, 4, 5)),
    SyntheticCombo("GanA-Textures", 12.0, (120, 240, 480), (3, 4, 6)),
)


def _patch(rng, n, manifold_dim, dim):
    """Points uniform on a random ``manifold_dim``-dimensional patch in [40, 160]^dim."""
    basis, _ = np.linalg.qr(rng.normal(size=(dim, manifold_dim)))
    coords = rng.uniform(-1.0, 1.0, size=(n, manifold_dim))
    pts = 100.0 + 60.0 * (coords @ basis.T) / np.sqrt(manifold_dim)
    return np.clip(pts, 0.0, 255.0).astype(np.float32)


def make_level(rng, size, manifold_dim, n_copies, n_generated, side=8, channels=3,
               name="level"):
    dim = side * side * channels
    train = _patch(rng, size, manifold_dim, dim)
    train_ds = VectorDataset(train, [f"{name}/train/{i:05d}" for i in range(size)])
    picks = rng.choice(size, size=n_copies, replace=n_copies > size)
    far = np.full((n_generated - n_copies, dim), 250.0, dtype=np.float32)
    far -= rng.uniform(0.0, 5.0, size=far.shape).astype(np.float32)
    gen = np.concatenate([train[picks], far])
    order = rng.permutation(n_generated)
    gen_ds = VectorDataset(gen[order], [f"{name}/gen/{i:05d}" for i in range(n_generated)])
    return train_ds, gen_ds


def make_synthetic_experiment(out_dir, combos=DEFAULT_COMBOS, a=0.97, c=100.0,
                              n_generated=1024, side=8, alpha=50.0, seed=0,
                              id_config=IdConfig()):
    """Write VDS files plus ``manifest.json`` under ``out_dir``.

    Returns ``(manifest_path, truth)``. ``truth`` maps each combo name to
    a list of ``(size, mu1, target_percent, realised_percent)`` tuples.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    manifest = {"alpha": alpha, "resolution": side, "id_resolution": side,
                "k1": id_config.k1, "k2": id_config.k2, "seed": seed, "combos": []}
    truth = {}
    for combo in combos:
        levels = []
        truth[combo.name] = []
        (out / combo.name).mkdir(exist_ok=True)
        for size, m in zip(combo.sizes, combo.manifold_dims):
            level_seed = int(rng.integers(2**63))
            level_rng = np.random.default_rng(level_seed)
            train, _ = make_level(level_rng, size, m, 0, n_generated, side)
            mu1 = estimate_id(train, id_config).value
            target = a ** (combo.b * mu1 - c)
            n_copies = int(round(n_generated * target / 100.0))
            level_rng = np.random.default_rng(level_seed)
            train, gen = make_level(level_rng, size, m, n_copies, n_generated, side,
                                    name=f"{combo.name}/{size}")
            rel_train = f"{combo.name}/train_{size}.vds"
            rel_gen = f"{combo.name}/gen_{size}.vds"
            write_vds(train, out / rel_train)
            write_vds(gen, out / rel_gen)
            levels.append({"size": size, "training_path": rel_train, "generated_path": rel_gen})
            truth[combo.name].append((size, mu1, target, 100.0 * n_copies / n_generated))
        manifest["combos"].append({"name": combo.name, "levels": levels})
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2) + "\n")
    return path, truth


def main(argv=None):
    argv = sys.argv[1:] if argv is None else argv
    if len(argv) != 1:
        print("usage: python -m repliscope.synthetic OUT_DIR", file=sys.stderr)
        return 2
    path, _ = make_synthetic_experiment(argv[0])
    print(path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
