"""Generate the shared viewer/CLI parity fixtures.

Run from the repository root:

    python3 frontend/scripts/make_fixtures.py

Produces, under frontend/tests/fixtures/: a small trained model
(model.ply), the camera file, a prompt mask, the derived unit prompt
vector, expected stage-1 selections at t in {0.5, 0.7, 0.9}, and the
expected exported subset at t = 0.7 (byte-exact). The viewer tests assert
against these; tests/test_viewer_parity.py asserts the CLI side.
"""

import json
from pathlib import Path

import numpy as np

from splatseg.core_model import clone_subset
from splatseg.losses import LossConfig
from splatseg.model_io import write_cameras, write_mask, write_scene
from splatseg.segmentation import (feature_prompt_from_mask,
                                   select_by_similarity)
from splatseg.synthdata import SyntheticSpec, generate
from splatseg.trainer import TrainConfig, initialize, train

FIXTURES = Path(__file__).resolve().parent.parent / "tests" / "fixtures"
THRESHOLDS = (0.5, 0.7, 0.9)
MARGIN = 1e-9  # selections must be insensitive to last-ulp differences


def main() -> None:
    spec = SyntheticSpec(object_count=3, gaussians_per_object=40,
                         camera_count=6, image_size=48, seed=21)
    data = generate(spec)
    views = list(zip(data.cameras, data.images, data.masks))
    cfg = TrainConfig(iterations=150, seed=3)
    scene = initialize(data.scene.positions, data.scene.colors, seed=cfg.seed)
    scene, _ = train(scene, views, cfg, LossConfig(samples_per_view=1024))

    view = 0
    perm = data.permutations[view]
    prompt_mask = (data.masks[view] == perm[0] + 1).astype(np.int32)
    prompt = feature_prompt_from_mask(scene, data.cameras[view], prompt_mask)

    feats = scene.features
    norms = np.linalg.norm(feats, axis=1)
    sims = (feats / norms[:, None]) @ prompt.vector
    for t in THRESHOLDS:
        margin = np.abs(sims - t).min()
        assert margin > MARGIN, f"similarity within {margin} of t={t}; reseed"

    expected = {str(t): select_by_similarity(scene, prompt, t).tolist()
                for t in THRESHOLDS}
    assert len(expected["0.7"]) > 0

    FIXTURES.mkdir(parents=True, exist_ok=True)
    write_scene(scene, FIXTURES / "model.ply")
    write_cameras(data.cameras, FIXTURES / "cameras.txt")
    write_mask(prompt_mask, FIXTURES / "prompt_mask.pgm")
    subset = clone_subset(scene, np.asarray(expected["0.7"]))
    write_scene(subset, FIXTURES / "expected_subset.ply")
    # Untrained ground-truth scene: objects with uniform one-hot features,
    # used by the click-to-select test.
    write_scene(data.scene, FIXTURES / "gt_scene.ply")
    meta = {
        "count": len(scene),
        "camera_id": view,
        "t": 0.7,
        "prompt": prompt.vector.tolist(),
        "expected": expected,
        "gt_labels": data.labels.tolist(),
        "gt_centers": data.centers.tolist(),
    }
    (FIXTURES / "meta.json").write_text(json.dumps(meta, indent=1))
    print(f"fixtures written to {FIXTURES}: model with {len(scene)} Gaussians, "
          f"stage-1 sizes " +
          ", ".join(f"t={t}: {len(expected[str(t)])}" for t in THRESHOLDS))


if __name__ == "__main__":
    main()
