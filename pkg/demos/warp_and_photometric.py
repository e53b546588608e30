"""Warp source views into the reference frame and score photometric consistency.

Run: python3 demos/warp_and_photometric.py
"""

import numpy as np

from mvs_selfsup.geometry import warp_grid
from mvs_selfsup.losses import photometric_loss
from mvs_selfsup.synth import plane_sphere_scene, render_scene

scene = render_scene(plane_sphere_scene(n_views=3, size=64, seed=0))
ref_cam, gt = scene.cameras[0], scene.depths[0]


def score(depth):
    pairs = []
    for img, cam in zip(scene.images[1:], scene.cameras[1:]):
        pairs.append(warp_grid(img, depth, ref_cam.intrinsics, cam.intrinsics, cam.relative_to(ref_cam)))
    return photometric_loss(scene.images[0], pairs)[0], pairs


value, pairs = score(gt)
print(f"valid fraction per source view: {[round(float(m.mean()), 3) for _, m in pairs]}")
for scale in (0.9, 0.95, 1.0, 1.05, 1.1):
    v, _ = score(gt.with_values(np.clip(gt.values * scale, gt.d_min, gt.d_max)))
    print(f"depth x {scale:4.2f}: photometric loss {v:.5f}")
