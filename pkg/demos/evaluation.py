"""Accuracy and completeness between a perturbed cloud and ground truth.

Run: python3 demos/evaluation.py
"""

import numpy as np

from mvs_selfsup.metrics import depth_to_points, evaluate
from mvs_selfsup.synth import plane_sphere_scene, render_scene

scene = render_scene(plane_sphere_scene(n_views=2, size=64, seed=0))
gt_pts = depth_to_points(scene.depths[0], scene.cameras[0])
rng = np.random.default_rng(0)
for sigma in (0.0, 0.01, 0.05):
    recon = gt_pts + rng.normal(0, sigma, gt_pts.shape)
    r = evaluate(recon[::2], gt_pts)
    print(f"noise {sigma:4.2f}: accuracy {r.accuracy:.4f}, completeness {r.completeness:.4f}, overall {r.overall:.4f}")
