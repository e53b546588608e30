"""Co-segment the views of a scene with NMF and save colour label images.

Run: python3 demos/cosegmentation.py [out_dir]
"""

import sys
from pathlib import Path

import numpy as np

from mvs_selfsup import coseg, io
from mvs_selfsup.synth import plane_sphere_scene, render_scene

out = Path(sys.argv[1] if len(sys.argv) > 1 else "coseg_demo")
out.mkdir(parents=True, exist_ok=True)
scene = render_scene(plane_sphere_scene(n_views=3, size=64, seed=2))
maps, factors = coseg.cosegment(scene.images, kc=4, downsample=2, max_iters=200, seed=0)

trace = np.asarray(factors.error_trace)
print(f"reconstruction error {trace[0]:.4f} -> {trace[-1]:.4f} over {factors.iterations} iterations")
print(f"error never increased: {bool(np.all(np.diff(trace) <= 1e-9))}")
print(f"cluster sizes: {np.bincount(maps.argmax(-1).ravel(), minlength=4).tolist()}")
for i, m in enumerate(maps):
    io.write_png(out / f"labels_{i:02d}.png", coseg.label_image(m))
    io.write_png(out / f"view_{i:02d}.png", scene.images[i])
print(f"wrote label images to {out}/")
