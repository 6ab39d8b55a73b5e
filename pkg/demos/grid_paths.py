"""Generate a shortest-path grid sample and print it in the text format."""

import numpy as np

from compactnet.tasks import grid

s = grid.generate_grid(np.random.default_rng(3), D=6, size=12)
print(s.to_text())
print("curriculum for D up to 10:", grid.curriculum(10))
print(f"label fraction {s.labels.mean():.3f}")
