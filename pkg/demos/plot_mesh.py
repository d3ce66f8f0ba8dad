"""Render a mesh dump file (as written by `slabdg dump-mesh` or the adaptive
study's per-step snapshots) as a rectangle plot.

Usage: python demos/plot_mesh.py MESH_FILE [OUTPUT.png]
"""

import sys

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
from matplotlib.patches import Rectangle


def main(argv):
    if not argv:
        print(__doc__)
        return 1
    path = argv[0]
    out = argv[1] if len(argv) > 1 else path.rsplit(".", 1)[0] + ".png"
    fig, ax = plt.subplots(figsize=(5, 5))
    z_max = 0.0
    count = 0
    with open(path) as fh:
        for line in fh:
            parts = line.split()
            if len(parts) != 7:
                continue
            z_lo, z_hi, mu_lo, mu_hi = map(float, parts[2:6])
            ax.add_patch(Rectangle((z_lo, mu_lo), z_hi - z_lo, mu_hi - mu_lo,
                                   fill=False, linewidth=0.3))
            z_max = max(z_max, z_hi)
            count += 1
    ax.set_xlim(0, z_max)
    ax.set_ylim(0, 1)
    ax.set_xlabel("z")
    ax.set_ylabel("mu")
    ax.set_title(f"{count} elements")
    fig.tight_layout()
    fig.savefig(out, dpi=150)
    print(f"wrote {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main(sys.argv[1:]))
