"""Pictures of the stretch map.

Writes SVG files into ``demos/out/gallery``:

* the chart's level curves in both halves of the square,
* marks on a few fibres before and after the fibre map,
* the image of a uniform lattice for several stretch factors.

It also prints how far each map moves area: the left half is scaled by
``1 + delta`` and the right half by ``1 - delta``.
"""
from pathlib import Path

import numpy as np

from bilipexpand import psi, psi_inverse
from bilipexpand.render import svg_fibres, svg_level_lines, svg_psi

OUT = Path(__file__).parent / "out" / "gallery"


def main():
    OUT.mkdir(parents=True, exist_ok=True)
    (OUT / "level_lines.svg").write_text(svg_level_lines())
    (OUT / "fibres.svg").write_text(svg_fibres(0.5))
    y = np.random.default_rng(0).random((200_000, 2))
    print(" delta   left-half image   (1+delta)/2")
    for delta in (0.1, 0.3, 0.5, -0.5):
        (OUT / f"lattice_{delta:+.1f}.svg").write_text(svg_psi(delta, lines=16))
        area = np.mean(psi_inverse(y, delta)[:, 0] < 0.5)
        print(f"{delta:+.1f}   {area:.4f}            {(1 + delta) / 2:.4f}")
    corner = np.array([[0.0, 0.0], [0.3, 0.0], [1.0, 0.7]])
    print("boundary points stay put:", np.abs(psi(corner, 0.5) - corner).max())
    print("figures in", OUT)


if __name__ == "__main__":
    main()
