"""Static SVG figures: warped lattices, chart level lines and fibre stretching."""
import numpy as np

from .polarmap import _kinv
from .profile import default_profile
from .stretch import psi, solve_g

COLOURS = ("#1f4e79", "#b03a2e", "#1e8449", "#7d3c98", "#b9770e", "#117a65")


def _svg(size, body, title):
    return (f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" '
            f'viewBox="-0.02 -0.02 1.04 1.04">\n<title>{title}</title>\n'
            f'<g transform="matrix(1 0 0 -1 0 1)" fill="none" stroke-width="0.002">\n'
            '<rect x="0" y="0" width="1" height="1" stroke="#888"/>\n'
            f"{body}</g>\n</svg>\n")


def _polyline(pts, colour, width=None):
    coords = " ".join(f"{x:.6f},{y:.6f}" for x, y in pts)
    w = f' stroke-width="{width}"' if width else ""
    return f'<polyline points="{coords}" stroke="{colour}"{w}/>\n'


def lattice_lines(lines=16, samples=257):
    """Horizontal and vertical lines of a uniform lattice as arrays of points."""
    t = np.linspace(0.0, 1.0, samples)
    out = []
    for c in np.linspace(0.0, 1.0, lines + 1)[1:-1]:
        out.append(np.stack([np.full_like(t, c), t], -1))
        out.append(np.stack([t, np.full_like(t, c)], -1))
    return out


def svg_lattice(fmap, lines=16, samples=257, size=512, title="warped lattice"):
    """Image of a uniform lattice under a map (anything with ``evaluate``)."""
    segs = lattice_lines(lines, samples)
    img = fmap(np.concatenate(segs)) if callable(fmap) else fmap.evaluate(np.concatenate(segs))
    img = img.reshape(len(segs), samples, 2)
    body = "".join(_polyline(p, COLOURS[k % 2]) for k, p in enumerate(img))
    return _svg(size, body, title)


def svg_level_lines(radii=None, samples=257, size=512, profile=None):
    """Curves of constant chart radius in both halves of the square."""
    profile = profile or default_profile()
    if radii is None:
        radii = np.concatenate([np.linspace(0.02, profile.r0, 6), np.linspace(profile.r0, 0.499, 8)[1:]])
    th = np.linspace(-1.0, 1.0, samples)
    body = []
    for k, r in enumerate(radii):
        x, y = _kinv(np.full_like(th, r), th, profile)
        colour = COLOURS[0] if r <= profile.r0 else COLOURS[1]
        body.append(_polyline(np.stack([x, y], -1), colour))
        body.append(_polyline(np.stack([x, 1.0 - y], -1), colour))
    return _svg(size, "".join(body), "chart level lines")


def svg_fibres(delta, radii=(0.1, 0.2, 0.3, 0.4), marks=17, size=512, profile=None):
    """Marks equally spaced in angle on some fibres and their images under the fibre map."""
    profile = profile or default_profile()
    th = np.linspace(-1.0, 1.0, marks)
    body = []
    for r in radii:
        rr = np.full_like(th, r)
        x, y = _kinv(rr, th, profile)
        body.append(_polyline(np.stack([x, y], -1), "#888"))
        gx, gy = _kinv(rr, solve_g(rr, th, delta, profile), profile)
        for a, b, c, d in zip(x, y, gx, gy):
            body.append(f'<circle cx="{a:.6f}" cy="{b:.6f}" r="0.004" stroke="{COLOURS[0]}"/>\n')
            body.append(f'<circle cx="{c:.6f}" cy="{d:.6f}" r="0.004" fill="{COLOURS[1]}" stroke="none"/>\n')
    return _svg(size, "".join(body), f"fibre stretching, delta={delta}")


def svg_psi(delta, lines=16, size=512):
    return svg_lattice(lambda p: psi(p, delta), lines=lines, size=size, title=f"Psi lattice, delta={delta}")
