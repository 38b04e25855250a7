"""Embed a sparse Poisson sample into a dense one, roughly isometrically.

For one seed on ``[0, 6]^2``: the occupied unit squares of ``X`` are
expanded to nearly the whole square, the dense sample ``Y`` is drawn
conditioned on the event that every cell of side 1/2 meeting the image
holds a point (and no other cell does), and each ``X`` point is sent to
a nearby ``Y`` point.  The measured rough-isometry constants are printed
next to their a-priori bounds, along with the exact probability of the
event, which is tiny at this size.
"""
import math

from bilipexpand.poisson import (build_stretch, embed, kappa_cells, sample_given_event,
                                 sample_poisson, solve_delta_prime)


def main(n=6, seed=3, kappa=0.5, eps=7.0):
    dp = solve_delta_prime(kappa, eps)
    x = sample_poisson(n, 1.0, seed=2 * seed)
    stretch = build_stretch(x, 0.3, dp, seed=seed)
    image_pts = stretch[0].evaluate(x.points / n) * n
    cells = kappa_cells(stretch[2], n, kappa, image_pts)
    y = sample_given_event(n, 10.0, cells, kappa, seed=seed)
    rep = embed(x, y, 0.3, eps, seed, kappa, dp, stretch=stretch)
    lam = 10.0 * kappa ** 2
    b = int(cells.sum())
    p_event = (1 - math.exp(-lam)) ** b * math.exp(-lam * (cells.size - b))
    print(f"k_X = {rep.k_x} of {n * n} squares, image measure {rep.measure_image:.3f} "
          f"after {rep.steps} steps")
    print(f"M = {rep.M:.2f}")
    print(f"D = {rep.D:.4f}  (bound {rep.D_bound:.4f})")
    print(f"C = {rep.C:.4f}  (bound {rep.C_bound:.4f})")
    print(f"valid on all {rep.n_pairs} pairs: {rep.valid}")
    print(f"P(event) for this cell set: {p_event:.3g}")


if __name__ == "__main__":
    main()
