"""Bi-Lipschitz boundary-fixing stretch maps and multiscale measure expansion in the unit square."""
from .profile import Profile, default_profile
from .stretch import psi, psi_inverse, psi_jacobian, psi_rect, RectFrame, calibrate_delta
from .dyadic import PixelSet, DensityTree, DyadicBox, ingest
from .multiscale import (MapStack, ComposedMap, StopConfig, compose, stop_scan,
                         expansion_step, expand_to_target, martingale_diagnostics)
from .verify import (estimate_lipschitz, estimate_pushforward_measure,
                     check_boundary_and_bijection)

__version__ = "0.1.0"
