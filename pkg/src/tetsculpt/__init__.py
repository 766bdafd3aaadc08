"""tetsculpt: desk-scale 3D shape and texture sculpting.

A tetrahedral-grid surface and an albedo field are optimized end to end
against (a) score gradients from a small pose-conditioned diffusion prior
and (b) reconstruction losses on a fixed set of mask / normal / RGB view
templates.
"""

__version__ = "0.1.0"
