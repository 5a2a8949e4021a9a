"""kmflow: Lagrangian mean curvature flow toward optimal transport maps on tori.

Subpackage layout mirrors the pipeline: periodic grids -> cost models ->
product-space geometry -> Lagrangian graph states -> flow engine -> transport
oracles -> CLI runner.
"""

__version__ = "0.1.0"
