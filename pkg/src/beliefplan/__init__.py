"""beliefplan: a POMDP planning toolkit.

Exact dynamic programming over piecewise-linear convex value functions,
a family of fast value bounds, controller/grid/point-based approximations,
least-squares value fits, and a benchmark harness with a CLI.
"""

__version__ = "0.1.0"
