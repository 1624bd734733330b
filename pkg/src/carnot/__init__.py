"""Sub-Riemannian geometry of Carnot groups: geodesics, exponential maps,
variation formulas, distances, and distance-from-hypersurface charts."""

__version__ = "0.1.0"
