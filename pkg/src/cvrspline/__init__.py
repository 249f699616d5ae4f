"""C1 biquadratic splines on hierarchical T-meshes via the CVR graph."""

__version__ = "0.1.0"
