"""Semantic-aware block compressed sensing.

Two-stage learned image sensing: a fixed base measurement pass, a policy
network that selects per-block measurement rows from a shared matrix, a
weight-generated initial reconstruction, and a deep refinement network,
trained end-to-end under a rate-distortion objective. Ships with a
fixed-ratio baseline and a classical DCT/OMP sparsity oracle.
"""

__version__ = "0.1.0"
