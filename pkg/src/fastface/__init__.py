"""Few-step guidance and decoupled-attention map transforms for ID-preserving diffusion.

Desk-scale numerics: decoupled classifier-free guidance with boundary-clamped
scheduling and std rescaling, scale-power and scheduled-softmask transforms for
decoupled attention maps, a small deterministic sampler, and the evaluation
protocol (identity filtering, metric aggregation, Pareto fronts).
"""

__version__ = "0.1.0"
