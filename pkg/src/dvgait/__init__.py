"""Dense-view gait lab: GEI synthesis by latent interpolation plus a
cross-view recognition harness, built on a small numpy autodiff core."""

__version__ = "0.1.0"
