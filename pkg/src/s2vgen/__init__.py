"""Subject-to-video generation at desk scale: reference rotary positions, a small
flow-matching diffusion transformer, a synthetic cross-paired data pipeline and
subject-consistency / background-decoupling metrics."""

__version__ = "0.1.0"
