"""Geometry and solver configuration shared by all reconstruction backends."""

from __future__ import annotations

from dataclasses import dataclass, replace

INTERIOR = "interior"
WRAP = "wrap"


class ConfigurationError(ValueError):
    """Inconsistent geometry or solver settings (e.g. window too small for M)."""


@dataclass(frozen=True)
class PatchGeometry:
    """Patch, group, and search-window sizes.

    side         patch edge length; a patch holds n = side**2 pixels per channel
    depth        l, number of matched patches stacked into one 3D coding vector
    match_count  M, number of matched patches per block-matching group
    window_side  edge of the square candidate search window (in patch positions)
    stride       spacing of reference patches; 1 means every overlapping patch
    boundary     "interior" keeps patches fully inside the image,
                 "wrap" indexes patches modulo the image dimensions
    """

    side: int
    depth: int
    match_count: int
    window_side: int = 30
    stride: int = 1
    boundary: str = INTERIOR

    def __post_init__(self) -> None:
        if self.side < 1 or self.depth < 1 or self.match_count < 1:
            raise ConfigurationError("side, depth and match_count must be >= 1")
        if self.depth > self.match_count:
            raise ConfigurationError(
                f"depth l={self.depth} exceeds match_count M={self.match_count}"
            )
        if self.side > self.window_side:
            raise ConfigurationError(
                f"side {self.side} exceeds window_side {self.window_side}"
            )
        if self.stride < 1:
            raise ConfigurationError("stride must be >= 1")
        if self.boundary == WRAP and self.stride != 1:
            # wrap-around mode promises every pixel is covered by references
            raise ConfigurationError("wrap-around boundary requires stride 1")
        if self.boundary not in (INTERIOR, WRAP):
            raise ConfigurationError(f"unknown boundary mode {self.boundary!r}")

    @property
    def n(self) -> int:
        return self.side * self.side

    def group_dim(self, channels: int = 1) -> int:
        """Length of the 3D coding vector: n * l * channels."""
        return self.n * self.depth * channels


@dataclass
class SolverConfig:
    """All scalar knobs of the block-coordinate solver.

    lam/theta are base thresholds; backends with a per-iteration schedule
    (denoising re-estimates the noise level) override them each iteration.
    """

    geom: PatchGeometry
    gamma_fidelity: float = 1.0
    gamma_sparse: float = 1.0
    gamma_lowrank: float = 1.0
    lam: float | None = None
    theta: float | None = None
    iterations: int = 8
    delta: float = 1.0          # convex mix with the raw measurement, denoising only
    psi: float = 0.36           # compensation factor of the noise re-estimate
    seed: int = 0
    workers: int = 1
    chunk_size: int = 1024
    deterministic: bool = True
    track_objective: bool = False

    def __post_init__(self) -> None:
        for name in ("gamma_fidelity", "gamma_sparse", "gamma_lowrank"):
            if getattr(self, name) < 0:
                raise ConfigurationError(f"{name} must be >= 0")
        if self.iterations < 1:
            raise ConfigurationError("iterations must be >= 1")
        if not 0.0 <= self.delta <= 1.0:
            raise ConfigurationError("delta must lie in [0, 1]")
        if not 0.0 < self.psi <= 1.0:
            raise ConfigurationError("psi must lie in (0, 1]")
        if self.workers < 1 or self.chunk_size < 1:
            raise ConfigurationError("workers and chunk_size must be >= 1")

    def with_overrides(self, **kwargs) -> "SolverConfig":
        return replace(self, **kwargs)
