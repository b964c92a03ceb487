"""Coupled simulations of ASEP and the stochastic six vertex model with KPZ rescaling."""

from .initial import IcSpec, InitialData, make_ic
from .lattice import (
    HOLE,
    ColoredConfig,
    ColoredHeightFunction,
    HeightFunction,
    ParticleConfig,
    Window,
    WindowTooSmall,
    height_from_config,
)
from .scaling import ScalingCoeffs, SheetEnsemble, build_sheet, derive_coeffs, rescale_height
from .verify import TestReport

__all__ = [
    "HOLE",
    "ColoredConfig",
    "ColoredHeightFunction",
    "HeightFunction",
    "IcSpec",
    "InitialData",
    "ParticleConfig",
    "ScalingCoeffs",
    "SheetEnsemble",
    "TestReport",
    "Window",
    "WindowTooSmall",
    "build_sheet",
    "derive_coeffs",
    "height_from_config",
    "make_ic",
    "rescale_height",
]
