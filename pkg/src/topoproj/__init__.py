"""2D density-based topology optimization with automatic projection continuation."""

from .continuation import (AutomaticScheme, ConstantScheme, ContinuationState,
                           SteppedScheme, delta_beta, should_stop)
from .mesh import GridMesh, LoadSet, PassiveSet, SupportSet
from .optimize import (IterationRecord, MMAParams, OCParams, OptimizationResult,
                       run_optimization)
from .problems import ProblemSpec, cantilever_linear, compressed_column, mbb
from .threefield import (DesignField, Material, ThreeFieldMap, build_filter,
                         gray_level, project, simp_young)

__all__ = [
    "AutomaticScheme", "ConstantScheme", "ContinuationState", "SteppedScheme",
    "delta_beta", "should_stop",
    "GridMesh", "LoadSet", "PassiveSet", "SupportSet",
    "IterationRecord", "MMAParams", "OCParams", "OptimizationResult",
    "run_optimization",
    "ProblemSpec", "cantilever_linear", "compressed_column", "mbb",
    "DesignField", "Material", "ThreeFieldMap", "build_filter", "gray_level",
    "project", "simp_young",
]

__version__ = "0.1.0"
