"""Sampling the planar image of a box-constrained map with centroidal Voronoi tessellations."""
from .cvt import SampleSet, cvt_energy, cvt_energy_grad, lloyd_bs, lloyd_step, variational_cvt_bs
from .estimators import BoundaryExtractor, CVTDiagramSampler, MonteCarloSampler
from .exceptions import (
    BSCVTError,
    DegenerateShapeError,
    DomainError,
    ExtractionError,
    GeometryError,
    InfeasibleRegionError,
)
from .geometry import BoundingBox, Polygon, clipped_voronoi, delaunay
from .maps import APWMap, BoxDomain, DiagramMap, TraceDetMap, get_map, monte_carlo
from .pipeline import RefineConfig, RegionRestriction, extract_boundary, multigrid

__version__ = "0.1.0"

__all__ = [
    "APWMap",
    "BSCVTError",
    "BoundaryExtractor",
    "BoundingBox",
    "BoxDomain",
    "CVTDiagramSampler",
    "DegenerateShapeError",
    "DiagramMap",
    "DomainError",
    "ExtractionError",
    "GeometryError",
    "InfeasibleRegionError",
    "MonteCarloSampler",
    "Polygon",
    "RefineConfig",
    "RegionRestriction",
    "SampleSet",
    "TraceDetMap",
    "clipped_voronoi",
    "cvt_energy",
    "cvt_energy_grad",
    "delaunay",
    "extract_boundary",
    "get_map",
    "lloyd_bs",
    "lloyd_step",
    "monte_carlo",
    "multigrid",
    "variational_cvt_bs",
]
