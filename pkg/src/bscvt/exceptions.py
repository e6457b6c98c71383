"""Exception hierarchy shared by the geometry, map and pipeline layers."""


class BSCVTError(Exception):
    """Base class for all errors raised by :mod:`bscvt`."""


class GeometryError(BSCVTError, ValueError):
    pass


class InvalidPolygonError(GeometryError):
    pass


class DegeneratePolygonError(GeometryError):
    pass


class DomainError(GeometryError):
    """A point lies outside the region it is required to be in."""


class DuplicatePointError(GeometryError):
    pass


class DegenerateInputError(GeometryError):
    """Input point set is degenerate (e.g. all collinear)."""


class EncodingError(BSCVTError, ValueError):
    """Parameter vector has the wrong length for the requested map."""


class DegenerateShapeError(BSCVTError, ValueError):
    """A convex-shape parameter vector produces a (near) zero-area polygon."""


class InfeasibleRegionError(BSCVTError):
    """A region restriction cannot be met by any sample."""


class ExtractionError(BSCVTError):
    """Boundary extraction removed every triangle."""
