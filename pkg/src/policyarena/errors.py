"""Exception types shared across the package."""


class ArenaError(Exception):
    """Base class for all package-specific errors."""


class GraphDisconnected(ArenaError):
    """The decisive comparison graph splits into disjoint components."""

    def __init__(self, components):
        self.components = [sorted(c) for c in components]
        super().__init__(
            f"comparison graph has {len(self.components)} disconnected "
            f"components: {self.components}"
        )


class EmptyDecisiveSet(ArenaError):
    """No decisive (non-tie) comparisons available for fitting."""


class InsufficientSamples(ArenaError):
    """Fewer samples than the statistic requires."""


class NotInCatalog(ArenaError):
    """Requested background id is not in the catalog."""


class InsufficientOverlap(ArenaError):
    """Too few valid pixels shared between two depth maps."""


class InsufficientCorrespondences(ArenaError):
    """Fewer than three usable 3D-3D point pairs."""


class DegenerateBox(ArenaError):
    """Bounding box has zero diagonal."""


class NumericalInstability(ArenaError):
    """Simulated state exceeded sanity bounds."""


class OptimizationFailed(ArenaError):
    """Every candidate evaluation failed."""


class ParseError(ArenaError):
    """Free-text output did not match the expected format."""
