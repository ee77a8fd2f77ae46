"""Exception hierarchy shared by every meshless_stokes module."""


class MeshlessStokesError(Exception):
    """Base class for all solver failures."""


class ConfigError(MeshlessStokesError):
    """Invalid configuration file or scenario input."""


class GeometryError(MeshlessStokesError):
    """Invalid shape, domain, or sampling resolution."""


class UnisolvencyError(MeshlessStokesError):
    """A local least-squares problem has too few neighbors or is ill-conditioned."""

    def __init__(self, message, node=None):
        super().__init__(message)
        self.node = node


class AssemblyError(MeshlessStokesError):
    """The block system could not be assembled."""


class RefinementError(MeshlessStokesError):
    """Preprocessing or quasi-uniformity enforcement did not terminate."""


class SolverError(MeshlessStokesError):
    """Linear solve, smoother, or time integration failure."""

    def __init__(self, message, level=None, solid=None):
        super().__init__(message)
        self.level = level
        self.solid = solid
