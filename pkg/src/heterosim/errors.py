"""Exception types raised by the simulator."""


class HeterosimError(Exception):
    """Base class for all simulator errors."""


class NonFiniteError(HeterosimError, ValueError):
    """A state or input contained NaN or inf."""


class SteeringSingularityError(HeterosimError, ValueError):
    """Steering angle reached the tan() singularity at +-pi/2."""


class DuplicatePositionError(HeterosimError, ValueError):
    """Two nodes share a position, so a diameter circle is degenerate."""


class OrphanFollowerError(HeterosimError):
    """A follower has no relay within communication range."""

    def __init__(self, follower_id, message=None):
        self.follower_id = follower_id
        super().__init__(message or f"follower {follower_id} has no relay within R_c")


class EmptyRegionError(HeterosimError, ValueError):
    """Goal region collapsed because the broadcast period is too long for the radii."""


class SeparationError(HeterosimError, ValueError):
    """Link separation below the minimum allowed distance."""


class PenetrationError(HeterosimError):
    """A point lies inside an obstacle."""


class ConfigError(HeterosimError, ValueError):
    """Scenario file failed to parse or validate."""


class InitialConnectivityError(ConfigError):
    """Initial placement does not form a connected network."""

    def __init__(self, disconnected):
        self.disconnected = list(disconnected)
        super().__init__(f"initial placement is not connected; disconnected agents: {self.disconnected}")


class ServerDenied(HeterosimError):
    """Pheromone request made away from the nest."""
