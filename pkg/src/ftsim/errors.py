"""Exception types raised by the engine and its harness."""


class FtSimError(Exception):
    """Base class for every error raised by ftsim."""


class ConfigError(FtSimError, ValueError):
    """A configuration value is missing, malformed or inconsistent."""


class PlacementInfeasible(FtSimError):
    """Fewer LPs than replicas: the distinct-LP constraint cannot hold."""


class OverlayInfeasible(FtSimError, ValueError):
    """The requested out-degree cannot be realized with the given peer count."""


class MalformedFrame(FtSimError, ValueError):
    """A wire frame is truncated, over-length or otherwise undecodable."""


class UnknownDestination(FtSimError, KeyError):
    """An envelope targets an instance absent from the placement map."""


class BarrierTimeout(FtSimError):
    """An LP that is not scheduled to crash failed to reach the barrier."""


class SimulationAborted(FtSimError):
    """The run stopped because an LP loop raised."""


class IncompatibleReports(FtSimError):
    """Two reports were produced by different model configurations."""
