"""Exception hierarchy for trailsim."""


class TrailSimError(Exception):
    """Base class for every error raised by the simulator."""


class ConfigError(TrailSimError):
    """Invalid scenario configuration.

    ``source`` and ``line`` point at the offending spot in the scenario file
    when it is known.
    """

    def __init__(self, message, source=None, line=None):
        self.source = source
        self.line = line
        where = ""
        if source is not None:
            where = f"{source}:{line}: " if line is not None else f"{source}: "
        super().__init__(where + message)
        self.bare_message = message


# graph construction
class GraphError(ConfigError):
    pass


class DisconnectedGraph(GraphError):
    pass


class DuplicateSensorId(GraphError):
    pass


class NoEntryExitSensor(GraphError):
    pass


class EdgeDistanceMismatch(GraphError):
    pass


class UnknownSensor(TrailSimError, KeyError):
    pass


# population
class NonPositiveSpeed(TrailSimError, ValueError):
    pass


class EmptyGraph(ConfigError):
    pass


class InvalidMix(ConfigError):
    pass


class UnknownAttribute(ConfigError):
    pass


# protocol / identity / metrics
class EmptyInput(TrailSimError, ValueError):
    pass


class UnknownOrigin(TrailSimError):
    pass


class TooLarge(TrailSimError, ValueError):
    pass


class ZeroTruth(TrailSimError, ValueError):
    pass


# engine
class HorizonTooShort(TrailSimError):
    def __init__(self, remaining, horizon):
        self.remaining = remaining
        self.horizon = horizon
        super().__init__(f"{remaining} agent(s) still in the park at horizon tick {horizon}")
