"""Exception types shared across the toolkit."""


class DcsimError(Exception):
    """Base class for all toolkit errors."""


class LifecycleError(DcsimError):
    """Operation attempted in the wrong simulation phase."""


class NameConflictError(DcsimError):
    """Two entities registered under the same name."""


class StateError(DcsimError):
    """Query made outside a running simulation, or on an object in the wrong state."""


class RoutingError(DcsimError):
    """Message addressed to an unknown entity."""


class ProtocolError(DcsimError):
    """Malformed or duplicate request at the domain-protocol level."""


class InternalConsistencyError(DcsimError):
    """The simulation state violated one of its own invariants; the run is not salvageable."""


class SimulationAbort(DcsimError):
    """An entity handler raised an unrecoverable fault; carries the offending event."""

    def __init__(self, message, event=None):
        super().__init__(message)
        self.event = event


class ScenarioError(DcsimError):
    """Scenario file failed to parse or validate; ``path`` points into the document."""

    def __init__(self, message, path=""):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path
