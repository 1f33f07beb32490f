"""Exception types shared across the package."""


class InvalidArgumentError(ValueError):
    """An argument violates a documented precondition."""


class GraspConflictError(RuntimeError):
    """A gripper or part is already committed to another grasp."""


class PoolParseError(ValueError):
    """A contact-pool file is malformed; carries the offending record index."""

    def __init__(self, message: str, record_index: int):
        super().__init__(f"record {record_index}: {message}")
        self.record_index = record_index


class ExplorationStalledError(RuntimeError):
    """Random exploration hit the consecutive-failure cap without a success."""


class TrainingDivergedError(RuntimeError):
    """Training loss exceeded the divergence cap."""


class ConfigError(ValueError):
    """A config file violates the schema; carries the offending field name."""

    def __init__(self, field: str, message: str):
        super().__init__(f"config field '{field}': {message}")
        self.field = field
