class PlantedError(Exception):
    exit_code: int = 1


class ParameterError(PlantedError, ValueError):
    """Invalid parameters, malformed files or out-of-range values."""

    exit_code = 2


class AdmissibilityError(PlantedError):
    """A reduction was requested outside the region where it is valid.

    The message names the violated condition, e.g. ``k' <= k(1 - eps)``.
    """

    exit_code = 3

    def __init__(self, condition: str, stage: str = "") -> None:
        self.condition = condition
        self.stage = stage
        prefix = f"{stage}: " if stage else ""
        super().__init__(f"{prefix}violated condition {condition}")


class PlannerError(AdmissibilityError):
    pass


class VerificationError(PlantedError):
    exit_code = 4
