"""Exception and warning classes raised across the package."""


class AgarError(ValueError):
    """Base class for data errors; the CLI maps these to exit code 1."""


class MalformedJson(AgarError):
    pass


class MissingField(AgarError):
    def __init__(self, name, context=""):
        self.name = name
        msg = f"missing field {name!r}"
        if context:
            msg += f" in {context}"
        super().__init__(msg)


class UnknownField(AgarError):
    def __init__(self, name):
        self.name = name
        super().__init__(f"unknown field {name!r}")


class UnknownClass(AgarError):
    def __init__(self, name):
        self.name = name
        super().__init__(f"unknown class name {name!r}")


class UnknownBackground(AgarError):
    def __init__(self, name):
        self.name = name
        super().__init__(f"unknown background category {name!r}")


class CountMismatch(AgarError):
    pass


class DuplicateSampleId(AgarError):
    pass


class NonPositiveScale(AgarError):
    pass


class InvalidGeometry(AgarError):
    pass


class OversizedBox(AgarError):
    pass


class UnknownWindowIndex(AgarError):
    pass


class InvalidThreshold(AgarError):
    pass


class LengthMismatch(AgarError):
    pass


class EmptyInput(AgarError):
    pass


class MissingSample(AgarError):
    pass


class EmptyDataset(AgarError):
    pass


class NoHighCountSamples(AgarError):
    pass


class InfeasiblePlacement(AgarError):
    pass


class TooLarge(AgarError):
    pass


class CountMismatchWarning(UserWarning):
    """Lenient-mode counterpart of :class:`CountMismatch`."""


class NoEmptyRegion(UserWarning):
    """Fewer empty training patches than requested could be placed."""


class NoInstances(UserWarning):
    """A heatmap was requested for a class with no instances."""


class DuplicateLabelId(AgarError):
    pass
