"""Exception hierarchy shared by every module."""


class PoseCanonError(Exception):
    """Base class for all errors raised by posecanon."""


class DegenerateInput(PoseCanonError, ValueError):
    """A 6D rotation collapsed (zero or parallel generator vectors)."""


class DegenerateBone(PoseCanonError, ValueError):
    pass


class DegenerateTorso(PoseCanonError, ValueError):
    """Shoulder and hip joints do not span a plane."""


class DegenerateConfiguration(PoseCanonError, ValueError):
    pass


class InvalidRange(PoseCanonError, ValueError):
    pass


class InvalidSplit(PoseCanonError, ValueError):
    pass


class ShapeMismatch(PoseCanonError, ValueError):
    pass


class NonFinite(PoseCanonError, FloatingPointError):
    pass


class ParseError(PoseCanonError, ValueError):
    pass


class UnknownJointName(ParseError):
    pass


class VersionMismatch(PoseCanonError, ValueError):
    pass


class ZeroVariance(PoseCanonError, ValueError):
    pass


class TooShort(PoseCanonError, ValueError):
    pass


class EmptySequence(PoseCanonError, ValueError):
    pass
