"""Exception hierarchy.

Subclasses of :class:`InputError` signal bad input or configuration and map
to exit code 2 on the command line; everything else maps to exit code 1.
"""


class HierCnnError(Exception):
    """Base class for all package errors."""


class InputError(HierCnnError):
    """Bad input data or configuration."""


# corpus
class MalformedXml(InputError):
    pass


class MissingField(InputError):
    pass


class MalformedCode(InputError):
    pass


class DuplicateReportId(InputError):
    pass


class EmptySelection(InputError):
    pass


# textprep
class EmptyCorpus(InputError):
    pass


# nn / textcnn
class IndexOutOfRange(InputError):
    pass


class DocumentTooShort(InputError):
    pass


class ShapeMismatch(InputError):
    pass


class NonFiniteValue(HierCnnError):
    pass


class InvalidConfig(InputError):
    pass


class EmptySplit(InputError):
    pass


class LabelOutOfRange(InputError):
    pass


class CheckpointError(InputError):
    pass


# hierarchy
class DegenerateDistribution(InputError):
    pass


class EmptyGroupSplit(InputError):
    pass


class InvalidPartition(InputError):
    pass


# eval
class ClassTooSmall(InputError):
    pass


class UnknownLabel(InputError):
    pass


class MismatchedTestSets(InputError):
    pass


class MismatchedPreprocessing(InputError):
    pass


# synth
class InvalidSpec(InputError):
    pass
