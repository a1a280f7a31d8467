"""Exception hierarchy shared by all modules."""


class SSAQNError(Exception):
    pass


# engine
class StepAfterDone(SSAQNError):
    pass


class IndexOutOfRange(SSAQNError, IndexError):
    pass


class NoRuleMatched(SSAQNError):
    pass


# gamefmt
class ParseError(SSAQNError):
    pass


class ValidationError(SSAQNError):
    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


class InfeasibleParams(SSAQNError):
    pass


# textproc
class EmptyBatch(SSAQNError):
    pass


# nn
class IndexOutOfVocab(SSAQNError, IndexError):
    pass


class CheckpointIOError(SSAQNError, OSError):
    pass


class FormatVersionMismatch(SSAQNError):
    pass


class ShapeMismatch(SSAQNError):
    pass


# trainer
class EmptyMemory(SSAQNError):
    pass


class VocabMismatch(SSAQNError):
    pass
