"""Exception hierarchy shared by all modules."""


class QuorumError(Exception):
    """Base class for every error raised by this package."""


class GraphError(QuorumError):
    pass


class SelfLoop(GraphError):
    pass


class NonPositiveWeight(GraphError):
    pass


class DuplicateEdge(GraphError):
    pass


class NodeOutOfRange(GraphError):
    pass


class NotStronglyConnected(GraphError):
    """The topology violates Assumption 1 (strong connectivity)."""


class NonPositiveComponent(GraphError):
    """A left-eigenvector component came out non-positive (numerical failure)."""


class GraphFileError(GraphError):
    pass


class NonFiniteInput(QuorumError):
    pass


class SpectralError(QuorumError):
    pass


class EigenFailure(SpectralError):
    pass


class RhoNotLessThanOne(SpectralError):
    pass


class SingularIminusQ(SpectralError):
    pass


class EtaOutOfRange(SpectralError):
    pass


class InsufficientRuns(SpectralError):
    pass


class DenominatorUnderflow(QuorumError):
    """A running-average diagonal entry fell below the safety floor.

    Carries the offending node and step so the caller can report them.
    """

    def __init__(self, node, step, value, floor):
        self.node = node
        self.step = step
        self.value = value
        self.floor = floor
        super().__init__(
            f"|zbar_ii| = {abs(value):.3e} below floor {floor:.3e} at node {node + 1}, "
            f"step {step}; t0 or kappa is probably too small"
        )


class ConfigError(QuorumError):
    pass


class ParseError(ConfigError):
    def __init__(self, message, line=None, key=None):
        self.line = line
        self.key = key
        where = []
        if line is not None:
            where.append(f"line {line}")
        if key is not None:
            where.append(f"key {key!r}")
        prefix = f"{', '.join(where)}: " if where else ""
        super().__init__(prefix + message)


class ValidationError(ConfigError):
    pass
