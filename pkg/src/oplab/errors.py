"""Exception hierarchy shared by every oplab module."""


class OplabError(Exception):
    pass


class InvalidMesh(OplabError):
    pass


class NonEllipticCoefficient(OplabError):
    pass


class AtomOutsideDomain(OplabError):
    pass


class InfiniteField(OplabError):
    pass


class SingularSystem(OplabError):
    pass


class NotConverged(OplabError):
    pass


class InfeasibleObstacle(OplabError):
    pass


class NotSupersolution(OplabError):
    pass


class InvalidLevel(OplabError):
    pass


class InsufficientFamily(OplabError):
    pass


class NotMonotone(OplabError):
    pass


class PoleEvaluation(OplabError):
    pass


class InvalidTheta(OplabError):
    pass


class QuadratureFailure(OplabError):
    pass


class UnknownScenario(OplabError):
    pass
