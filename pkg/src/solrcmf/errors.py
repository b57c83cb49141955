"""Exception hierarchy.

Every error carries an ``exit_code`` used by the command line driver:
2 for configuration/input problems, 3 for numerical failures.
"""


class SolrCMFError(Exception):
    exit_code = 1


class ConfigError(SolrCMFError, ValueError):
    exit_code = 2


class NumericalError(SolrCMFError, ArithmeticError):
    exit_code = 3


class DimensionMismatch(ConfigError):
    pass


class DuplicateKey(ConfigError):
    pass


class SelfRelation(ConfigError):
    pass


class EmptyRowOrColumn(ConfigError):
    pass


class ZeroMatrix(ConfigError):
    pass


class TooFewEntries(ConfigError):
    pass


class BadRange(ConfigError):
    pass


class InvalidRho(ConfigError):
    pass


class RankTooLarge(ConfigError):
    pass


class LayoutNotMultiview(ConfigError):
    pass


class MissingEntriesUnsupported(ConfigError):
    pass


class InvalidScenario(ConfigError):
    pass


class SchemaMismatch(ConfigError):
    pass


class IoError(ConfigError):
    pass


class EmptyInput(ConfigError):
    pass


class EmptyFold(ConfigError):
    pass


class NoSharedView(ConfigError):
    pass


class ZeroDataNorm(ConfigError):
    pass


class NoConvergence(NumericalError):
    pass


class NonFiniteValue(NumericalError):
    pass


class DegenerateSupport(NumericalError):
    pass
