"""Exception and warning types shared across the package."""


class AscfError(Exception):
    """Base class for all errors raised by this package."""


class ManifestError(AscfError):
    """Feature manifest is malformed or inconsistent with the data file."""


class DataError(AscfError):
    """A data file cannot be ingested (parse failures, missing values under
    the reject policy, bad ids)."""


class LabelError(AscfError):
    """Label column does not describe a binary classification problem."""


class StratificationError(AscfError):
    """Cross-validation folds cannot be stratified (class too small, k too large)."""


class AcquisitionError(AscfError):
    """Invalid pool transition (unknown id, or id acquired twice)."""


class ExhaustedError(AscfError):
    """No candidates are left to select from."""


class ColdStartError(AscfError):
    """Too little acquired data to fit the models a strategy needs."""


class SingleClassError(AscfError):
    """Classifier training rows contain only one class."""


class StrategyError(AscfError):
    """A strategy was invoked outside its contract (e.g. labels unavailable)."""


class PairingError(AscfError):
    """Run collections cannot be compared because they are not paired."""


class RunError(AscfError):
    """A simulation run aborted; carries the (strategy, repeat, fold) context."""


class SessionError(AscfError):
    """Invalid session operation (unknown id, bad state file, schema mismatch)."""


class SessionBusyError(SessionError):
    """Another process holds the session lock."""


class ConvergenceWarning(UserWarning):
    """An iterative fit stopped before reaching its gradient tolerance."""


class DegenerateEnsembleWarning(UserWarning):
    """Bootstrap resampling has no diversity (fewer than two distinct rows)."""
