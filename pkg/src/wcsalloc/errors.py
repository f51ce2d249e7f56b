"""Exception types shared across the package."""


class ConfigError(ValueError):
    """A config file is missing, malformed, or fails a field constraint."""


class GainSynthesisError(RuntimeError):
    """Riccati iteration did not converge or the closed loop is unstable."""


class PolicyError(RuntimeError):
    """The policy network produced non-finite outputs."""


class EpisodeError(RuntimeError):
    """A rollout produced an invalid (non-finite) state."""


class FeasibilityError(EpisodeError):
    """An allocation left the power constraint set."""


class TrainingError(RuntimeError):
    """A training step could not be applied."""


class PretrainError(TrainingError):
    """Supervised pre-training diverged."""
