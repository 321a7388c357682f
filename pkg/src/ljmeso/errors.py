"""Exception types shared across the package."""


class NumericalAbort(RuntimeError):
    """A computation stopped because its numbers stopped being trustworthy."""


class HypothesisViolation(ValueError):
    """Inputs fall outside the regime in which a theoretical statement applies."""


class ConfigError(ValueError):
    """An experiment configuration failed validation.

    Attributes
    ----------
    violations : list of (kind, message)
        Every problem found; ``kind`` is ``"config"`` for malformed input and
        ``"hypothesis"`` for a regime violation.
    """

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("\n".join(f"[{k}] {m}" for k, m in self.violations))

    @property
    def only_hypothesis(self) -> bool:
        return all(k == "hypothesis" for k, _ in self.violations)
