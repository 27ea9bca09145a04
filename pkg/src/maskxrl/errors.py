"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Input does not match the expected dimension."""


class StateError(RuntimeError):
    """An operation was called in the wrong order (e.g. backward before forward)."""


class NonFiniteError(FloatingPointError):
    """A gradient, ratio or metric became NaN or infinite."""


class IllegalActionError(ValueError):
    """An agent tried an action outside its legal set."""

    def __init__(self, agent_id, action, legal=None):
        self.agent_id = agent_id
        self.action = action
        self.legal = legal
        msg = f"illegal action {action!r} for agent {agent_id}"
        if legal is not None:
            msg += f" (legal: {sorted(legal)})"
        super().__init__(msg)


class ConfigError(ValueError):
    """Invalid experiment or component configuration."""
