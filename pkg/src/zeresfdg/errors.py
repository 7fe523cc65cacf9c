"""Exception types shared across the package."""


class ShapeMismatchError(ValueError):
    """Two tensors that must agree in shape do not."""

    def __init__(self, a_shape, b_shape, what="operands"):
        self.a_shape = tuple(a_shape)
        self.b_shape = tuple(b_shape)
        super().__init__(f"shape mismatch between {what}: {self.a_shape} vs {self.b_shape}")


class NonFiniteError(FloatingPointError):
    """A tensor that must be finite contains NaN or Inf."""

    def __init__(self, name, count):
        self.name = name
        self.count = int(count)
        super().__init__(f"{name} contains {self.count} non-finite element(s)")


class ConfigError(ValueError):
    """Invalid configuration value; ``keys`` names the offending knobs."""

    def __init__(self, message, keys=()):
        self.keys = tuple(keys)
        super().__init__(message)


class SamplingError(RuntimeError):
    """A numerical failure inside the sampling loop, tagged with the step index."""

    def __init__(self, step_index, cause):
        self.step_index = step_index
        self.cause = cause
        super().__init__(f"step {step_index}: {cause}")
