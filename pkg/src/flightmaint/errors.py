class IngestionError(ValueError):
    """A flight file or manifest does not match the canonical on-disk format."""


class ConfigError(ValueError):
    """A configuration key or value is unknown or violates an invariant."""


class ShapeError(ValueError):
    """A kernel or model received arrays whose shapes break its contract."""


class FoldError(ValueError):
    """A fold plan cannot be built or is inconsistent with its manifest."""


class CheckpointError(ValueError):
    """A checkpoint file is truncated, foreign, or of an unsupported version."""


class NonFiniteLossError(RuntimeError):
    """Training produced a NaN or infinite loss."""

    def __init__(self, *, step: int, lr: float, batch_ids: list[str], loss: float) -> None:
        self.step = step
        self.lr = lr
        self.batch_ids = batch_ids
        self.loss = loss
        shown = ", ".join(batch_ids[:8]) + (", ..." if len(batch_ids) > 8 else "")
        super().__init__(f"Non-finite loss {loss} at step {step} (lr={lr:.3g}); batch: {shown}")
