"""Exception types raised across the pipeline."""


class ZeroSignal(ValueError):
    """A signal that must carry power (or a nonzero scale) does not."""


class UnsupportedRatio(ValueError):
    """Sample-rate to symbol-rate ratio cannot be resampled to 2 sps."""


class Diverged(RuntimeError):
    """Adaptive equalizer taps blew up (step size too large)."""


class OutOfGrid(ValueError):
    """OSNR value lies outside the configured grid range."""


class NonFinite(RuntimeError):
    """Training loss became NaN or infinite."""

    def __init__(self, epoch, value):
        super().__init__(f"non-finite loss {value!r} at epoch {epoch}")
        self.epoch = epoch
        self.value = value

    def __reduce__(self):
        return (type(self), (self.epoch, self.value))


class EmptyPartition(ValueError):
    """Evaluation was requested on a partition with no examples."""


class FileFormatError(ValueError):
    """A dataset or model file is malformed."""


class FrameError(RuntimeError):
    """A pipeline stage failed for one (format, OSNR, frame) tuple."""

    def __init__(self, fmt, osnr_db, frame_index, cause):
        super().__init__(f"format={fmt} osnr_db={osnr_db} frame={frame_index}: {type(cause).__name__}: {cause}")
        self.tuple = (fmt, osnr_db, frame_index)
        self.cause = cause

    def __reduce__(self):
        return (type(self), (*self.tuple, self.cause))


class SeedError(RuntimeError):
    """Training or evaluation failed for one network seed."""

    def __init__(self, seed, cause):
        super().__init__(f"seed={seed}: {type(cause).__name__}: {cause}")
        self.seed = seed
        self.cause = cause

    def __reduce__(self):
        return (type(self), (self.seed, self.cause))
