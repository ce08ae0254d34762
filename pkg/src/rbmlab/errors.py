"""Shared exception types."""


class NumericalError(RuntimeError):
    """A linear solve or decomposition failed or is too ill-conditioned to trust."""


class StatisticsError(RuntimeError):
    """Not enough data to form the requested statistic."""
