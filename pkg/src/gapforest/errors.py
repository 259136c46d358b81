"""Exception types. Each carries the name of the module that raised it."""

from __future__ import annotations


class GapForestError(ValueError):
    module = "gapforest"

    def __str__(self) -> str:
        return f"[{self.module}] {super().__str__()}"


class DatasetError(GapForestError):
    module = "dataset"


class SynthError(GapForestError):
    module = "synth"


class ForestError(GapForestError):
    module = "forest"


class ModelFormatError(ForestError):
    """Model file is missing, truncated, or from an unknown format version."""


class ProximityError(GapForestError):
    module = "gap"


class ScoreError(GapForestError):
    module = "score"


class ExplainError(GapForestError):
    module = "explain"


class EmbedError(GapForestError):
    module = "embed"
