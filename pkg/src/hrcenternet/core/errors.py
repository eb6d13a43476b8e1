"""
Exception hierarchy for the toolkit.

Every error raised on purpose by hrcenternet derives from HRCenterNetError, so callers
(and the CLI's exit-code map) can catch the whole family in one place.
"""

from pathlib import Path
from typing import Optional, Union


class HRCenterNetError(Exception):
    """Base class for all toolkit errors"""


class GeometryError(HRCenterNetError, ValueError):
    """Invalid box geometry, e.g. inverted corners or non-positive size"""


class EmptyBoxError(GeometryError):
    """A box has no area left after clamping to the image"""


class EncodingError(HRCenterNetError, ValueError):
    """Boxes or image dims that the target encoder cannot represent"""


class ShapeError(HRCenterNetError, ValueError):
    """Grid or tensor dimensions that do not line up"""


class ConfigError(HRCenterNetError):
    """Configuration file could not be parsed or holds invalid values"""


class ConfigMismatchError(ConfigError):
    """A checkpoint was written for a different model config than requested"""


class InputFileError(HRCenterNetError):
    """A required input path does not exist"""

    def __init__(self, path: Union[str, Path], message: str = "input file not found"):
        self.path = Path(path)
        super().__init__(f"{message}: {self.path}")


class OutputFileError(HRCenterNetError):
    """An output path could not be written"""

    def __init__(self, path: Union[str, Path], reason: str):
        self.path = Path(path)
        super().__init__(f"cannot write {self.path}: {reason}")


class FormatError(HRCenterNetError):
    """Binary or text file with bad magic, version, length or checksum"""

    def __init__(self, path: Optional[Union[str, Path]], message: str):
        self.path = Path(path) if path is not None else None
        where = f"{self.path}: " if self.path is not None else ""
        super().__init__(f"{where}{message}")


class AnnotationError(FormatError):
    """Malformed or out-of-bounds record in an annotation file"""

    def __init__(
        self,
        path: Optional[Union[str, Path]],
        message: str,
        line: Optional[int] = None,
        image: Optional[str] = None,
    ):
        self.line = line
        self.image = image
        parts = []
        if line is not None:
            parts.append(f"line {line}")
        if image is not None:
            parts.append(f"image {image}")
        prefix = f"{', '.join(parts)}: " if parts else ""
        super().__init__(path, f"{prefix}{message}")


class ImportFormatError(FormatError):
    """Dataset directory with a layout the importer does not understand"""


class EmptyPageError(HRCenterNetError):
    """The page generator produced no glyphs for the given config"""


class TrainingDivergedError(HRCenterNetError):
    """The training loss became NaN or infinite"""

    def __init__(self, step: int, components: dict):
        self.step = step
        self.components = components
        detail = ", ".join(f"{k}={v}" for k, v in components.items())
        super().__init__(f"non-finite loss at step {step} ({detail})")
