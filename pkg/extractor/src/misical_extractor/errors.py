class ExtractorError(Exception):
    """Base class for extraction failures."""


class UnpairedFilesError(ExtractorError):
    """Image and mask directories do not pair one-to-one by filename stem."""


class ModelLoadError(ExtractorError):
    """The segmentation model could not be built or its checkpoint read."""


class PatchGridError(ExtractorError):
    """Patch size does not tile the resize target."""


class PoolWriteError(ExtractorError):
    """A record violated the pool format contract."""
