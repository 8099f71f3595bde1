"""Instance-mask sidecar exporter for the enhancement pipeline."""

from .exporter import (ExportDataError, ExportRecord, SetupError, detect,
                       export_masks, load_model, write_sidecars)

__all__ = ["ExportDataError", "ExportRecord", "SetupError", "detect",
           "export_masks", "load_model", "write_sidecars"]
__version__ = "0.1.0"
