"""Exporter of embedding tables and image-token fixtures to ISAF v1 files."""

from .encoders import ClipEncoder, EncoderError, HashEncoder, build_encoder
from .export import ExportError, convert_detections, export_image_fixtures, export_text_tables
from .isaf1 import ExportFormatError, read_isaf1, write_isaf1
from .manifest import ExportManifest, ManifestError, fill_template, indefinite_article

__all__ = [
    "ClipEncoder",
    "EncoderError",
    "ExportError",
    "ExportFormatError",
    "ExportManifest",
    "HashEncoder",
    "ManifestError",
    "build_encoder",
    "convert_detections",
    "export_image_fixtures",
    "export_text_tables",
    "fill_template",
    "indefinite_article",
    "read_isaf1",
    "write_isaf1",
]
