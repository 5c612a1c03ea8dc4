"""Command-line driver for the export jobs.

Exit codes: 0 success, 1 runtime failure, 2 usage errors.
"""

from __future__ import annotations

import argparse
import sys

from .encoders import EncoderError, build_encoder
from .export import ExportError, convert_detections, export_image_fixtures, export_text_tables
from .isaf1 import ExportFormatError
from .manifest import ExportManifest, ManifestError

RUNTIME_ERRORS = (ManifestError, ExportError, EncoderError, ExportFormatError, OSError, ValueError)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="isahoi-export",
        description="Emit prompt-embedding tables and image-token fixtures as ISAF files.",
    )
    subs = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("text", "object/verb/composition embedding tables"),
        ("images", "per-image global and patch token fixtures"),
        ("detections", "convert released detection files to fixtures"),
        ("all", "every job the manifest describes"),
    ):
        sub = subs.add_parser(name, help=help_text)
        sub.add_argument("--manifest", required=True, help="manifest JSON path")
        sub.set_defaults(command=name)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        manifest = ExportManifest.load(args.manifest)
        encoder = build_encoder(manifest.encoder)
        written = []
        if args.command in ("text", "all"):
            written += export_text_tables(manifest, encoder)
        if args.command in ("images", "all"):
            written += export_image_fixtures(manifest, encoder)
        if args.command in ("detections", "all") and (
            manifest.detections or args.command == "detections"
        ):
            written += convert_detections(manifest, encoder)
    except RUNTIME_ERRORS as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    for path in written:
        print(f"wrote {path}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())


if __name__ == "__main__":
    sys.exit(main())
