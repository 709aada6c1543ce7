"""Format tags shared by every file the pipeline writes.

CSV outputs start with a ``# <kind> v<version> key=value ...`` comment line;
JSON outputs carry ``"format"`` and ``"version"`` keys.
"""

from __future__ import annotations

from .errors import VersionMismatch, CorruptModel

FORMAT_VERSION = 1

TRACK = "evactrack.track"
DATASET = "evactrack.dataset"
SCALER = "evactrack.scaler"
MODEL = "evactrack.gbt"
CAMERA = "evactrack.camera"
CALIBRATION = "evactrack.calibration"
REPORT = "evactrack.report"
METADATA = "evactrack.metadata"
SCENARIO = "evactrack.scenario"
QUANTILES = "evactrack.error-quantiles"


def csv_tag(kind: str, **attrs: object) -> str:
    extra = "".join(f" {k}={v}" for k, v in attrs.items())
    return f"# {kind} v{FORMAT_VERSION}{extra}\n"


def parse_csv_tag(line: str, kind: str) -> dict[str, str]:
    """Validate a CSV tag line and return its ``key=value`` attributes."""
    parts = line.strip().split()
    if len(parts) < 3 or parts[0] != "#" or parts[1] != kind:
        raise CorruptModel(f"expected a '{kind}' header line, got {line.strip()!r}")
    if parts[2] != f"v{FORMAT_VERSION}":
        raise VersionMismatch(f"{kind}: unsupported version {parts[2]!r}")
    attrs = {}
    for item in parts[3:]:
        key, _, value = item.partition("=")
        attrs[key] = value
    return attrs


def json_tag(kind: str) -> dict[str, object]:
    return {"format": kind, "version": FORMAT_VERSION}


def check_json_tag(doc: object, kind: str) -> None:
    if not isinstance(doc, dict) or doc.get("format") != kind:
        raise CorruptModel(f"not a '{kind}' document")
    if doc.get("version") != FORMAT_VERSION:
        raise VersionMismatch(f"{kind}: unsupported version {doc.get('version')!r}")
