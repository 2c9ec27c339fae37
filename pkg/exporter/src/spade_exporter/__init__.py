"""Standalone export tools for the reduced-sequence decoding engine.

Converts externally published LLaMA-family checkpoints into the neutral
SPADECKP tensor container and pre-tokenizes datasets into the task JSONL
format. Deliberately does not import the engine package: it talks to the
engine only through the documented file formats.
"""

from .container import read_container, write_container
from .errors import ExportError
from .export import ExportManifest, export_checkpoint
from .tasks import TEMPLATES, export_task

__all__ = [
    "ExportError",
    "ExportManifest",
    "TEMPLATES",
    "export_checkpoint",
    "export_task",
    "read_container",
    "write_container",
]
