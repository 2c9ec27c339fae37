class ExportError(Exception):
    """Unmapped tensor, unsupported architecture, or shape mismatch."""
