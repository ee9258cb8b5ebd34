"""Static figures from orthoflow run CSVs."""

__version__ = "0.1.0"

from .figures import KINDS, STYLE_VERSION, FigureSpec, SchemaError, render

__all__ = ["KINDS", "STYLE_VERSION", "FigureSpec", "SchemaError", "render"]
