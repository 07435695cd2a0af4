from .render import KINDS, FigureSpec, SchemaError, render

__all__ = ["FigureSpec", "SchemaError", "render", "KINDS"]
__version__ = "0.1.0"
