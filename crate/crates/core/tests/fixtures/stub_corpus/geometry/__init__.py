from .vector import Vector
from .shapes import Circle, Rectangle

__all__ = ["Vector", "Circle", "Rectangle"]
