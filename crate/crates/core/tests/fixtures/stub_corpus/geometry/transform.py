import math

from .vector import Vector


def rotate(v, angle):
    c, s = math.cos(angle), math.sin(angle)
    return Vector(v.x * c - v.y * s,
                  v.x * s + v.y * c)


def translate(points, offset):
    return [Vector(p.x + offset.x, p.y + offset.y) for p in points]


def centroid(points):
    if not points:
        raise ValueError("no points")
    n = len(points)
    return Vector(sum(p.x for p in points) / n, \
                  sum(p.y for p in points) / n)
