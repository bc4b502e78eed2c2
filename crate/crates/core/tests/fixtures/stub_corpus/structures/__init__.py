from .stack import Stack
from .lru import LRUCache
