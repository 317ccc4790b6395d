from .allocator import DoubleFree, Exhausted, NotAllocated, TAllocator
from .causes import DESCRIPTIONS, RECIPES, Classification, ConflictCause
from .dobj import Cell, TDistributedObject
from .tmap import TMap, default_hash, key_bytes
from .vector import IndexOutOfRange, TVector

__all__ = [
    "TVector", "IndexOutOfRange", "TAllocator", "Exhausted", "DoubleFree", "NotAllocated",
    "TMap", "default_hash", "key_bytes", "TDistributedObject", "Cell", "ConflictCause",
    "Classification", "RECIPES", "DESCRIPTIONS",
]
