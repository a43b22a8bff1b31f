"""Named parameter arrays carved out of one flat buffer.

Gradients and optimizer moments use the same layout, so one fused kernel call
updates every parameter.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class ParamSpec:
    name: str
    section: str
    shape: tuple[int, ...]

    @property
    def size(self):
        return math.prod(self.shape)


class ParamLayout:
    def __init__(self, specs):
        self.specs = tuple(specs)
        names = [s.name for s in self.specs]
        if len(set(names)) != len(names):
            raise ValueError("duplicate parameter names")
        self.offsets = {}
        total = 0
        for s in self.specs:
            self.offsets[s.name] = total
            total += s.size
        self.size = total

    def __iter__(self):
        return iter(self.specs)

    def __eq__(self, other):
        return isinstance(other, ParamLayout) and self.specs == other.specs

    def views(self, flat):
        if flat.shape != (self.size,):
            raise ValueError("buffer does not match the layout")
        out = {}
        for s in self.specs:
            o = self.offsets[s.name]
            out[s.name] = flat[o:o + s.size].reshape(s.shape)
        return out

    def section_slices(self, section):
        return [slice(self.offsets[s.name], self.offsets[s.name] + s.size)
                for s in self.specs if s.section == section]

    def group(self, views, prefix):
        """Sub-dict of ``views`` under ``prefix/`` with the prefix stripped."""
        p = prefix + "/"
        return {k[len(p):]: v for k, v in views.items() if k.startswith(p)}
