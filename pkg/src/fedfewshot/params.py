"""Named, ordered parameter snapshots: the unit exchanged during federation."""

import numpy as np

from .errors import StructureMismatch


class ParameterSet:
    """Ordered ``name -> ndarray`` mapping.

    Order is the model's registration order and is identical on every client,
    which is what lets aggregation and the wire format walk entries by index.
    """

    def __init__(self, entries=()):
        self._names = []
        self._arrays = {}
        for name, values in entries:
            self.add(name, values)

    def add(self, name, values):
        if name in self._arrays:
            raise ValueError(f"duplicate parameter name {name!r}")
        self._names.append(name)
        self._arrays[name] = np.asarray(values)

    def __len__(self):
        return len(self._names)

    def __iter__(self):
        return iter(self._names)

    def __contains__(self, name):
        return name in self._arrays

    def __getitem__(self, name):
        return self._arrays[name]

    def names(self):
        return list(self._names)

    def items(self):
        return [(n, self._arrays[n]) for n in self._names]

    def arrays(self):
        return [self._arrays[n] for n in self._names]

    def structure(self):
        return [(n, tuple(self._arrays[n].shape)) for n in self._names]

    @property
    def total_size(self):
        return int(sum(a.size for a in self._arrays.values()))

    def copy(self):
        return ParameterSet((n, a.copy()) for n, a in self.items())

    def astype(self, dtype):
        return ParameterSet((n, a.astype(dtype)) for n, a in self.items())

    def check_compatible(self, other, who="upload"):
        """Raise :class:`StructureMismatch` naming the first divergent entry."""
        mine, theirs = self.structure(), other.structure()
        for i, (a, b) in enumerate(zip(mine, theirs)):
            if a != b:
                raise StructureMismatch(f"{who}: entry {i} is {b[0]}{b[1]}, expected {a[0]}{a[1]}")
        if len(mine) != len(theirs):
            extra = (mine if len(mine) > len(theirs) else theirs)[min(len(mine), len(theirs))]
            raise StructureMismatch(
                f"{who}: {len(theirs)} entries, expected {len(mine)} (first unmatched: {extra[0]})"
            )

    def bit_equal(self, other):
        if self.structure() != other.structure():
            return False
        return all(
            a.dtype == b.dtype and a.tobytes() == b.tobytes()
            for a, b in zip(self.arrays(), other.arrays())
        )

    def __repr__(self):
        return f"ParameterSet({len(self)} entries, {self.total_size} values)"
