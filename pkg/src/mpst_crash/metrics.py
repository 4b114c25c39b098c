"""Size metrics of a protocol, as reported in the corpus overview table.

* ``comms``: number of transmission prefixes in the global type. A standalone
  crash notification is a prefix of its own and counts.
* ``crash_branches``: number of branches labelled ``crash``.
* ``max_cont_len``: number of nodes on the longest root-to-leaf path, counting
  recursion binders, transmissions and the final ``end`` or ``continue`` leaf.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

from .mpst_core import CRASH, GComm, GRec, walk


@dataclass(frozen=True)
class Metrics:
    comms: int
    crash_branches: int
    max_cont_len: int

    def as_tuple(self):
        return (self.comms, self.crash_branches, self.max_cont_len)

    def to_dict(self):
        return asdict(self)


def _longest(g):
    if isinstance(g, GComm):
        return 1 + max(_longest(b.cont) for b in g.branches)
    if isinstance(g, GRec):
        return 1 + _longest(g.body)
    return 1


def global_metrics(g) -> Metrics:
    comms = crash = 0
    for node in walk(g):
        if isinstance(node, GComm):
            comms += 1
            crash += sum(1 for b in node.branches if b.label == CRASH)
    return Metrics(comms, crash, _longest(g))
