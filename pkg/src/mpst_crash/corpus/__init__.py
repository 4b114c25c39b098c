"""Bundled example protocols: the nineteen benchmark variants plus a few extras."""
from __future__ import annotations

import json
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources

from ..metrics import Metrics
from ..protocol_lang import ProtocolDecl, load_protocol


class UnknownVariant(KeyError):
    pass


@dataclass(frozen=True)
class Variant:
    id: str
    family: str
    file: str
    decl: ProtocolDecl
    gtype: object
    reliable: frozenset
    expected: Metrics
    provenance: str

    @property
    def roles(self):
        return self.decl.role_names


def examples_dir():
    return resources.files(__package__) / "examples"


def source(filename: str) -> str:
    return (examples_dir() / filename).read_text(encoding="utf-8")


@lru_cache(maxsize=1)
def manifest() -> dict:
    return json.loads((examples_dir() / "manifest.json").read_text("utf-8"))


VARIANT_IDS = tuple(v["id"] for v in manifest()["variants"])


@lru_cache(maxsize=None)
def load_variant(vid: str) -> Variant:
    for entry in manifest()["variants"]:
        if entry["id"] == vid:
            decl, g, reliable = load_protocol(source(entry["file"]))
            exp = entry["expected"]
            return Variant(vid, entry["family"], entry["file"], decl, g, reliable,
                           Metrics(exp["comms"], exp["crash_branches"], exp["max_cont_len"]),
                           entry["provenance"])
    raise UnknownVariant(f"unknown variant {vid!r}; expected one of {', '.join(VARIANT_IDS)}")


@lru_cache(maxsize=None)
def load_extra(name: str):
    """Return ``(decl, global type, reliable set)`` for a named extra protocol."""
    for entry in manifest()["extras"]:
        if entry["id"] == name:
            return load_protocol(source(entry["file"]))
    raise UnknownVariant(f"unknown example {name!r}")


def all_variants():
    return [load_variant(v) for v in VARIANT_IDS]
