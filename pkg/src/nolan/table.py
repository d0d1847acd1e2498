"""Logit lookup tables: the dependency-free source behind the toy adapter.

A table file is JSON: {"protocol_version": 1, "vocab_size": V, "entries":
[{"modality": ..., "context": [...], "logits": [...]}, ...]}. Entries are
keyed by (modality, context); visual_ref is accepted but ignored for lookup.
"""

from __future__ import annotations

import json

from .core import LogitVector
from .engine import LogitSource, SourceDescriptor, SourceError

__all__ = ["TableSource", "RecordingSource", "load_table", "dump_table"]


def _key(modality: str, context) -> tuple:
    return (modality, tuple(int(t) for t in context))


class TableSource(LogitSource):
    """Serves logits verbatim from a (modality, context) table."""

    def __init__(self, vocab_size: int, entries: dict, source_id: str = "table"):
        self._entries = entries
        self._desc = SourceDescriptor(
            vocab_size=vocab_size,
            supports_visual=True,
            source_id=source_id,
            deterministic=True,
            thread_safe=True,
        )

    @property
    def descriptor(self) -> SourceDescriptor:
        return self._desc

    def logits(self, modality, context, visual_ref=None):
        try:
            values = self._entries[_key(modality, context)]
        except KeyError:
            raise SourceError(
                f"no table entry for ({modality}, {list(context)})"
            ) from None
        return LogitVector(values)


class RecordingSource(LogitSource):
    """Wraps a source and records every (query, logits) pair for table dumps."""

    def __init__(self, inner: LogitSource):
        self._inner = inner
        self.entries: dict = {}

    @property
    def descriptor(self) -> SourceDescriptor:
        return self._inner.descriptor

    def logits(self, modality, context, visual_ref=None):
        out = self._inner.logits(modality, context, visual_ref)
        self.entries[_key(modality, context)] = [float(v) for v in out.values]
        return out

    def to_table_source(self) -> TableSource:
        return TableSource(
            self.descriptor.vocab_size, dict(self.entries), source_id="recorded"
        )


def dump_table(vocab_size: int, entries: dict, fh) -> None:
    doc = {
        "protocol_version": 1,
        "vocab_size": vocab_size,
        "entries": [
            {"modality": mod, "context": list(ctx), "logits": logits}
            for (mod, ctx), logits in sorted(entries.items())
        ],
    }
    json.dump(doc, fh, sort_keys=True)
    fh.write("\n")


def load_table(fh) -> TableSource:
    doc = json.load(fh)
    entries = {
        _key(e["modality"], e["context"]): e["logits"] for e in doc["entries"]
    }
    return TableSource(int(doc["vocab_size"]), entries, source_id="table-file")
