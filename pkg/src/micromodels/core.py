"""Domain types and line-oriented JSON I/O for corpora, instances and lexicons."""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

from .exceptions import ParseError, ValidationError

# Alphanumeric runs; underscore is excluded because it is not alphanumeric.
_TOKEN_RE = re.compile(r"[^\W_]+")


def tokenize(text: str) -> list[str]:
    """Lowercase ``text`` and split it on runs of non-alphanumeric characters.

    >>> tokenize("I'm SO tired...")
    ['i', 'm', 'so', 'tired']
    """
    return _TOKEN_RE.findall(text.lower())


@dataclass(frozen=True)
class Utterance:
    id: str
    text: str
    index: int = 0


@dataclass(frozen=True)
class Instance:
    id: str
    utterances: tuple[Utterance, ...]
    label: Optional[str] = None

    def __post_init__(self):
        if len(self.utterances) == 0:
            raise ValidationError(f"instance {self.id!r} has no utterances")
        seen = set()
        for pos, utt in enumerate(self.utterances):
            if utt.index != pos:
                raise ValidationError(
                    f"instance {self.id!r}: utterance {utt.id!r} has index "
                    f"{utt.index}, expected {pos}"
                )
            if utt.id in seen:
                raise ValidationError(
                    f"instance {self.id!r}: duplicate utterance id {utt.id!r}"
                )
            seen.add(utt.id)

    @property
    def k(self) -> int:
        return len(self.utterances)

    @property
    def texts(self) -> list[str]:
        return [u.text for u in self.utterances]

    @classmethod
    def from_texts(cls, id: str, texts: Sequence[str], label: Optional[str] = None):
        utts = tuple(
            Utterance(id=f"{id}:{i}", text=t, index=i) for i, t in enumerate(texts)
        )
        return cls(id=id, utterances=utts, label=label)


@dataclass(frozen=True)
class Corpus:
    id: str
    utterances: tuple[Utterance, ...] = ()

    def __post_init__(self):
        ids = [u.id for u in self.utterances]
        if len(set(ids)) != len(ids):
            dup = next(i for i in ids if ids.count(i) > 1)
            raise ValidationError(f"corpus {self.id!r}: duplicate utterance id {dup!r}")

    def __len__(self):
        return len(self.utterances)

    def __iter__(self):
        return iter(self.utterances)

    @property
    def texts(self) -> list[str]:
        return [u.text for u in self.utterances]

    @classmethod
    def from_texts(cls, id: str, texts: Iterable[str], prefix: str = ""):
        utts = tuple(
            Utterance(id=f"{prefix}{i}", text=t, index=i) for i, t in enumerate(texts)
        )
        return cls(id=id, utterances=utts)


@dataclass(frozen=True)
class Lexicon:
    """Category name -> set of lowercase entries.

    An entry ending in ``*`` matches any token that starts with the rest of it.
    """

    name: str
    categories: Mapping[str, frozenset] = field(default_factory=dict)

    def __post_init__(self):
        cats = {}
        for cat, entries in self.categories.items():
            entries = frozenset(e.lower() for e in entries)
            if not entries:
                raise ValidationError(f"lexicon {self.name!r}: category {cat!r} is empty")
            cats[cat] = entries
        object.__setattr__(self, "categories", cats)

    def matches(self, category: str, token: str) -> bool:
        for entry in self.categories[category]:
            if entry.endswith("*"):
                if token.startswith(entry[:-1]):
                    return True
            elif token == entry:
                return True
        return False


def _read_json_lines(path):
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"{path}: invalid JSON: {exc.msg}", line=lineno) from exc
            if not isinstance(record, dict):
                raise ParseError(f"{path}: expected a JSON object", line=lineno)
            yield lineno, record


def _string_field(record, key, path, lineno):
    if key not in record:
        raise ParseError(f"{path}: missing field {key!r}", line=lineno)
    value = record[key]
    if not isinstance(value, str):
        raise ParseError(f"{path}: field {key!r} must be a string", line=lineno)
    return value


def load_corpus(path, id: Optional[str] = None) -> Corpus:
    utts = []
    for lineno, rec in _read_json_lines(path):
        uid = _string_field(rec, "id", path, lineno)
        text = _string_field(rec, "text", path, lineno)
        utts.append(Utterance(id=uid, text=text, index=len(utts)))
    return Corpus(id=id if id is not None else Path(path).stem, utterances=tuple(utts))


def save_corpus(corpus: Corpus, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for u in corpus.utterances:
            fh.write(json.dumps({"id": u.id, "text": u.text}, ensure_ascii=False) + "\n")


def load_instances(path) -> list[Instance]:
    instances = []
    for lineno, rec in _read_json_lines(path):
        iid = _string_field(rec, "id", path, lineno)
        label = rec.get("label")
        if label is not None and not isinstance(label, str):
            raise ParseError(
                f"{path}: label must be a string, got {type(label).__name__}", line=lineno
            )
        raw = rec.get("utterances")
        if not isinstance(raw, list):
            raise ParseError(f"{path}: 'utterances' must be an array", line=lineno)
        utts = []
        for u in raw:
            if not isinstance(u, dict):
                raise ParseError(f"{path}: utterance must be an object", line=lineno)
            utts.append(
                Utterance(
                    id=_string_field(u, "id", path, lineno),
                    text=_string_field(u, "text", path, lineno),
                    index=len(utts),
                )
            )
        try:
            instances.append(Instance(id=iid, utterances=tuple(utts), label=label))
        except ValidationError as exc:
            raise ValidationError(f"{path}: line {lineno}: {exc}") from exc
    return instances


def instance_to_dict(instance: Instance) -> dict:
    rec = {"id": instance.id}
    if instance.label is not None:
        rec["label"] = instance.label
    rec["utterances"] = [{"id": u.id, "text": u.text} for u in instance.utterances]
    return rec


def save_instances(instances: Iterable[Instance], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for inst in instances:
            fh.write(json.dumps(instance_to_dict(inst), ensure_ascii=False) + "\n")


def load_lexicon(path) -> Lexicon:
    """Read a lexicon from ``{"name": ..., "categories": {cat: [entries]}}``."""
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    return _lexicon_from_doc(doc, default_name=Path(path).stem)


def placeholder_lexicon() -> Lexicon:
    """Small open emotion lexicon shipped with the package."""
    text = resources.files("micromodels").joinpath("data/placeholder_lexicon.json").read_text(
        encoding="utf-8"
    )
    return _lexicon_from_doc(json.loads(text), default_name="placeholder")


def _lexicon_from_doc(doc, default_name):
    cats = doc.get("categories")
    if not isinstance(cats, dict):
        raise ParseError("lexicon document needs a 'categories' object")
    return Lexicon(name=doc.get("name", default_name), categories=cats)
