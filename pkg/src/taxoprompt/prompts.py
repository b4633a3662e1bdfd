"""Prompt templates, slot substitution and the bundled prompt catalogs."""

from __future__ import annotations

import itertools
import re
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from pathlib import Path

SLOTS = ("hypo", "hyper", "cohypo")
FAMILIES = ("hypernym", "cohyponym", "cohypo_augmented")

_SLOT_RE = re.compile(r"\{(hypo|hyper|cohypo)\}")
# "(and-or)" style bundles: two or more hyphen-separated alternatives
_BUNDLE_RE = re.compile(r"\(([^()\s{}-]+(?:-[^()\s{}-]+)+)\)")

BUNDLED_CATALOGS = {
    "hypernym": "hypernym_prompts.tsv",
    "cohyponym": "cohyponym_prompts.tsv",
    "cohypo_augmented": "cohypo_augmented_prompts.tsv",
}

DEFAULT_COHYPO_TEMPLATE = "cohypo_such_as_comma_other_same_type"


class TemplateError(ValueError):
    pass


class CatalogError(ValueError):
    def __init__(self, message: str, path=None, lineno: int | None = None):
        where = f"{path}:{lineno}: " if lineno is not None else ""
        super().__init__(where + message)
        self.lineno = lineno


def _family_for(slots: list[str]) -> str:
    if "cohypo" in slots:
        return "cohypo_augmented" if "hyper" in slots else "cohyponym"
    return "hypernym"


@dataclass(frozen=True)
class PromptTemplate:
    """A slotted sentence pattern.

    ``group`` is set on the concrete variants of a bundled row such as
    ``{hypo} (and-or) (any-some) other {hyper}`` and names the row they came
    from.
    """

    id: str
    pattern: str
    hyper_is_plural: bool = False
    family: str = ""
    group: str | None = None

    def __post_init__(self):
        slots = _SLOT_RE.findall(self.pattern)
        if slots.count("hypo") != 1:
            raise TemplateError(f"template {self.id!r}: {{hypo}} must occur exactly once")
        for name in ("hyper", "cohypo"):
            if slots.count(name) > 1:
                raise TemplateError(f"template {self.id!r}: {{{name}}} occurs more than once")
        leftover = _SLOT_RE.sub("", self.pattern)
        if "{" in leftover or "}" in leftover:
            raise TemplateError(f"template {self.id!r}: unknown slot marker in {self.pattern!r}")
        inferred = _family_for(slots)
        if inferred == "hypernym" and "hyper" not in slots:
            raise TemplateError(f"template {self.id!r}: hypernym prompt needs a {{hyper}} slot")
        if self.family and self.family != inferred:
            raise TemplateError(f"template {self.id!r}: slots imply family {inferred}, not {self.family}")
        object.__setattr__(self, "family", inferred)

    @property
    def slots(self) -> tuple[str, ...]:
        return tuple(_SLOT_RE.findall(self.pattern))

    @property
    def is_bundle(self) -> bool:
        return bool(_BUNDLE_RE.search(self.pattern))

    def variants(self) -> list["PromptTemplate"]:
        """Concrete templates of a bundled row (or ``[self]`` for a plain one)."""
        parts = _BUNDLE_RE.split(self.pattern)
        if len(parts) == 1:
            return [self]
        literals, choices = parts[0::2], [p.split("-") for p in parts[1::2]]
        out = []
        for n, combo in enumerate(itertools.product(*choices)):
            text = literals[0]
            for alt, lit in zip(combo, literals[1:]):
                text += alt + lit
            out.append(PromptTemplate(f"{self.id}#{n}", text, self.hyper_is_plural, self.family, group=self.id))
        return out

    def display(self) -> str:
        """Pattern with bare slot names, e.g. ``hypo or some other hyper``."""
        return _SLOT_RE.sub(lambda m: m.group(1), self.pattern)


@dataclass(frozen=True)
class PromptInstance:
    text: str
    template_id: str
    hypo: str
    hyper: str | None = None
    cohypo: str | None = None
    spans: dict[str, tuple[int, int]] = field(default_factory=dict, compare=False)

    @property
    def hyper_char_start(self) -> int | None:
        span = self.spans.get("hyper")
        return span[0] if span else None

    def slot_span(self, slot: str) -> tuple[int, int] | None:
        return self.spans.get(slot)


def _check_term(name: str, term) -> str:
    if not isinstance(term, str) or not term.strip():
        raise TemplateError(f"{name} must be a non-empty string")
    if any(c in term for c in "\t\n\r"):
        raise TemplateError(f"{name} {term!r} contains a tab or newline")
    if "{" in term or "}" in term:
        raise TemplateError(f"{name} {term!r} contains a slot-marker delimiter")
    return term


def instantiate(template: PromptTemplate, hypo: str, hyper: str | None = None,
                cohypo: str | None = None) -> PromptInstance:
    if template.is_bundle:
        raise TemplateError(f"template {template.id!r} is a bundle; instantiate its variants()")
    args = {"hypo": hypo, "hyper": hyper, "cohypo": cohypo}
    slots = template.slots
    for slot in slots:
        if args[slot] is None:
            raise TemplateError(f"template {template.id!r} needs a {slot} argument")
        _check_term(slot, args[slot])
    if template.hyper_is_plural and "hyper" in slots:
        args["hyper"] = pluralize(args["hyper"])

    pieces, spans, pos, last = [], {}, 0, 0
    for m in _SLOT_RE.finditer(template.pattern):
        literal = template.pattern[last:m.start()]
        pieces.append(literal)
        pos += len(literal)
        value = args[m.group(1)]
        spans[m.group(1)] = (pos, pos + len(value))
        pieces.append(value)
        pos += len(value)
        last = m.end()
    pieces.append(template.pattern[last:])
    return PromptInstance("".join(pieces), template.id, hypo,
                          hyper if "hyper" in slots else None,
                          cohypo if "cohypo" in slots else None, spans)


# ---------------------------------------------------------------------------
# pluralization

@lru_cache(maxsize=1)
def _plural_lexicon() -> tuple[dict[str, str], frozenset[str]]:
    text = resources.files(__package__).joinpath("data/irregular_plurals.tsv").read_text("utf-8")
    table = {}
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        singular, plural = line.split("\t")
        table[singular] = plural
    return table, frozenset(table.values())


_SIBILANT = ("s", "x", "z", "ch", "sh")
_VOWELS = set("aeiou")


def _match_case(src: str, out: str) -> str:
    if src.isupper() and len(src) > 1:
        return out.upper()
    if src[:1].isupper():
        return out[:1].upper() + out[1:]
    return out


def _pluralize_word(word: str) -> str:
    lower = word.lower()
    irregular, plurals = _plural_lexicon()
    if lower in irregular:
        return _match_case(word, irregular[lower])
    if lower in plurals or not word.isalpha():
        return word
    if lower.endswith("s") and not lower.endswith("ss"):
        # already plural under the regular rules (animals, boxes, cities);
        # singular nouns ending in -s (bus, iris, campus) live in the lexicon
        return word
    if lower.endswith(_SIBILANT):
        return word + ("ES" if word.isupper() else "es")
    if len(lower) > 1 and lower.endswith("y") and lower[-2] not in _VOWELS:
        return word[:-1] + ("IES" if word.isupper() else "ies")
    return word + ("S" if word.isupper() and len(word) > 1 else "s")


def pluralize(noun: str) -> str:
    """Plural of an English noun; compounds pluralize their last word."""
    head, sep, last = noun.rpartition(" ")
    return head + sep + _pluralize_word(last) if last else noun


# ---------------------------------------------------------------------------
# catalogs

def parse_catalog(text: str, path=None) -> list[PromptTemplate]:
    templates, seen = [], set()
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.rstrip("\r")
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        fields = line.split("\t")
        if len(fields) not in (2, 3):
            raise CatalogError(f"expected 'id<TAB>pattern[<TAB>flags]', got {len(fields)} fields", path, lineno)
        tid, pattern = fields[0].strip(), fields[1]
        flags = {f.strip() for f in fields[2].split(",") if f.strip()} if len(fields) == 3 else set()
        unknown = flags - {"plural_hyper"}
        if not tid:
            raise CatalogError("empty template id", path, lineno)
        if unknown:
            raise CatalogError(f"unknown flags {sorted(unknown)}", path, lineno)
        if tid in seen:
            raise CatalogError(f"duplicate template id {tid!r}", path, lineno)
        try:
            templates.append(PromptTemplate(tid, pattern, "plural_hyper" in flags))
        except TemplateError as exc:
            raise CatalogError(str(exc), path, lineno) from exc
        seen.add(tid)
    return templates


def load_catalog(path) -> list[PromptTemplate]:
    path = Path(path)
    return parse_catalog(path.read_text(encoding="utf-8"), path)


def bundled_catalog(name: str) -> list[PromptTemplate]:
    """One of ``hypernym``, ``cohyponym`` or ``cohypo_augmented``."""
    try:
        fname = BUNDLED_CATALOGS[name]
    except KeyError:
        raise ValueError(f"no bundled catalog {name!r}; choose from {sorted(BUNDLED_CATALOGS)}") from None
    text = resources.files(__package__).joinpath("data", fname).read_text("utf-8")
    return parse_catalog(text, fname)


def bundled_catalog_path(name: str) -> Path:
    return Path(str(resources.files(__package__).joinpath("data", BUNDLED_CATALOGS[name])))
