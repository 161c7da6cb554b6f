"""Rule-based final-answer extraction and answer equivalence.

``extract`` pulls a canonical answer out of free text using, in order:

1. the content of the last well-formed ``\\boxed{...}``;
2. the text after the last "answer is" / "Answer:" phrase;
3. a standalone option letter A-E, parenthesized or trailing;
4. the last numeric literal;
5. nothing (``kind == "none"``).

Numbers become exact :class:`fractions.Fraction` values so that equivalence is
a genuine equivalence relation (no float tolerance).
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional

NUMERIC = "numeric"
CHOICE = "choice"
TEXT = "text"
NONE = "none"

MAX_FRACTION_DIGITS = 12

_INT_RE = re.compile(r"[+-]?\d+")
_DEC_RE = re.compile(r"([+-]?)(\d*)\.(\d+)")
_FRAC_RE = re.compile(r"([+-]?\d+)\s*/\s*([+-]?\d+)")
_TEX_FRAC_RE = re.compile(r"([+-]?)\\[dt]?frac\{\s*([+-]?\d+)\s*\}\{\s*([+-]?\d+)\s*\}")
_THOUSANDS_RE = re.compile(r"(?<=\d),(?=\d{3}(?!\d))")
_CHOICE_RE = re.compile(r"\(?([A-Ea-e])\)?")

_PHRASE_RE = re.compile(r"answer\s+is\s*:?|answer\s*:", re.IGNORECASE)
_PAREN_OPTION_RE = re.compile(r"\(([A-E])\)")
_TRAILING_OPTION_RE = re.compile(r"(?:^|[\s:])\(?([A-E])\)?[.!]?\s*$")
_NUMBER_LITERAL_RE = re.compile(r"[+-]?\d+(?:,\d{3})*(?:\.\d+)?(?:\s*/\s*\d+)?|[+-]?\.\d+")
_LEADING_NUMBER_RE = re.compile(r"^\s*([+-]?\d+(?:,\d{3})*(?:\.\d+)?(?:/\d+)?)(?![\w.])")


@dataclass(frozen=True)
class ExtractedAnswer:
    kind: str
    canonical: str
    value: Optional[Fraction] = field(default=None, compare=False)

    def __post_init__(self):
        if self.kind not in (NUMERIC, CHOICE, TEXT, NONE):
            raise ValueError(f"unknown answer kind {self.kind!r}")
        if (self.kind == NONE) != (self.canonical == ""):
            raise ValueError("kind 'none' iff canonical is empty")
        if (self.kind == NUMERIC) != (self.value is not None):
            raise ValueError("numeric answers carry a value, others do not")

    @property
    def key(self) -> tuple[str, str]:
        """Hashable identity of the equivalence class."""
        return (self.kind, self.canonical)

    def __str__(self):
        return self.canonical


NO_ANSWER = ExtractedAnswer(NONE, "")


def format_fraction(q: Fraction) -> str:
    if q.denominator == 1:
        return str(q.numerator)
    return f"{q.numerator}/{q.denominator}"


def numeric(q) -> ExtractedAnswer:
    q = Fraction(q)
    return ExtractedAnswer(NUMERIC, format_fraction(q), q)


def choice(letter: str) -> ExtractedAnswer:
    letter = letter.strip().upper()
    if len(letter) != 1 or letter not in "ABCDE":
        raise ValueError(f"not an option letter: {letter!r}")
    return ExtractedAnswer(CHOICE, letter)


def parse_number(s: str) -> Optional[Fraction]:
    """Parse an integer, decimal, ``a/b`` or ``\\frac{a}{b}`` string exactly."""
    s = _THOUSANDS_RE.sub("", s.strip())
    if _INT_RE.fullmatch(s):
        return Fraction(int(s))
    m = _DEC_RE.fullmatch(s)
    if m:
        sign, whole, frac = m.groups()
        frac = frac[:MAX_FRACTION_DIGITS]
        q = Fraction(int(whole or "0")) + Fraction(int(frac), 10 ** len(frac))
        return -q if sign == "-" else q
    m = _FRAC_RE.fullmatch(s)
    if m:
        num, den = int(m.group(1)), int(m.group(2))
        return Fraction(num, den) if den != 0 else None
    m = _TEX_FRAC_RE.fullmatch(s)
    if m:
        sign, num, den = m.group(1), int(m.group(2)), int(m.group(3))
        if den == 0:
            return None
        q = Fraction(num, den)
        return -q if sign == "-" else q
    return None


def _clean(s: str) -> str:
    # Iterate to a fixed point so canonicalize is idempotent by construction.
    while True:
        t = " ".join(s.split())
        t = t.strip("$ ").rstrip(".").strip()
        if t.startswith("\\text{") and t.endswith("}"):
            t = t[len("\\text{"):-1]
        if t == s:
            return t
        s = t


def canonicalize(s: str) -> ExtractedAnswer:
    """Classify and normalize an already-isolated answer string."""
    s = _clean(s.lower())
    if not s:
        return NO_ANSWER
    q = parse_number(s)
    if q is not None:
        return numeric(q)
    m = _CHOICE_RE.fullmatch(s)
    if m:
        return choice(m.group(1))
    return ExtractedAnswer(TEXT, s)


def last_boxed(text: str) -> Optional[str]:
    """Content of the last ``\\boxed{...}`` with balanced braces, if any."""
    starts = [m.end() for m in re.finditer(r"\\boxed\s*\{", text)]
    for start in reversed(starts):
        depth = 1
        for i in range(start, len(text)):
            c = text[i]
            if c == "{":
                depth += 1
            elif c == "}":
                depth -= 1
                if depth == 0:
                    return text[start:i]
    return None


def _from_tail(tail: str) -> ExtractedAnswer:
    tail = tail.split("\n", 1)[0]
    whole = canonicalize(tail)
    if whole.kind in (NUMERIC, CHOICE, NONE):
        return whole
    m = _PAREN_OPTION_RE.search(tail)
    if m:
        return choice(m.group(1))
    m = _LEADING_NUMBER_RE.match(tail)
    if m:
        q = parse_number(m.group(1))
        if q is not None:
            return numeric(q)
    # cut at the first sentence boundary
    sentence = re.split(r"\.(?:\s|$)", tail.strip(), maxsplit=1)[0]
    return canonicalize(sentence)


def extract(response_text: str) -> ExtractedAnswer:
    """Extract the final answer from a response. Never raises."""
    text = response_text or ""

    boxed = last_boxed(text)
    if boxed is not None:
        ans = canonicalize(boxed)
        if ans.kind != NONE:
            return ans

    phrases = list(_PHRASE_RE.finditer(text))
    if phrases:
        ans = _from_tail(text[phrases[-1].end():])
        if ans.kind != NONE:
            return ans

    options = list(_PAREN_OPTION_RE.finditer(text))
    if options:
        return choice(options[-1].group(1))
    m = _TRAILING_OPTION_RE.search(text)
    if m:
        return choice(m.group(1))

    for lit in reversed(_NUMBER_LITERAL_RE.findall(text)):
        q = parse_number(lit)
        if q is not None:
            return numeric(q)
    return NO_ANSWER


def equivalent(a: ExtractedAnswer, b: ExtractedAnswer) -> bool:
    """Answer equivalence; ``none`` is equivalent to nothing, itself included."""
    if a.kind == NONE or b.kind == NONE:
        return False
    return a.key == b.key
