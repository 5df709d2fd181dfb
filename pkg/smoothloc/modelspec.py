"""Parser for model specs such as `mixture(0.9*gaussian(0,0.1)+0.1*gaussian(5,1))`.

Grammar (whitespace-insensitive):

    spec     := family | "product(" family "^" INT ")" | "product(" family ("," family)* ")"
    family   := "gaussian(" NUM "," NUM ")" | "laplace(" NUM "," NUM ")"
              | "sawtooth(" NUM "," NUM ")" | "mixture(" term ("+" term)* ")"
    term     := NUM "*gaussian(" NUM "," NUM ")"
"""

import re

from smoothloc.errors import DomainError, SpecParseError
from smoothloc.model import (
    Density1d,
    DensityHd,
    Gaussian,
    GaussianMixture,
    GaussianSawtooth,
    Laplace,
)

_NUMBER = re.compile(r"[+-]?(?:\d+(?:\.\d*)?|\.\d+)(?:[eE][+-]?\d+)?")
_NAME = re.compile(r"[a-z_]+")


class _Parser:
    _text: str
    _pos: int

    def __init__(self, text: str):
        self._text = text
        self._pos = 0

    def _skip_ws(self) -> None:
        while self._pos < len(self._text) and self._text[self._pos].isspace():
            self._pos += 1

    def _peek(self) -> str:
        self._skip_ws()
        return self._text[self._pos] if self._pos < len(self._text) else ""

    def _expect(self, ch: str) -> None:
        if self._peek() != ch:
            found = self._peek() or "end of input"
            raise SpecParseError(f"expected {ch!r}, found {found!r}", self._pos)
        self._pos += 1

    def _name(self) -> tuple[str, int]:
        self._skip_ws()
        m = _NAME.match(self._text, self._pos)
        if m is None:
            raise SpecParseError("expected a family name", self._pos)
        self._pos = m.end()
        return m.group(0), m.start()

    def _number(self) -> float:
        self._skip_ws()
        m = _NUMBER.match(self._text, self._pos)
        if m is None:
            raise SpecParseError("expected a number", self._pos)
        self._pos = m.end()
        return float(m.group(0))

    def _integer(self) -> int:
        start = self._pos
        value = self._number()
        if value != int(value) or value < 1:
            raise SpecParseError(f"expected a positive integer, got {value:g}", start)
        return int(value)

    def _pair(self) -> tuple[float, float]:
        self._expect("(")
        a = self._number()
        self._expect(",")
        b = self._number()
        self._expect(")")
        return a, b

    def parse(self) -> Density1d | DensityHd:
        model = self._spec()
        self._skip_ws()
        if self._pos != len(self._text):
            raise SpecParseError("unexpected trailing input", self._pos)
        return model

    def _spec(self) -> Density1d | DensityHd:
        self._skip_ws()
        mark = self._pos
        name, _ = self._name()
        if name != "product":
            self._pos = mark
            return self._family()
        self._expect("(")
        first = self._family()
        if self._peek() == "^":
            self._pos += 1
            count = self._integer()
            self._expect(")")
            return DensityHd((first,) * count)
        components = [first]
        while self._peek() == ",":
            self._pos += 1
            components.append(self._family())
        self._expect(")")
        return DensityHd(tuple(components))

    def _family(self) -> Density1d:
        name, start = self._name()
        try:
            if name == "gaussian":
                return Gaussian(*self._pair())
            if name == "laplace":
                return Laplace(*self._pair())
            if name == "sawtooth":
                return GaussianSawtooth(*self._pair())
            if name == "mixture":
                return self._mixture()
        except DomainError as e:
            raise SpecParseError(str(e), start) from e
        raise SpecParseError(f"unknown family {name!r}", start)

    def _mixture(self) -> GaussianMixture:
        self._expect("(")
        terms = [self._term()]
        while self._peek() == "+":
            self._pos += 1
            terms.append(self._term())
        self._expect(")")
        return GaussianMixture(tuple(terms))

    def _term(self) -> tuple[float, float, float]:
        weight = self._number()
        self._expect("*")
        name, start = self._name()
        if name != "gaussian":
            raise SpecParseError("mixture terms must be gaussian", start)
        mu, sigma = self._pair()
        return weight, mu, sigma


def parse_model(text: str) -> Density1d | DensityHd:
    return _Parser(text).parse()


def parse_model_1d(text: str) -> Density1d:
    model = parse_model(text)
    if not isinstance(model, Density1d):
        raise SpecParseError("expected a one-dimensional model", 0)
    return model


def parse_model_hd(text: str) -> DensityHd:
    model = parse_model(text)
    if isinstance(model, Density1d):
        return DensityHd((model,))
    return model
