"""Arithmetic for numbers too large for floats, stored one or two logs down.

A LogLogValue holds a float payload p at one of three levels:

    plain       value = p
    single_log  value = e^p
    double_log  value = e^(e^p)

Comparisons are order-isomorphic: values are compared through the
deepest level at which both sides are representable.  Multiplication
and powers act on logs; addition falls back to the exact-in-double
result (the smaller summand underflows the correction term) once either
side exceeds the float range.  Conversions down a level are allowed
only when they do not overflow; they raise instead of producing inf.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import ArgumentError

_LEVELS = ("plain", "single_log", "double_log")
# exp(x) overflows float64 just above this
_EXP_MAX = 709.0


class LogLogValue:
    __slots__ = ("level", "payload")

    def __init__(self, level: str, payload: float):
        if level not in _LEVELS:
            raise ArgumentError(f"level must be one of {_LEVELS}, got {level!r}")
        p = float(payload)
        if not math.isfinite(p):
            raise ArgumentError(f"payload must be finite, got {p}")
        if level == "plain" and p < 0:
            raise ArgumentError("plain payload must be >= 0 (magnitudes only)")
        object.__setattr__(self, "level", level)
        object.__setattr__(self, "payload", p)

    def __setattr__(self, *a):
        raise AttributeError("LogLogValue is immutable")

    # -- constructors -------------------------------------------------------

    @classmethod
    def from_plain(cls, x) -> "LogLogValue":
        return cls("plain", x)

    @classmethod
    def from_log(cls, log_x) -> "LogLogValue":
        return cls("single_log", log_x)

    @classmethod
    def from_loglog(cls, loglog_x) -> "LogLogValue":
        return cls("double_log", loglog_x)

    # -- representability-aware accessors ------------------------------------

    def log_value(self) -> float:
        """log(value) as a float; raises when that itself overflows."""
        if self.level == "plain":
            if self.payload == 0.0:
                return -math.inf
            return math.log(self.payload)
        if self.level == "single_log":
            return self.payload
        if self.payload > _EXP_MAX:
            raise ArgumentError(
                f"log of this value is exp({self.payload:.6g}), beyond the float range"
            )
        return math.exp(self.payload)

    def loglog_value(self) -> float:
        """log(log(value)); requires value > 1."""
        if self.level == "double_log":
            return self.payload
        l = self.log_value()
        if l <= 0.0:
            raise ArgumentError("log log is undefined for values <= 1")
        return math.log(l)

    def to_float(self) -> float:
        if self.level == "plain":
            return self.payload
        l = self.log_value()
        if l > _EXP_MAX:
            raise ArgumentError(
                f"value e^{l:.6g} exceeds the float range; keep it at log level"
            )
        return math.exp(l)

    def _loggable(self) -> bool:
        return not (self.level == "double_log" and self.payload > _EXP_MAX)

    # -- comparisons ---------------------------------------------------------

    def _cmp(self, other) -> int:
        if not isinstance(other, LogLogValue):
            other = LogLogValue.from_plain(other)
        if self.level == "plain" and other.level == "plain":
            a, b = self.payload, other.payload
            return (a > b) - (a < b)
        if self._loggable() and other._loggable():
            a, b = self.log_value(), other.log_value()
            return (a > b) - (a < b)
        if self._loggable() != other._loggable():
            # exactly one side is beyond float range, hence strictly larger
            return -1 if other._loggable() is False else 1
        a, b = self.payload, other.payload  # both huge double_log
        return (a > b) - (a < b)

    def __lt__(self, other):
        return self._cmp(other) < 0

    def __le__(self, other):
        return self._cmp(other) <= 0

    def __gt__(self, other):
        return self._cmp(other) > 0

    def __ge__(self, other):
        return self._cmp(other) >= 0

    def __eq__(self, other):
        if not isinstance(other, (LogLogValue, int, float)):
            return NotImplemented
        return self._cmp(other) == 0

    def __hash__(self):
        return hash((self.level, self.payload))

    # -- arithmetic ----------------------------------------------------------

    def __mul__(self, other):
        if not isinstance(other, LogLogValue):
            other = LogLogValue.from_plain(other)
        if self._loggable() and other._loggable():
            return LogLogValue.from_log(self.log_value() + other.log_value())
        if self._loggable() or other._loggable():
            big = other if self._loggable() else self
            # log result = e^(big.payload) + log(small); the correction to the
            # log-log payload is log(small)*e^(-big.payload), underflowing to 0
            return LogLogValue.from_loglog(big.payload)
        return LogLogValue.from_loglog(float(np.logaddexp(self.payload, other.payload)))

    __rmul__ = __mul__

    def __pow__(self, a: float):
        a = float(a)
        if a <= 0 or not math.isfinite(a):
            raise ArgumentError(f"power must be finite and > 0, got {a}")
        if self._loggable():
            return LogLogValue.from_log(a * self.log_value())
        return LogLogValue.from_loglog(self.payload + math.log(a))

    def __add__(self, other):
        if not isinstance(other, LogLogValue):
            other = LogLogValue.from_plain(other)
        if self._loggable() and other._loggable():
            la, lb = self.log_value(), other.log_value()
            if la == -math.inf:
                return other
            if lb == -math.inf:
                return self
            return LogLogValue.from_log(float(np.logaddexp(la, lb)))
        # the smaller summand's relative contribution underflows double
        # precision entirely, so the sum equals the max exactly in double
        return self if self._cmp(other) >= 0 else other

    __radd__ = __add__

    # -- presentation ----------------------------------------------------------

    def render(self) -> str:
        try:
            x = self.to_float()
            return f"{x:.12g}"
        except ArgumentError:
            pass
        try:
            l = self.log_value()
            return f"10^{l / math.log(10.0):.9g}"
        except ArgumentError:
            return f"exp(exp({self.payload:.9g}))"

    def as_dict(self) -> dict:
        d = {"level": self.level, "payload": self.payload, "text": self.render()}
        try:
            d["log10"] = self.log_value() / math.log(10.0)
        except ArgumentError:
            d["log10"] = None
        return d

    def __repr__(self):
        return f"LogLogValue({self.level!r}, {self.payload!r})"
