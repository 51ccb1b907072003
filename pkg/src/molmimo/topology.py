"""Geometry of the 2x2 molecular MIMO setup.

Two point transmitters face two equal spherical receiver bulges. The bulge
centres sit on the z-axis, symmetric about the origin, and each transmitter
lies on the +x side of its own bulge, so the four reference points form a
rectangle.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

__all__ = [
    "DomainError",
    "OverlapError",
    "LinkId",
    "LINKS",
    "Topology",
    "make_topology",
]

REFERENCES = ("surface", "center")


class DomainError(ValueError):
    """A parameter is outside its physical domain."""


class OverlapError(DomainError):
    """The two receiver bulges intersect."""


class LinkId(NamedTuple):
    rx: int
    tx: int

    @property
    def is_own(self) -> bool:
        return self.rx == self.tx

    @property
    def label(self) -> str:
        return f"F{self.rx}{self.tx}"

    @classmethod
    def parse(cls, text: str) -> "LinkId":
        s = text.strip().upper().lstrip("F")
        if len(s) != 2 or s[0] not in "12" or s[1] not in "12":
            raise ValueError(f"not a link label: {text!r}")
        return cls(int(s[0]), int(s[1]))


LINKS = (LinkId(1, 1), LinkId(1, 2), LinkId(2, 1), LinkId(2, 2))


@dataclass(frozen=True)
class Topology:
    """Validated 2x2 geometry.

    ``d`` is the transmitter-to-bulge distance and ``h`` the bulge separation.
    By default both are measured to the sphere surfaces; ``d_ref``/``h_ref``
    switch either one to centre-referenced distances.
    """

    d: float
    h: float
    r_r: float
    D: float
    d_ref: str = "surface"
    h_ref: str = "surface"
    _tx: np.ndarray = field(init=False, repr=False, compare=False)
    _centers: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        for name in ("d", "h", "r_r", "D"):
            v = getattr(self, name)
            if not isinstance(v, (int, float)) or not math.isfinite(v):
                raise DomainError(f"{name} must be a finite number, got {v!r}")
        if self.d_ref not in REFERENCES or self.h_ref not in REFERENCES:
            raise DomainError(f"reference must be one of {REFERENCES}")
        if self.d <= 0 or self.r_r <= 0 or self.D <= 0:
            raise DomainError("d, r_r and D must be positive")

        sep = self.center_separation
        if sep < 2.0 * self.r_r:
            raise OverlapError(
                f"bulges overlap: centre separation {sep:g} < 2*r_r = {2 * self.r_r:g}"
            )
        offset = self.tx_offset
        if offset <= self.r_r:
            raise DomainError("transmitter lies inside its receiver bulge")

        half = 0.5 * sep
        centers = np.array([[0.0, 0.0, -half], [0.0, 0.0, half]])
        tx = centers + np.array([offset, 0.0, 0.0])
        centers.setflags(write=False)
        tx.setflags(write=False)
        object.__setattr__(self, "_centers", centers)
        object.__setattr__(self, "_tx", tx)

    @property
    def center_separation(self) -> float:
        if self.h_ref == "surface":
            return 2.0 * self.r_r + self.h
        return float(self.h)

    @property
    def tx_offset(self) -> float:
        """Distance from a transmitter to the centre of its own bulge."""
        if self.d_ref == "surface":
            return self.d + self.r_r
        return float(self.d)

    @property
    def surface_distance(self) -> float:
        """Point-to-surface distance used by the closed-form hitting models."""
        return self.tx_offset - self.r_r

    @property
    def centers(self) -> np.ndarray:
        return self._centers

    @property
    def transmitters(self) -> np.ndarray:
        return self._tx

    def tx_position(self, tx: int) -> np.ndarray:
        return self._tx[tx - 1]

    def bulge_center(self, rx: int) -> np.ndarray:
        return self._centers[rx - 1]

    def distance(self, link: LinkId) -> float:
        """Transmitter-to-surface distance for ``link``."""
        gap = np.linalg.norm(self.tx_position(link.tx) - self.bulge_center(link.rx))
        return float(gap) - self.r_r

    def as_dict(self) -> dict:
        return {
            "d": self.d,
            "h": self.h,
            "r_r": self.r_r,
            "D": self.D,
            "d_ref": self.d_ref,
            "h_ref": self.h_ref,
        }


def make_topology(
    d: float,
    h: float,
    r_r: float,
    D: float,
    *,
    d_ref: str = "surface",
    h_ref: str = "surface",
) -> Topology:
    return Topology(float(d), float(h), float(r_r), float(D), d_ref, h_ref)
