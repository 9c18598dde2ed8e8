"""Populations and realization of the two-stage design: a SRSWOR of venues,
enumeration of venue members, then collection of link indicators for
everyone reachable from the sampled venues.

People are indexed 0..tau1-1 in the frame-covered portion (assigned to
venues in blocks: venue i owns a contiguous index range) and 0..tau2-1
outside the frame.  People outside the initial venue sample enter the
realized sample only if linked to at least one sampled venue; unlinked
people are unobserved and never stored.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Mapping, Protocol

import numpy as np

from .errors import InvalidArgument
from .quadrature import LinkPattern
from ._numeric import sigmoid

__all__ = [
    "Stratum", "PersonRecord", "LtsSample", "Population", "ObservedCounts",
    "RaschLinks", "LatentClassLinks", "ExplicitLinks",
    "draw_sample", "assemble_sample", "observed_counts",
]


class Stratum(enum.Enum):
    IN_VENUE = "in_venue"              # member of a sampled venue (wave zero)
    BEYOND_FRAME = "beyond_frame"      # frame-covered, named through a link
    OUTSIDE_FRAME = "outside_frame"    # off-frame, named through a link


@dataclass
class PersonRecord:
    """One sampled person: stratum, link pattern, response values.

    In-venue members carry an (n-1)-slot pattern that skips their own
    venue slot; named people carry the full n-slot pattern.
    """

    stratum: Stratum
    pattern: LinkPattern
    y: Mapping[str, float]
    venue_slot: int | None = None

    def __post_init__(self):
        if (self.venue_slot is not None) != (self.stratum is Stratum.IN_VENUE):
            raise InvalidArgument("venue_slot is set iff stratum is IN_VENUE")
        if self.stratum is not Stratum.IN_VENUE and self.pattern.count_ones < 1:
            raise InvalidArgument("named people must be linked to at least one venue")


@dataclass
class LtsSample:
    """One realized sample of the design."""

    selected_venues: np.ndarray          # frame indices, ascending
    venue_sizes_sampled: np.ndarray
    persons: list[PersonRecord]
    n_frame: int
    variables: list[str]

    @property
    def n(self) -> int:
        return len(self.selected_venues)

    @property
    def m_total(self) -> int:
        return int(self.venue_sizes_sampled.sum())

    @property
    def r1(self) -> int:
        return sum(p.stratum is Stratum.BEYOND_FRAME for p in self.persons)

    @property
    def r2(self) -> int:
        return sum(p.stratum is Stratum.OUTSIDE_FRAME for p in self.persons)

    def y_array(self, var: str, stratum_u2: bool) -> np.ndarray:
        """Response values for sampled U2 people (or U1 people when False),
        in persons order."""
        want = (Stratum.OUTSIDE_FRAME,) if stratum_u2 else (Stratum.IN_VENUE, Stratum.BEYOND_FRAME)
        return np.array([p.y[var] for p in self.persons if p.stratum in want], dtype=float)


class LinkModel(Protocol):
    def logits(self, venues: np.ndarray) -> np.ndarray:
        """Link log-odds for the given frame venues: shape (len(venues), tau_k)."""
        ...


@dataclass
class RaschLinks:
    """Additive venue-effect + person-effect link log-odds."""

    alpha: np.ndarray    # (N,)
    beta: np.ndarray     # (tau_k,)

    def logits(self, venues: np.ndarray) -> np.ndarray:
        return self.alpha[venues][:, None] + self.beta[None, :]


@dataclass
class LatentClassLinks:
    """Two-class link log-odds: a (N, 2) venue-by-class table indexed by
    each person's class label."""

    logit_table: np.ndarray   # (N, 2)
    classes: np.ndarray       # (tau_k,), values in {0, 1}

    def logits(self, venues: np.ndarray) -> np.ndarray:
        return self.logit_table[venues][:, self.classes]


@dataclass
class ExplicitLinks:
    """Fixed 0/1 link indicators (rows: frame venues, cols: people)."""

    x: np.ndarray             # (N, tau_k) of {0, 1}

    def __post_init__(self):
        x = np.asarray(self.x)
        if not np.isin(x, (0, 1)).all():
            raise InvalidArgument("explicit link matrix entries must be 0/1")
        self.x = x.astype(np.int8)


@dataclass
class Population:
    """A finite population: venue frame, responses, and a link mechanism.

    ``y`` maps each response-variable name to a pair of vectors over the
    frame-covered portion (length tau1) and the off-frame portion
    (length tau2).
    """

    venue_sizes: np.ndarray
    y: dict[str, tuple[np.ndarray, np.ndarray]]
    links1: RaschLinks | LatentClassLinks | ExplicitLinks
    links2: RaschLinks | LatentClassLinks | ExplicitLinks
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.venue_sizes = np.asarray(self.venue_sizes, dtype=np.int64)
        if (self.venue_sizes < 1).any():
            raise InvalidArgument("venue sizes must be positive")
        for var, (y1, y2) in self.y.items():
            y1 = np.asarray(y1, dtype=float)
            y2 = np.asarray(y2, dtype=float)
            if y1.shape[0] != self.tau1 or y2.shape[0] != self.tau2:
                raise InvalidArgument(f"response '{var}' lengths must be (tau1, tau2)")
            self.y[var] = (y1, y2)
        if isinstance(self.links1, ExplicitLinks):
            x = self.links1.x
            if x.shape != (self.n_frame, self.tau1):
                raise InvalidArgument("frame link matrix must be N x tau1")
            starts = self._starts
            for i in range(self.n_frame):
                if x[i, starts[i]:starts[i + 1]].any():
                    raise InvalidArgument(
                        f"venue {i} has a self-link: members can only be linked to other venues"
                    )

    @property
    def n_frame(self) -> int:
        return int(self.venue_sizes.shape[0])

    @property
    def tau1(self) -> int:
        return int(self.venue_sizes.sum())

    @property
    def tau2(self) -> int:
        first = next(iter(self.y.values()))
        return int(np.asarray(first[1]).shape[0])

    @property
    def tau(self) -> int:
        return self.tau1 + self.tau2

    @property
    def _starts(self) -> np.ndarray:
        # venue i owns U1 indices [starts[i], starts[i+1])
        return np.concatenate([[0], np.cumsum(self.venue_sizes)])

    def venue_members(self, venue: int) -> np.ndarray:
        s = self._starts
        return np.arange(s[venue], s[venue + 1])

    def venue_of(self) -> np.ndarray:
        """Frame venue index of every U1 person."""
        return np.repeat(np.arange(self.n_frame), self.venue_sizes)


def _realize_links(links, venues: np.ndarray, rng: np.random.Generator | None) -> np.ndarray:
    if isinstance(links, ExplicitLinks):
        return links.x[venues].copy()
    if rng is None:
        raise InvalidArgument("generator populations need an rng to realize links")
    p = sigmoid(links.logits(venues))
    return (rng.random(p.shape) < p).astype(np.int8)


def draw_sample(pop: Population, n: int, rng: np.random.Generator) -> LtsSample:
    """Select a SRSWOR of ``n`` venues and realize one full sample.

    For explicit-matrix populations link indicators are read off the
    matrices; for generator populations each indicator is an independent
    Bernoulli draw at the model probability.  Identical seeds give
    identical samples.
    """
    if n > pop.n_frame:
        raise InvalidArgument(f"cannot sample n={n} venues from a frame of {pop.n_frame}")
    venues = np.sort(rng.choice(pop.n_frame, size=n, replace=False))
    x1 = _realize_links(pop.links1, venues, rng)
    x2 = _realize_links(pop.links2, venues, rng)
    return assemble_sample(pop, venues, x1, x2)


def assemble_sample(pop: Population, venues: np.ndarray, x1: np.ndarray, x2: np.ndarray) -> LtsSample:
    """Assemble the realized sample from link indicators for the selected
    venues (rows of ``x1``/``x2`` follow ``venues`` order).  Own-venue
    entries of ``x1`` are ignored for members of sampled venues.
    """
    venues = np.asarray(venues)
    n = venues.shape[0]
    persons: list[PersonRecord] = []

    def y_of(j: int, u2: bool) -> dict[str, float]:
        return {var: float(pair[1][j] if u2 else pair[0][j]) for var, pair in pop.y.items()}

    in_venue = np.zeros(pop.tau1, dtype=bool)
    for slot, v in enumerate(venues):
        members = pop.venue_members(int(v))
        in_venue[members] = True
        other = np.delete(np.arange(n), slot)
        for j in members:
            persons.append(PersonRecord(
                stratum=Stratum.IN_VENUE,
                pattern=LinkPattern(x1[other, j]),
                y=y_of(int(j), u2=False),
                venue_slot=slot,
            ))
    for j in np.flatnonzero(~in_venue & (x1.sum(axis=0) >= 1)):
        persons.append(PersonRecord(
            stratum=Stratum.BEYOND_FRAME,
            pattern=LinkPattern(x1[:, j]),
            y=y_of(int(j), u2=False),
        ))
    for j in np.flatnonzero(x2.sum(axis=0) >= 1):
        persons.append(PersonRecord(
            stratum=Stratum.OUTSIDE_FRAME,
            pattern=LinkPattern(x2[:, j]),
            y=y_of(int(j), u2=True),
        ))
    return LtsSample(
        selected_venues=venues,
        venue_sizes_sampled=pop.venue_sizes[venues],
        persons=persons,
        n_frame=pop.n_frame,
        variables=list(pop.y),
    )


@dataclass
class ObservedCounts:
    """Sufficient statistics consumed by the likelihood."""

    venue_sizes: np.ndarray                       # sampled m_i, slot order
    r1: int
    r2: int
    hist_u1: dict[bytes, int]                     # named frame-covered patterns
    hist_u2: dict[bytes, int]                     # off-frame patterns
    hist_venue: list[dict[bytes, int]]            # per-slot member patterns (length n-1)

    @property
    def n(self) -> int:
        return int(self.venue_sizes.shape[0])

    @property
    def m(self) -> int:
        return int(self.venue_sizes.sum())


def observed_counts(sample: LtsSample) -> ObservedCounts:
    """Histogram the sample's link patterns per stratum."""
    n = sample.n
    hist_u1: dict[bytes, int] = {}
    hist_u2: dict[bytes, int] = {}
    hist_venue: list[dict[bytes, int]] = [dict() for _ in range(n)]
    for p in sample.persons:
        key = p.pattern.bits.tobytes()
        if p.stratum is Stratum.IN_VENUE:
            h = hist_venue[p.venue_slot]
        elif p.stratum is Stratum.BEYOND_FRAME:
            h = hist_u1
        else:
            h = hist_u2
        h[key] = h.get(key, 0) + 1
    counted_sizes = np.array([sum(h.values()) for h in hist_venue], dtype=np.int64)
    if not np.array_equal(counted_sizes, np.asarray(sample.venue_sizes_sampled)):
        raise InvalidArgument("venue member counts disagree with the sampled venue sizes")
    return ObservedCounts(
        venue_sizes=np.asarray(sample.venue_sizes_sampled, dtype=np.int64),
        r1=sample.r1,
        r2=sample.r2,
        hist_u1=hist_u1,
        hist_u2=hist_u2,
        hist_venue=hist_venue,
    )
