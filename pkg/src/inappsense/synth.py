"""Labeled synthetic frame logs with controllable per-activity statistics.

Each activity is described by an :class:`ActivityProfile`: length and
inter-arrival distributions per direction plus the rates at which
management/control frames and retransmissions are mixed in.  Generation
is fully determined by (profile, duration, seed).
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .records import ActivityLabel, CaptureRecord, Direction, FrameType

__all__ = [
    "LENGTH_MAX",
    "LENGTH_MIN",
    "ActivityProfile",
    "Distribution",
    "Exponential",
    "LogNormal",
    "Mixture",
    "distribution_from_json",
    "generate_capture",
    "generate_dataset",
    "paperlike_profiles",
    "profiles_from_json",
    "profiles_to_json",
]

LENGTH_MIN = 40
LENGTH_MAX = 1500


def _phi(z: float) -> float:
    if z == math.inf:
        return 1.0
    if z == -math.inf:
        return 0.0
    return 0.5 * (1.0 + math.erf(z / math.sqrt(2.0)))


class Distribution:
    """A positive continuous distribution with truncated-moment helpers."""

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        raise NotImplementedError

    def mass(self, lo: float = 0.0, hi: float = math.inf) -> float:
        """Probability of [lo, hi]."""
        raise NotImplementedError

    def partial_mean(self, lo: float = 0.0, hi: float = math.inf) -> float:
        """Integral of x f(x) over [lo, hi]."""
        raise NotImplementedError

    def mean(self, lo: float = 0.0, hi: float = math.inf) -> float:
        """Mean of the distribution truncated to [lo, hi]."""
        return self.partial_mean(lo, hi) / self.mass(lo, hi)

    def to_json(self) -> dict:
        raise NotImplementedError


@dataclass(frozen=True)
class LogNormal(Distribution):
    mu: float
    sigma: float

    def __post_init__(self):
        if not (math.isfinite(self.mu) and self.sigma > 0):
            raise ValueError("lognormal needs finite mu and sigma > 0")

    def sample(self, rng, n):
        return rng.lognormal(self.mu, self.sigma, n)

    def _z(self, x, shift=0.0):
        if x <= 0:
            return -math.inf
        if x == math.inf:
            return math.inf
        return (math.log(x) - self.mu - shift) / self.sigma

    def mass(self, lo=0.0, hi=math.inf):
        return _phi(self._z(hi)) - _phi(self._z(lo))

    def partial_mean(self, lo=0.0, hi=math.inf):
        s2 = self.sigma**2
        scale = math.exp(self.mu + s2 / 2)
        return scale * (_phi(self._z(hi, s2)) - _phi(self._z(lo, s2)))

    def to_json(self):
        return {"family": "lognormal", "mu": self.mu, "sigma": self.sigma}


@dataclass(frozen=True)
class Exponential(Distribution):
    rate: float

    def __post_init__(self):
        if not (math.isfinite(self.rate) and self.rate > 0):
            raise ValueError("exponential needs a finite rate > 0")

    def sample(self, rng, n):
        return rng.exponential(1.0 / self.rate, n)

    def mass(self, lo=0.0, hi=math.inf):
        return math.exp(-self.rate * lo) - math.exp(-self.rate * hi)

    def partial_mean(self, lo=0.0, hi=math.inf):
        def antideriv(x):
            if x == math.inf:
                return 0.0
            return -(x + 1.0 / self.rate) * math.exp(-self.rate * x)

        return antideriv(hi) - antideriv(lo)

    def to_json(self):
        return {"family": "exponential", "rate": self.rate}


@dataclass(frozen=True)
class Mixture(Distribution):
    weights: tuple[float, ...]
    components: tuple[Distribution, ...]

    def __post_init__(self):
        object.__setattr__(self, "weights", tuple(float(w) for w in self.weights))
        object.__setattr__(self, "components", tuple(self.components))
        if not self.components or len(self.weights) != len(self.components):
            raise ValueError("mixture needs one weight per component")
        if any(w < 0 for w in self.weights) or not math.isclose(sum(self.weights), 1.0, abs_tol=1e-9):
            raise ValueError("mixture weights must be non-negative and sum to 1")

    def sample(self, rng, n):
        which = rng.choice(len(self.components), size=n, p=self.weights)
        out = np.empty(n)
        for k, comp in enumerate(self.components):
            sel = which == k
            out[sel] = comp.sample(rng, int(sel.sum()))
        return out

    def mass(self, lo=0.0, hi=math.inf):
        return sum(w * c.mass(lo, hi) for w, c in zip(self.weights, self.components))

    def partial_mean(self, lo=0.0, hi=math.inf):
        return sum(w * c.partial_mean(lo, hi) for w, c in zip(self.weights, self.components))

    def to_json(self):
        return {
            "family": "mixture",
            "weights": list(self.weights),
            "components": [c.to_json() for c in self.components],
        }


def distribution_from_json(obj: dict) -> Distribution:
    family = obj.get("family")
    try:
        if family == "lognormal":
            return LogNormal(float(obj["mu"]), float(obj["sigma"]))
        if family == "exponential":
            return Exponential(float(obj["rate"]))
        if family == "mixture":
            return Mixture(tuple(obj["weights"]), tuple(distribution_from_json(c) for c in obj["components"]))
    except KeyError as exc:
        raise ValueError(f"{family} distribution is missing {exc}") from None
    raise ValueError(f"unknown distribution family {family!r}")


def sample_lengths(dist: Distribution, rng: np.random.Generator, n: int) -> np.ndarray:
    """Integer frame lengths from ``dist`` truncated to [40, 1500] by rejection."""
    out = np.empty(0)
    while out.size < n:
        draw = dist.sample(rng, max(16, 2 * (n - out.size)))
        draw = draw[(draw >= LENGTH_MIN) & (draw <= LENGTH_MAX)]
        out = np.concatenate([out, draw])
    return np.rint(out[:n]).astype(int)


def sample_arrivals(dist: Distribution, rng: np.random.Generator, duration: float) -> np.ndarray:
    """Arrival times in (0, duration] with inter-arrival gaps drawn from ``dist``."""
    expected = duration / dist.mean()
    chunks, t = [], 0.0
    while True:
        gaps = dist.sample(rng, int(expected * 1.1) + 16)
        times = t + np.cumsum(gaps)
        chunks.append(times)
        t = float(times[-1])
        if t > duration:
            break
    times = np.concatenate(chunks)
    return times[times <= duration]


@dataclass(frozen=True)
class ActivityProfile:
    label: ActivityLabel
    up_length: Distribution
    down_length: Distribution
    up_iat: Distribution
    down_iat: Distribution
    mgmt_ctrl_rate: float = 0.0
    retry_rate: float = 0.0

    def __post_init__(self):
        for name in ("mgmt_ctrl_rate", "retry_rate"):
            value = getattr(self, name)
            if not 0.0 <= value < 1.0:
                raise ValueError(f"{name} must be in [0, 1), got {value}")
        for name in ("up_length", "down_length"):
            if getattr(self, name).mass(LENGTH_MIN, LENGTH_MAX) < 1e-6:
                raise ValueError(f"{name} puts no mass on [{LENGTH_MIN}, {LENGTH_MAX}] bytes")

    @property
    def uplink_fraction(self) -> float:
        """Expected share of data frames sent uplink, implied by the two arrival rates."""
        up, down = 1.0 / self.up_iat.mean(), 1.0 / self.down_iat.mean()
        return up / (up + down)

    def mean_length(self, direction: Direction) -> float:
        dist = self.up_length if direction is Direction.UP else self.down_length
        return dist.mean(LENGTH_MIN, LENGTH_MAX)

    def to_json(self) -> dict:
        return {
            "app": self.label.app,
            "activity": self.label.activity,
            "up_length": self.up_length.to_json(),
            "down_length": self.down_length.to_json(),
            "up_iat": self.up_iat.to_json(),
            "down_iat": self.down_iat.to_json(),
            "mgmt_ctrl_rate": self.mgmt_ctrl_rate,
            "retry_rate": self.retry_rate,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "ActivityProfile":
        keys = {"app", "activity", "up_length", "down_length", "up_iat", "down_iat", "mgmt_ctrl_rate", "retry_rate"}
        unknown = set(obj) - keys
        if unknown:
            raise ValueError(f"unknown profile key(s): {sorted(unknown)}")
        try:
            return cls(
                ActivityLabel(obj["app"], obj["activity"]),
                distribution_from_json(obj["up_length"]),
                distribution_from_json(obj["down_length"]),
                distribution_from_json(obj["up_iat"]),
                distribution_from_json(obj["down_iat"]),
                float(obj.get("mgmt_ctrl_rate", 0.0)),
                float(obj.get("retry_rate", 0.0)),
            )
        except KeyError as exc:
            raise ValueError(f"profile is missing {exc}") from None


def profiles_to_json(profiles: Sequence[ActivityProfile]) -> dict:
    return {"profiles": [p.to_json() for p in profiles]}


def profiles_from_json(obj: dict) -> list[ActivityProfile]:
    if not isinstance(obj, dict) or not isinstance(obj.get("profiles"), list):
        raise ValueError("profile config must be an object with a 'profiles' list")
    return [ActivityProfile.from_json(p) for p in obj["profiles"]]


def generate_capture(profile: ActivityProfile, duration: float, seed=0) -> list[CaptureRecord]:
    """Time-ordered frame stream for one activity over ``[0, duration]``.

    Retransmissions are duplicates of a data frame a few hundred
    microseconds later with the retry flag set; management and control
    frames are scattered uniformly and make up ``mgmt_ctrl_rate`` of all
    frames on average.
    """
    if not (isinstance(duration, (int, float)) and math.isfinite(duration) and duration > 0):
        raise ValueError(f"duration must be positive, got {duration!r}")
    rng = np.random.default_rng(seed)

    parts_ts, parts_len, parts_dir, parts_type, parts_retry = [], [], [], [], []

    def add(ts, lengths, up, ftype, retry):
        parts_ts.append(ts)
        parts_len.append(lengths)
        parts_dir.append(up)
        parts_type.append(ftype)
        parts_retry.append(retry)

    for up, iat, length in ((True, profile.up_iat, profile.up_length), (False, profile.down_iat, profile.down_length)):
        ts = sample_arrivals(iat, rng, duration)
        add(ts, sample_lengths(length, rng, ts.size), np.full(ts.size, up), np.zeros(ts.size, int), np.zeros(ts.size, bool))

    data_ts = np.concatenate(parts_ts)
    data_len = np.concatenate(parts_len)
    data_up = np.concatenate(parts_dir)
    n_data = data_ts.size

    if profile.retry_rate > 0 and n_data:
        hit = rng.random(n_data) < profile.retry_rate
        delay = rng.uniform(50e-6, 500e-6, int(hit.sum()))
        add(np.minimum(data_ts[hit] + delay, duration), data_len[hit], data_up[hit],
            np.zeros(delay.size, int), np.ones(delay.size, bool))

    n_before = sum(p.size for p in parts_ts)
    if profile.mgmt_ctrl_rate > 0 and n_before:
        n_mc = int(rng.negative_binomial(n_before, 1.0 - profile.mgmt_ctrl_rate))
        ftype = rng.integers(1, 3, n_mc)  # 1 = mgmt, 2 = ctrl
        lengths = np.where(ftype == 1, rng.integers(40, 400, n_mc), rng.integers(14, 40, n_mc))
        add(rng.uniform(0.0, duration, n_mc), lengths, rng.random(n_mc) < 0.5, ftype, np.zeros(n_mc, bool))

    ts = np.concatenate(parts_ts)
    order = np.argsort(ts, kind="stable")
    lengths = np.concatenate(parts_len)[order]
    ups = np.concatenate(parts_dir)[order]
    ftypes = np.concatenate(parts_type)[order]
    retries = np.concatenate(parts_retry)[order]
    kinds = (FrameType.DATA, FrameType.MGMT, FrameType.CTRL)
    label = profile.label
    return [
        CaptureRecord(float(t), int(n), Direction.UP if u else Direction.DOWN, kinds[k], bool(r), True, label)
        for t, n, u, k, r in zip(ts[order].tolist(), lengths.tolist(), ups.tolist(), ftypes.tolist(), retries.tolist())
    ]


def generate_dataset(profiles: Sequence[ActivityProfile], duration: float, seed=0) -> list[CaptureRecord]:
    """Concatenated captures, one per profile, each from its own child seed."""
    seeds = np.random.SeedSequence(seed).spawn(len(profiles))
    records: list[CaptureRecord] = []
    for profile, child in zip(profiles, seeds):
        records.extend(generate_capture(profile, duration, child))
    return records


# -- the paperlike-8 fixture -------------------------------------------------

# (app, [activities]) in a fixed order; 4-6 activities per app.
_PAPERLIKE_APPS = (
    ("facebook", ("post_photo", "like_post", "comment", "live_video", "scroll_feed", "add_story")),
    ("instagram", ("post_photo", "like_post", "comment", "view_story", "upload_reel")),
    ("youtube", ("watch_video", "upload_video", "search", "comment")),
    ("gmail", ("send_mail", "open_mail", "attach_file", "search")),
    ("messenger", ("send_text", "send_image", "voice_call", "video_call", "send_sticker")),
    ("skype", ("audio_call", "video_call", "send_text", "send_video", "screen_share")),
    ("whatsapp", ("send_text", "send_image", "voice_call", "video_call", "send_voice_note")),
    ("viber", ("send_text", "send_image", "voice_call", "video_call")),
)

# Known-app activities sit on a lattice over (uplink median length,
# downlink median length, frame rate).  Instagram and Skype copy Facebook
# and YouTube with a mild shift (the overlapping pairs); Gmail and Viber
# sit at lattice-cell centres, between trained activities.
_LEN_LEVELS = (70.0, 175.0, 440.0, 1100.0)
_RATE_LEVELS = (30.0, 90.0)
_LEN_SIGMA = 0.3


def _lattice_profile(label, up_len, down_len, up_rate, down_rate, mgmt_ctrl_rate, retry_rate):
    return ActivityProfile(
        label,
        LogNormal(math.log(up_len), _LEN_SIGMA),
        LogNormal(math.log(down_len), _LEN_SIGMA),
        Exponential(up_rate),
        Exponential(down_rate),
        mgmt_ctrl_rate,
        retry_rate,
    )


def paperlike_profiles(mgmt_ctrl_rate: float = 0.05, retry_rate: float = 0.03) -> list[ActivityProfile]:
    """The shipped 8-app, 38-activity fixture."""
    L, R = _LEN_LEVELS, _RATE_LEVELS
    lattice = [(i, j, k) for k in range(len(R)) for i in range(len(L)) for j in range(len(L))]
    # interleave so each app spreads across the lattice
    primary = {"facebook": 6, "youtube": 4, "messenger": 5, "whatsapp": 5}
    order = [lattice[(7 * n) % len(lattice)] for n in range(len(lattice))]
    slots = iter(order)
    placed = {app: [next(slots) for _ in range(n)] for app, n in primary.items()}

    mid = lambda a, b: math.sqrt(a * b)  # noqa: E731
    centres = [
        (mid(L[i], L[i + 1]), mid(L[j], L[j + 1]), R[k])
        for k in range(len(R)) for i in range(len(L) - 1) for j in range(len(L) - 1)
    ]
    centre_iter = iter([centres[(5 * n) % len(centres)] for n in range(len(centres))])

    profiles = []
    for app, activities in _PAPERLIKE_APPS:
        for n, act in enumerate(activities):
            label = ActivityLabel(app, act)
            if app in placed:
                i, j, k = placed[app][n]
                up, down, rate = L[i], L[j], R[k]
            elif app in ("instagram", "skype"):
                twin = "facebook" if app == "instagram" else "youtube"
                m = len(placed[twin])
                i, j, k = placed[twin][n % m]
                # shifted copy: longer uplink (or, on wrap-around, downlink) frames, busier link
                up, down, rate = L[i], L[j], R[k] * 1.8
                if n < m:
                    up = min(up * 1.6, 1300.0)
                else:
                    down = min(down * 1.6, 1300.0)
            else:
                up, down, rate = next(centre_iter)
            profiles.append(_lattice_profile(label, up, down, rate, 1.5 * rate, mgmt_ctrl_rate, retry_rate))
    return profiles
