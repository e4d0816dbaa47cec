"""Synthetic designs and workloads with a known sparse power model.

A design is a ground-truth linear power model over M candidate signals of
which K carry positive weight.  Signals are grouped into correlation
clusters: each cycle a cluster draws a latent toggle bit and every member
copies it with probability ``rho``, otherwise it draws its own bit at the
same rate.  Members of a cluster are therefore correlated (pairwise
``rho**2`` at fixed activity, more once phases modulate the rate), which is
what makes proxy selection non-trivial.

All randomness comes from Philox, a counter-based generator, keyed by
``(seed, stream)`` so each artifact has an independent reproducible stream.
"""
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, ParameterError
from .trace import PowerTrace, SignalCatalog, ToggleMatrix, as_bits

STREAM_DESIGN = 0
STREAM_WORKLOAD = 1
STREAM_NOISE = 2
STREAM_PROFILE = 3

WEIGHT_FLOOR = 1.0
ACTIVITY_FLOOR = 1e-3
ACTIVITY_CEIL = 0.95


def make_rng(seed, stream=0):
    seed = int(seed)
    if not 0 <= seed < 2**64:
        raise ParameterError(f"seed must fit in 64 unsigned bits, got {seed}")
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, int(stream)])))


@dataclass(frozen=True, eq=False)
class SyntheticDesign:
    true_weights: np.ndarray
    cluster_map: np.ndarray
    base_activity: np.ndarray
    noise_sigma: float
    rho: float
    seed: int

    @property
    def n_signals(self):
        return self.true_weights.shape[0]

    @property
    def n_clusters(self):
        return self.base_activity.shape[0]

    @property
    def support(self):
        return np.flatnonzero(self.true_weights > 0)

    def catalog(self):
        return SignalCatalog.from_names(f"sig{j:0{len(str(self.n_signals - 1))}d}"
                                        for j in range(self.n_signals))

    def mean_power(self, multiplier=1.0):
        """Expected noiseless per-cycle power at a given activity multiplier."""
        p = np.clip(self.base_activity * multiplier, ACTIVITY_FLOOR, ACTIVITY_CEIL)
        return float(self.true_weights @ p[self.cluster_map])

    def to_dict(self):
        return {
            "n_signals": self.n_signals,
            "seed": self.seed,
            "rho": self.rho,
            "noise_sigma": self.noise_sigma,
            "true_weights": self.true_weights.tolist(),
            "support": self.support.tolist(),
            "cluster_map": self.cluster_map.tolist(),
            "base_activity": self.base_activity.tolist(),
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d):
        return cls(
            true_weights=np.asarray(d["true_weights"], dtype=np.float64),
            cluster_map=np.asarray(d["cluster_map"], dtype=np.int64),
            base_activity=np.asarray(d["base_activity"], dtype=np.float64),
            noise_sigma=float(d["noise_sigma"]),
            rho=float(d["rho"]),
            seed=int(d["seed"]),
        )

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))

    def __eq__(self, other):
        return isinstance(other, SyntheticDesign) and self.to_json() == other.to_json()


@dataclass(frozen=True)
class WorkloadProfile:
    n_cycles: int
    phases: tuple = field(default=())
    seed: int = 0

    def __post_init__(self):
        phases = tuple((int(n), float(m)) for n, m in self.phases) or ((int(self.n_cycles), 1.0),)
        object.__setattr__(self, "phases", phases)
        if sum(n for n, _ in phases) != self.n_cycles:
            raise ParameterError("phase lengths must sum to n_cycles")
        if any(n < 0 for n, _ in phases):
            raise ParameterError("phase lengths must be non-negative")
        if any(not m > 0 for _, m in phases):
            raise ParameterError("phase multipliers must be > 0")


def gen_design(n_signals, n_true, n_clusters, seed, rho=0.6, weight_floor=WEIGHT_FLOOR,
               weight_decades=1.0, activity_range=(0.05, 0.3), noise_fraction=0.02):
    """Draw a ground-truth design.

    Weights of the ``n_true`` support signals are log-uniform over
    ``[weight_floor, weight_floor * 10**weight_decades]``.  Support members
    are spread round-robin over randomly ordered clusters.  ``noise_sigma``
    is ``noise_fraction`` of the mean noiseless power at multiplier 1.
    """
    M, K, C = int(n_signals), int(n_true), int(n_clusters)
    if M < 1:
        raise ParameterError("need at least one signal")
    if not 0 < K <= M:
        raise ParameterError(f"need 0 < K <= M, got K={K}, M={M}")
    if not 1 <= C <= M:
        raise ParameterError(f"need 1 <= n_clusters <= M, got {C}")
    if not 0.0 <= rho <= 1.0:
        raise ParameterError("rho must lie in [0, 1]")
    lo, hi = activity_range
    if not 0.0 < lo <= hi < 1.0:
        raise ParameterError("activity range must lie inside (0, 1)")
    if weight_floor <= 0:
        raise ParameterError("weight floor must be positive")

    rng = make_rng(seed, STREAM_DESIGN)
    cluster_map = rng.permutation(np.arange(M) % C).astype(np.int64)
    members = [list(rng.permutation(np.flatnonzero(cluster_map == c))) for c in range(C)]
    order = rng.permutation(C)
    support = []
    while len(support) < K:
        for c in order:
            if members[c] and len(support) < K:
                support.append(members[c].pop())
    weights = np.zeros(M)
    weights[np.sort(support)] = weight_floor * 10.0 ** rng.uniform(0.0, weight_decades, K)
    base = rng.uniform(lo, hi, C)
    design = SyntheticDesign(weights, cluster_map, base, 0.0, float(rho), int(seed))
    sigma = noise_fraction * design.mean_power()
    return SyntheticDesign(weights, cluster_map, base, float(sigma), float(rho), int(seed))


def default_profile(n_cycles, seed, n_phases=8, low=0.2, high=2.0):
    """Multi-phase profile with geometrically spaced activity multipliers.

    The default 10x multiplier span yields a spread of windowed mean power
    well beyond 5x, standing in for a diverse training set.
    """
    n_phases = max(1, min(int(n_phases), int(n_cycles))) if n_cycles else 1
    mults = np.geomspace(low, high, n_phases)
    mults = make_rng(seed, STREAM_PROFILE).permutation(mults)
    base, extra = divmod(int(n_cycles), n_phases)
    lengths = [base + (1 if i < extra else 0) for i in range(n_phases)]
    return WorkloadProfile(int(n_cycles), tuple(zip(lengths, mults.tolist())), int(seed))


def gen_workload(design, profile):
    """Toggle matrix for ``design`` driven by ``profile``."""
    rng = make_rng(profile.seed, STREAM_WORKLOAD)
    M = design.n_signals
    cmap = design.cluster_map
    blocks = []
    for length, mult in profile.phases:
        if length == 0:
            continue
        p = np.clip(design.base_activity * mult, ACTIVITY_FLOOR, ACTIVITY_CEIL)
        latent = rng.random((length, design.n_clusters)) < p
        own = rng.random((length, M)) < p[cmap]
        copy = rng.random((length, M)) < design.rho
        blocks.append(np.where(copy, latent[:, cmap], own).astype(np.uint8))
    bits = np.concatenate(blocks) if blocks else np.zeros((0, M), np.uint8)
    return ToggleMatrix(bits)


def gen_power_labels(design, toggles, include_noise=True, seed=None):
    """``y = X w*`` plus optional Gaussian noise of ``design.noise_sigma``."""
    bits = as_bits(toggles)
    if bits.shape[1] != design.n_signals:
        raise DataError(f"toggle matrix has {bits.shape[1]} columns, design has {design.n_signals}")
    support = design.support
    y = bits[:, support].astype(np.float64) @ design.true_weights[support]
    if include_noise and design.noise_sigma > 0:
        rng = make_rng(design.seed if seed is None else seed, STREAM_NOISE)
        y = y + rng.normal(0.0, design.noise_sigma, y.shape[0])
    return PowerTrace(y)


def windowed_means(values, window):
    v = np.asarray(values, dtype=np.float64)
    n = v.shape[0] // window
    return v[: n * window].reshape(n, window).mean(axis=1)


def power_spread(labels, window=256):
    """Ratio of the largest to the smallest windowed mean power."""
    w = windowed_means(labels, window)
    if w.size == 0 or w.min() <= 0:
        return float("inf") if w.size else float("nan")
    return float(w.max() / w.min())


def subsample_uniform(mean_powers, k, n_bins=10, seed=0):
    """Pick ``k`` workload indices so their mean powers spread evenly.

    Workloads are binned on equal-width mean-power bins and drawn from the
    bins in turn, so sparse high- and low-power bins are not swamped.
    """
    p = np.asarray(mean_powers, dtype=np.float64)
    if not 0 < k <= p.size:
        raise ParameterError(f"cannot pick {k} of {p.size} workloads")
    rng = make_rng(seed, STREAM_PROFILE)
    edges = np.linspace(p.min(), p.max(), n_bins + 1)
    bins = np.clip(np.searchsorted(edges, p, side="right") - 1, 0, n_bins - 1)
    pools = [list(rng.permutation(np.flatnonzero(bins == b))) for b in range(n_bins)]
    picked = []
    while len(picked) < k:
        for pool in pools:
            if pool and len(picked) < k:
                picked.append(int(pool.pop()))
    return np.sort(np.asarray(picked, dtype=np.int64))
