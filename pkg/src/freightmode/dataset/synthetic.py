"""Seeded synthetic shipments in the CFS schema.

Generative story (a test fixture, not a claim about real freight behaviour):

1. Each shipment's mode is drawn from ``target_mode_shares``; its expansion
   weight is log-normal and independent of the mode, so weighted shares
   converge to the targets.
2. Every attribute is then drawn from a mode-conditional distribution. With
   probability ``noise_level`` (independently per attribute) the attribute is
   instead drawn as if the shipment had a different mode sampled from the
   shares, which blurs class boundaries; ``noise_level = 1`` makes attributes
   independent of mode.
3. Each shipment also belongs to one of two operating segments of its mode,
   and size and distance are drawn per (mode, segment). The segments put the
   truck and parcel modes on interleaved cells of the size x distance plane,
   so the class boundary there is an interaction, not an additive effect.
   Air moves light, valuable goods far; the "other" group (rail, water,
   pipeline) carries very heavy, low-value, often hazardous bulk.
4. Industry and CFS-area codes carry sharp mode preferences that are
   arbitrary in code order: usable by trees, invisible to models that treat
   a code as a linear effect. The secondary spatial attributes lean
   towards a mode in opposite directions in the two segments.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import DataError
from .encoding import EncodedDataset, encode_columns
from .records import ShipmentRecord
from .schema import DEFAULT_BINNING, DEFAULT_REGISTRY, N_CLASSES, BinningScheme, ModeClass, SchemaRegistry

# Weighted 2012 shares (for-hire, private, parcel, air, other); the printed
# percentages sum to 100.01 and are renormalized.
CFS2012_MODE_SHARES = (0.1658, 0.2606, 0.5585, 0.0136, 0.0016)

_STRUCTURE_SEED = 2012

# Per-mode parameters, index order = ModeClass.
# Size and distance medians per (mode, operating segment). Each of the three
# large modes occupies two cells of the size x distance plane that no single
# linear score can separate from the others' cells: for-hire trucks run heavy
# long hauls and mid-size local loads, private trucks the reverse, parcel
# carriers tiny long-distance and mid-size regional shipments.
_SIZE_MEDIAN_LB = np.array([[8000.0, 300.0], [8000.0, 300.0], [10.0, 300.0], [10.0, 40.0], [40000.0, 40000.0]])
_SIZE_SIGMA = 0.6
_DIST_MEDIAN_MI = np.array([[1200.0, 50.0], [50.0, 1200.0], [1200.0, 300.0], [1500.0, 1500.0], [300.0, 300.0]])
_DIST_SIGMA = 0.5
_VALUE_PER_LB = np.array([2.0, 1.2, 25.0, 80.0, 0.4])
_COMMODITY_P = np.array([
    [0.12, 0.15, 0.10, 0.08, 0.12, 0.10, 0.18, 0.05, 0.10],
    [0.15, 0.20, 0.15, 0.12, 0.08, 0.08, 0.12, 0.03, 0.07],
    [0.03, 0.12, 0.01, 0.01, 0.10, 0.12, 0.20, 0.28, 0.13],
    [0.02, 0.05, 0.00, 0.00, 0.08, 0.05, 0.20, 0.50, 0.10],
    [0.15, 0.08, 0.25, 0.25, 0.12, 0.08, 0.05, 0.01, 0.01],
])
_HAZMAT_P = np.array([
    [0.05, 0.03, 0.92],
    [0.07, 0.03, 0.90],
    [0.002, 0.005, 0.993],
    [0.005, 0.01, 0.985],
    [0.25, 0.10, 0.65],
])
_P_TEMP_CONTROLLED = np.array([0.10, 0.12, 0.02, 0.05, 0.03])
_P_EXPORT = np.array([0.04, 0.02, 0.05, 0.30, 0.15])
# Secondary spatial attributes per (mode, segment). The lean towards a mode
# flips sign between segments, so the marginal lean per mode stays weak and
# only a model that has already located the segment can use it.
# Employee density is in thousands per square mile, on the scale of the other densities.
_EMPLOYEE_MEDIAN = np.array([[0.1136, 0.1268], [0.0476, 0.1928], [0.2006, 0.0398], [0.2246, 0.0158], [0.0146, 0.2258]])
_WAREHOUSE_MEAN = np.array([[11.3, 10.7], [5.0, 17.0], [17.0, 5.0], [19.7, 2.3], [2.0, 20.0]])
_HIGHWAY_MEDIAN = np.array([[1.202, 1.226], [0.992, 1.436], [1.442, 0.986], [1.532, 0.896], [0.902, 1.526]])
_RAILWAY_MEDIAN = np.array([[0.099, 0.087], [0.057, 0.129], [0.078, 0.108], [0.069, 0.117], [0.162, 0.024]])
_P_WARM = np.array([[0.458, 0.494], [0.398, 0.554], [0.488, 0.464], [0.548, 0.404], [0.488, 0.464]])
_POP_MEDIAN = np.array([[0.396, 0.588], [0.276, 0.708], [0.756, 0.228], [0.906, 0.078], [0.126, 0.858]])
_P_LOW_INCOME = np.array([[0.446, 0.398], [0.536, 0.308], [0.356, 0.488], [0.296, 0.548], [0.476, 0.368]])
# Gamma concentration of the per-mode code preferences (smaller = more peaked).
_NAICS_CONCENTRATION = 0.1
_CFS_CONCENTRATION = 0.5


@dataclass(frozen=True)
class SyntheticSpec:
    n_records: int
    target_mode_shares: tuple = CFS2012_MODE_SHARES
    seed: int = 0
    noise_level: float = 0.3

    def __post_init__(self):
        if int(self.n_records) < 1:
            raise DataError(f"n_records must be positive, got {self.n_records}")
        shares = np.asarray(self.target_mode_shares, dtype=float)
        if shares.shape != (N_CLASSES,) or np.any(shares < 0):
            raise DataError("target_mode_shares must be five nonnegative numbers")
        # tolerate rounding in published percentages, then store an exact simplex
        if abs(shares.sum() - 1.0) > 1e-3:
            raise DataError(f"target_mode_shares sum to {shares.sum():.6f}, not 1")
        shares = shares / shares.sum()
        if not 0.0 <= self.noise_level <= 1.0:
            raise DataError("noise_level must lie in [0, 1]")
        object.__setattr__(self, "n_records", int(self.n_records))
        object.__setattr__(self, "target_mode_shares", tuple(float(s) for s in shares))
        object.__setattr__(self, "seed", int(self.seed))
        object.__setattr__(self, "noise_level", float(self.noise_level))


def _preferences(rng, n_codes, concentration):
    p = rng.gamma(concentration, size=(N_CLASSES, n_codes))
    return p / p.sum(axis=1, keepdims=True)


def _categorical(rng, probs, modes):
    """Draw one category per row from ``probs[mode]`` by inverse CDF."""
    cdf = np.cumsum(probs, axis=1)
    cdf[:, -1] = 1.0
    u = rng.random(modes.shape[0])
    out = np.empty(modes.shape[0], dtype=np.int64)
    for m in range(probs.shape[0]):
        rows = modes == m
        # number of cdf entries strictly below u
        out[rows] = np.searchsorted(cdf[m], u[rows], side="left")
    return out


def draw_columns(spec: SyntheticSpec, registry: SchemaRegistry = DEFAULT_REGISTRY) -> dict:
    """Column arrays for ``spec.n_records`` shipments, keyed by record field name."""
    n = spec.n_records
    shares = np.asarray(spec.target_mode_shares)
    rng = np.random.default_rng(spec.seed)
    structure = np.random.default_rng(_STRUCTURE_SEED)
    vocab = registry.vocabularies
    naics_p = _preferences(structure, len(vocab["naics"]), _NAICS_CONCENTRATION)
    origin_p = _preferences(structure, len(vocab["origin_cfs"]), _CFS_CONCENTRATION)
    dest_p = _preferences(structure, len(vocab["dest_cfs"]), _CFS_CONCENTRATION)

    mode = rng.choice(N_CLASSES, size=n, p=shares)
    weight = rng.lognormal(np.log(40.0), 0.6, size=n)
    segment = rng.integers(0, 2, size=n)

    def mode_view():
        swap = rng.random(n) < spec.noise_level
        other = rng.choice(N_CLASSES, size=n, p=shares)
        return np.where(swap, other, mode)

    def lookup(table, m):
        # per-mode tables are 1-D, per (mode, segment) tables 2-D
        return table[m, segment] if table.ndim == 2 else table[m]

    def lognormal(median, sigma):
        m = mode_view()
        sigma = np.broadcast_to(np.asarray(sigma, dtype=float), (N_CLASSES,))
        return lookup(median, m) * np.exp(sigma[m] * rng.standard_normal(n))

    def bernoulli(p):
        return rng.random(n) < lookup(p, mode_view())

    size = lognormal(_SIZE_MEDIAN_LB, _SIZE_SIGMA)
    value = size * lognormal(_VALUE_PER_LB, 0.9)
    distance = lognormal(_DIST_MEDIAN_MI, _DIST_SIGMA)

    def pick(name, probs):
        return np.asarray(vocab[name], dtype=object)[_categorical(rng, probs, mode_view())]

    cols = {
        "mode": mode,
        "size_lb": size,
        "value_usd": value,
        "distance_mi": distance,
        "commodity": pick("commodity", _COMMODITY_P),
        "hazmat": pick("hazmat", _HAZMAT_P),
        "temp_controlled": bernoulli(_P_TEMP_CONTROLLED),
        "export": bernoulli(_P_EXPORT),
        "origin_cfs": pick("origin_cfs", origin_p),
        "dest_cfs": pick("dest_cfs", dest_p),
        "naics": pick("naics", naics_p),
        "origin_employee_density": lognormal(_EMPLOYEE_MEDIAN, 1.0),
        "origin_warehouse_count": rng.poisson(lookup(_WAREHOUSE_MEAN, mode_view())),
        "origin_highway_density": lognormal(_HIGHWAY_MEDIAN, 0.5),
        "origin_railway_density": lognormal(_RAILWAY_MEDIAN, 0.6),
        "origin_temp_over_60f": bernoulli(_P_WARM),
        "dest_population_density": lognormal(_POP_MEDIAN, 1.0),
        "dest_income_under_50k": bernoulli(_P_LOW_INCOME),
        "dest_temp_over_60f": bernoulli(_P_WARM),
        "dest_highway_density": lognormal(_HIGHWAY_MEDIAN, 0.5),
        "dest_railway_density": lognormal(_RAILWAY_MEDIAN, 0.6),
        "weight": weight,
    }
    return cols


def generate_synthetic(spec: SyntheticSpec, registry: SchemaRegistry = DEFAULT_REGISTRY) -> list[ShipmentRecord]:
    cols = draw_columns(spec, registry)
    as_lists = {k: np.asarray(v).tolist() for k, v in cols.items()}
    as_lists["mode"] = [ModeClass(m) for m in as_lists["mode"]]
    names = list(as_lists)
    return [ShipmentRecord(**dict(zip(names, row))) for row in zip(*as_lists.values())]


def synthetic_dataset(
    spec: SyntheticSpec,
    scheme: BinningScheme = DEFAULT_BINNING,
    registry: SchemaRegistry = DEFAULT_REGISTRY,
) -> EncodedDataset:
    """Encoded form of ``generate_synthetic(spec)`` without materializing records."""
    return encode_columns(draw_columns(spec, registry), scheme, registry)
