"""Bundled synthetic city: a two-cluster fixture with configurable racial
geography, so the whole pipeline and test suite run without any real
dataset.

Cluster A sits at (-0.5, 0) in normalized coordinates and is
majority-Black; cluster B sits at (+0.5, 0) and is majority-White. Each
cluster is wrapped in a square neighborhood polygon carrying ACS-style
covariates.
"""

from __future__ import annotations

from dataclasses import dataclass
from datetime import datetime

import numpy as np

from .gan import denormalize_coords
from .geodata import BoundingBox, LatLon, Polygon
from .ingest import CrimeIncident, MonthSlice, Neighborhood
from .simulate import derive_seed

SYNTH_BBOX = BoundingBox(39.20, 39.37, -76.71, -76.53)

CLUSTER_A = (-0.5, 0.0)
CLUSTER_B = (0.5, 0.0)
CLUSTER_HALF_WIDTH = 0.4  # normalized units, square neighborhood extent


@dataclass(frozen=True)
class SyntheticCityConfig:
    incidents_per_month: int = 60
    weight_a: float = 0.5       # share of incidents in cluster A
    sigma: float = 0.08         # cluster spread, normalized units
    pct_black_a: float = 0.90
    pct_black_b: float = 0.05
    seed: int = 0


def _square_polygon(center: tuple[float, float], half: float,
                    bbox: BoundingBox) -> Polygon:
    cu, cv = center
    corners = [(cu - half, cv - half), (cu - half, cv + half),
               (cu + half, cv + half), (cu + half, cv - half)]
    return Polygon([denormalize_coords(u, v, bbox) for u, v in corners])


def synthetic_neighborhoods(cfg: SyntheticCityConfig) -> list[Neighborhood]:
    bbox = SYNTH_BBOX
    half = CLUSTER_HALF_WIDTH
    return [
        Neighborhood(
            id="A", name="Cluster A",
            polygons=(_square_polygon(CLUSTER_A, half, bbox),),
            pct_black=cfg.pct_black_a,
            pct_white=1.0 - cfg.pct_black_a - 0.05,
            pct_neither=0.05,
            median_income=32_000.0, poverty_rate=0.31),
        Neighborhood(
            id="B", name="Cluster B",
            polygons=(_square_polygon(CLUSTER_B, half, bbox),),
            pct_black=cfg.pct_black_b,
            pct_white=1.0 - cfg.pct_black_b - 0.05,
            pct_neither=0.05,
            median_income=78_000.0, poverty_rate=0.08),
    ]


def _sample_cluster_point(center: tuple[float, float], sigma: float,
                          rng: np.random.Generator) -> tuple[float, float]:
    # Rejection-sample so every incident stays inside its neighborhood square.
    cu, cv = center
    half = CLUSTER_HALF_WIDTH
    while True:
        u = cu + sigma * rng.standard_normal()
        v = cv + sigma * rng.standard_normal()
        if abs(u - cu) < half * 0.98 and abs(v - cv) < half * 0.98:
            return u, v


def synthetic_month_slice(city: str, year: int, month: int,
                          cfg: SyntheticCityConfig) -> MonthSlice:
    rng = np.random.default_rng(derive_seed(cfg.seed, "synth", city, year, month))
    n_a = int(round(cfg.incidents_per_month * cfg.weight_a))
    incidents = []
    for i in range(cfg.incidents_per_month):
        if i < n_a:
            center, nb_id = CLUSTER_A, "A"
        else:
            center, nb_id = CLUSTER_B, "B"
        u, v = _sample_cluster_point(center, cfg.sigma, rng)
        incidents.append(CrimeIncident(
            id=f"{city}-{year}-{month:02d}-{i:04d}",
            location=denormalize_coords(u, v, SYNTH_BBOX),
            timestamp=datetime(year, month, 15, 12, 0),
            city=city,
            crime_type="synthetic",
            neighborhood_id=nb_id))
    return MonthSlice(city, year, month, tuple(incidents))


def synthetic_year(city: str, year: int, cfg: SyntheticCityConfig,
                   months: range = range(2, 13)) -> list[MonthSlice]:
    return [synthetic_month_slice(city, year, m, cfg) for m in months]
