"""Crime CSV / boundary GeoJSON / demographics ingestion.

Parses incident CSVs with configurable column mappings (city portals use
different schemas), filters to valid in-box coordinates and months
February-December, joins neighborhoods to demographic covariates, assigns
incidents to containing polygons, and partitions by month.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, replace
from datetime import datetime

from .geodata import BoundingBox, LatLon, Polygon, point_in_polygon

log = logging.getLogger(__name__)

DATE_FORMATS = (
    "%Y-%m-%d %H:%M:%S",
    "%Y-%m-%d %H:%M",
    "%m/%d/%Y %H:%M",
    "%m/%d/%Y %H:%M:%S",
    "%Y-%m-%d",
)

# Named column-mapping presets; portal schemas drift, so these can also be
# supplied inline in the run config.
COLUMN_PRESETS = {
    "baltimore-part1": {
        "id": "RowID", "lat": "Latitude", "lon": "Longitude",
        "date": "CrimeDateTime", "type": "Description",
    },
    "chicago-portal": {
        "id": "ID", "lat": "Latitude", "lon": "Longitude",
        "date": "Date", "type": "Primary Type",
    },
    "generic": {
        "id": "id", "lat": "lat", "lon": "lon",
        "date": "date", "type": "type",
    },
}


@dataclass(frozen=True)
class CrimeIncident:
    id: str
    location: LatLon
    timestamp: datetime
    city: str
    crime_type: str
    neighborhood_id: str | None = None


@dataclass(frozen=True)
class Neighborhood:
    id: str
    name: str
    polygons: tuple[Polygon, ...]
    pct_black: float
    pct_white: float
    pct_neither: float
    median_income: float
    poverty_rate: float

    def contains(self, p: LatLon) -> bool:
        return any(point_in_polygon(p, poly) for poly in self.polygons)

    @property
    def boundary(self) -> Polygon:
        return self.polygons[0]


@dataclass(frozen=True)
class MonthSlice:
    city: str
    year: int
    month: int
    incidents: tuple[CrimeIncident, ...]


class IngestError(Exception):
    """Fatal data-loading problem (missing file, missing column, bad value)."""


def _parse_date(raw: str) -> datetime | None:
    raw = raw.strip()
    for fmt in DATE_FORMATS:
        try:
            return datetime.strptime(raw, fmt)
        except ValueError:
            continue
    return None


def parse_crime_csv(path: str, column_mapping: dict[str, str] | str,
                    city: str = "Baltimore") -> tuple[list[CrimeIncident], int]:
    """Parse one incident CSV.

    Returns (incidents, dropped_count); rows with unparseable coordinates
    or dates are skipped and counted. Duplicate ids are kept as-is.
    """
    if isinstance(column_mapping, str):
        try:
            column_mapping = COLUMN_PRESETS[column_mapping]
        except KeyError:
            raise IngestError(f"unknown column preset: {column_mapping!r}")

    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise IngestError(f"cannot open crime CSV {path}: {exc}") from exc

    incidents: list[CrimeIncident] = []
    dropped = 0
    with fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        for key in ("id", "lat", "lon", "date"):
            if column_mapping[key] not in header:
                raise IngestError(
                    f"mapped column {column_mapping[key]!r} ({key}) missing from {path}")
        type_col = column_mapping.get("type")
        for row in reader:
            try:
                lat = float(row[column_mapping["lat"]])
                lon = float(row[column_mapping["lon"]])
                location = LatLon(lat, lon)
            except (TypeError, ValueError):
                dropped += 1
                continue
            ts = _parse_date(row[column_mapping["date"]] or "")
            if ts is None:
                dropped += 1
                continue
            incidents.append(CrimeIncident(
                id=str(row[column_mapping["id"]]),
                location=location,
                timestamp=ts,
                city=city,
                crime_type=str(row.get(type_col, "") or "") if type_col else "",
            ))
    if dropped:
        log.info("parse_crime_csv(%s): dropped %d malformed rows", path, dropped)
    return incidents, dropped


def filter_valid(incidents: list[CrimeIncident],
                 bbox: BoundingBox) -> list[CrimeIncident]:
    """Keep incidents inside the city box with month >= February.

    January is the holdout month and is always excluded.
    """
    return [inc for inc in incidents
            if bbox.contains(inc.location) and inc.timestamp.month >= 2]


def _normalize_pct(values: list[float]) -> list[float]:
    # ACS extracts come in either 0-1 or 0-100 scale; any value above 1.5
    # marks the whole file as percentage-scaled.
    for v in values:
        if not (0.0 <= v <= 100.0):
            raise IngestError(f"percentage outside [0, 100]: {v}")
    if any(v > 1.5 for v in values):
        return [v / 100.0 for v in values]
    return values


def _geojson_polygons(geometry: dict) -> list[Polygon]:
    def ring(coords):
        return [LatLon(lat, lon) for lon, lat in coords]

    gtype = geometry.get("type")
    if gtype == "Polygon":
        rings = geometry["coordinates"]
        return [Polygon(ring(rings[0]), [ring(r) for r in rings[1:]])]
    if gtype == "MultiPolygon":
        out = []
        for rings in geometry["coordinates"]:
            out.append(Polygon(ring(rings[0]), [ring(r) for r in rings[1:]]))
        return out
    raise IngestError(f"unsupported geometry type: {gtype}")


def load_neighborhoods(boundary_path: str, demographics_path: str,
                       id_property: str = "id") -> list[Neighborhood]:
    """Join boundary GeoJSON features with a demographics CSV keyed by id.

    Ids present in only one source are dropped with a warning. pct_neither
    is computed as the remainder when the CSV does not carry it.
    """
    try:
        with open(boundary_path, encoding="utf-8") as fh:
            collection = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise IngestError(f"cannot read boundaries {boundary_path}: {exc}") from exc

    demo: dict[str, dict[str, str]] = {}
    try:
        with open(demographics_path, newline="", encoding="utf-8") as fh:
            for row in csv.DictReader(fh):
                demo[str(row["id"])] = row
    except (OSError, KeyError) as exc:
        raise IngestError(f"cannot read demographics {demographics_path}: {exc}") from exc

    out: list[Neighborhood] = []
    for feature in collection.get("features", []):
        props = feature.get("properties", {})
        fid = str(props.get(id_property, ""))
        if fid not in demo:
            log.warning("boundary id %r has no demographics row; dropped", fid)
            continue
        row = demo[fid]
        pct_black, pct_white = _normalize_pct(
            [float(row["pct_black"]), float(row["pct_white"])])
        if row.get("pct_neither") not in (None, ""):
            (pct_neither,) = _normalize_pct([float(row["pct_neither"])])
        else:
            pct_neither = max(0.0, 1.0 - pct_black - pct_white)
        out.append(Neighborhood(
            id=fid,
            name=str(props.get("name", fid)),
            polygons=tuple(_geojson_polygons(feature["geometry"])),
            pct_black=pct_black,
            pct_white=pct_white,
            pct_neither=pct_neither,
            median_income=float(row["median_income"]),
            poverty_rate=_normalize_pct([float(row["poverty_rate"])])[0],
        ))
    return out


def assign_neighborhoods(incidents: list[CrimeIncident],
                         neighborhoods: list[Neighborhood],
                         ) -> tuple[list[CrimeIncident], int]:
    """Set neighborhood_id by point-in-polygon; first match in input order wins.

    Incidents contained by no polygon are dropped and counted.
    """
    if not neighborhoods:
        raise IngestError("assign_neighborhoods requires at least one neighborhood")
    assigned: list[CrimeIncident] = []
    dropped = 0
    for inc in incidents:
        for nb in neighborhoods:
            if nb.contains(inc.location):
                assigned.append(replace(inc, neighborhood_id=nb.id))
                break
        else:
            dropped += 1
    if dropped:
        log.info("assign_neighborhoods: %d incidents outside all polygons", dropped)
    return assigned, dropped


def partition_by_month(incidents: list[CrimeIncident]) -> list[MonthSlice]:
    """Split one city-year's incidents into per-month slices, months 2..12."""
    if not incidents:
        return []
    cities = {inc.city for inc in incidents}
    years = {inc.timestamp.year for inc in incidents}
    if len(cities) != 1 or len(years) != 1:
        raise IngestError("partition_by_month expects a single (city, year)")
    city, year = cities.pop(), years.pop()
    by_month: dict[int, list[CrimeIncident]] = {}
    for inc in incidents:
        by_month.setdefault(inc.timestamp.month, []).append(inc)
    return [MonthSlice(city, year, m, tuple(by_month[m]))
            for m in sorted(by_month)]


def hull_bbox(neighborhoods: list[Neighborhood], pad: float = 0.01) -> BoundingBox:
    """Bounding box of all neighborhood polygons, expanded by pad degrees.

    Used as the validity box for cities whose box is not configured.
    """
    boxes = [poly.bounds() for nb in neighborhoods for poly in nb.polygons]
    return BoundingBox(
        min(b.lat_min for b in boxes) - pad,
        max(b.lat_max for b in boxes) + pad,
        min(b.lon_min for b in boxes) - pad,
        max(b.lon_max for b in boxes) + pad,
    )
