"""One-month simulation runs: race assignment, patrol deployment, and
Noisy-OR detection per crime.

Two modes. Detected: patrols are sampled from a GAN trained on the month's
incident coordinates. Reported: each crime is independently reported with
the citizen reporting probability, and patrols are drawn from the reported
crimes' locations (configurable alternative reading: a report simply counts
as a detection).
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .gan import GanModel, TrainConfig, sample_patrol, train_gan
from .geodata import BoundingBox, GridIndex, LatLon, build_grid_index, radius_query
from .ingest import CrimeIncident, MonthSlice, Neighborhood

RACE_GROUPS = ("Black", "White", "Neither")

# How reported mode places patrols: from the reported-crime locations, or
# treating a citizen report directly as a detection.
PATROL_FROM_REPORTS = "patrol_from_reports"
REPORT_IS_DETECTION = "report_is_detection"


@dataclass(frozen=True)
class SimConfig:
    n_officers: int = 60
    radius_ft: float = 700.0
    p_officer: float = 0.85
    reporting_prob: float = 0.521
    mode: str = "detected"
    seed: int = 0
    expected_value: bool = False
    reported_mode_semantics: str = PATROL_FROM_REPORTS

    def __post_init__(self):
        if self.n_officers < 1:
            raise ValueError("n_officers must be >= 1")
        if self.radius_ft <= 0:
            raise ValueError("radius_ft must be positive")
        if not 0.0 < self.p_officer <= 1.0:
            raise ValueError("p_officer must be in (0, 1]")
        if not 0.0 < self.reporting_prob <= 1.0:
            raise ValueError("reporting_prob must be in (0, 1]")
        if self.mode not in ("detected", "reported"):
            raise ValueError(f"unknown mode: {self.mode!r}")
        if self.reported_mode_semantics not in (PATROL_FROM_REPORTS,
                                                REPORT_IS_DETECTION):
            raise ValueError("bad reported_mode_semantics")


@dataclass(frozen=True)
class DetectionOutcome:
    incident_id: str
    neighborhood_id: str
    group: str
    k_officers: int
    detection_prob: float
    detected: bool
    reported: bool | None = None


@dataclass
class MonthRunResult:
    city: str
    year: int
    month: int
    mode: str
    outcomes: list[DetectionOutcome]
    patrol_points: list[LatLon]
    mode_collapsed: bool = False
    group_counts: dict[str, int] = field(default_factory=dict)

    def to_csv(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("id,group,k,prob,detected\n")
            for o in self.outcomes:
                fh.write(f"{o.incident_id},{o.group},{o.k_officers},"
                         f"{o.detection_prob!r},{int(o.detected)}\n")


def derive_seed(master_seed: int, *parts) -> int:
    """Stable per-month RNG seed from the master seed and run coordinates.

    Hash-derived so months are independent and reorderable.
    """
    text = f"{master_seed}|" + "|".join(str(p) for p in parts)
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


def assign_race(incident: CrimeIncident,
                neighborhoods: dict[str, Neighborhood],
                rng: np.random.Generator) -> str:
    """Categorical draw from the containing neighborhood's group proportions."""
    nb = neighborhoods.get(incident.neighborhood_id)
    if nb is None:
        raise KeyError(f"incident {incident.id} has unknown neighborhood "
                       f"{incident.neighborhood_id!r}")
    probs = np.array([nb.pct_black, nb.pct_white, nb.pct_neither])
    probs = probs / probs.sum()
    return RACE_GROUPS[rng.choice(len(RACE_GROUPS), p=probs)]


def noisy_or_probability(crime: LatLon, patrols: GridIndex,
                         radius_ft: float, p_officer: float) -> float:
    """Detection probability 1 - (1 - p)^k over the k officers within radius."""
    if not 0.0 < p_officer <= 1.0:
        raise ValueError("p_officer must be in (0, 1]")
    k = len(radius_query(patrols, crime, radius_ft))
    return 1.0 - (1.0 - p_officer) ** k


def _evaluate_detections(slice_: MonthSlice,
                         neighborhoods: dict[str, Neighborhood],
                         patrol_points: list[LatLon],
                         bbox: BoundingBox,
                         sim_cfg: SimConfig,
                         rng: np.random.Generator,
                         reported: dict[str, bool] | None = None,
                         ) -> list[DetectionOutcome]:
    index = build_grid_index(patrol_points, sim_cfg.radius_ft, bbox)
    outcomes = []
    for inc in slice_.incidents:
        group = assign_race(inc, neighborhoods, rng)
        k = len(radius_query(index, inc.location, sim_cfg.radius_ft))
        prob = 1.0 - (1.0 - sim_cfg.p_officer) ** k
        if sim_cfg.expected_value:
            detected = prob > 0.0
        else:
            detected = bool(rng.random() < prob)
        outcomes.append(DetectionOutcome(
            incident_id=inc.id,
            neighborhood_id=inc.neighborhood_id or "",
            group=group,
            k_officers=k,
            detection_prob=prob,
            detected=detected,
            reported=None if reported is None else reported.get(inc.id),
        ))
    return outcomes


def _group_counts(outcomes: list[DetectionOutcome]) -> dict[str, int]:
    counts = {g: 0 for g in RACE_GROUPS}
    for o in outcomes:
        counts[o.group] += 1
    return counts


def run_month_detected(slice_: MonthSlice,
                       neighborhoods: dict[str, Neighborhood],
                       gan_cfg: TrainConfig, sim_cfg: SimConfig,
                       bbox: BoundingBox,
                       model: GanModel | None = None) -> MonthRunResult:
    """Detected mode: GAN trained on the month's coordinates places patrols.

    A pre-trained model may be supplied (debias experiment retrains on a
    rebalanced set); otherwise the GAN is trained here on the slice.
    """
    if not slice_.incidents:
        raise ValueError("cannot run on an empty month slice")
    seed = derive_seed(sim_cfg.seed, slice_.city, slice_.year, slice_.month,
                       "detected")
    mode_collapsed = False
    if model is None:
        train_cfg = TrainConfig(epochs=gan_cfg.epochs, batch_size=gan_cfg.batch_size,
                                lr=gan_cfg.lr, beta1=gan_cfg.beta1,
                                beta2=gan_cfg.beta2, seed=seed)
        model, history = train_gan([i.location for i in slice_.incidents],
                                   train_cfg, bbox)
        mode_collapsed = history.mode_collapsed
    rng = np.random.default_rng(derive_seed(seed, "sim"))
    patrols = sample_patrol(model, sim_cfg.n_officers, rng)
    outcomes = _evaluate_detections(slice_, neighborhoods, patrols, bbox,
                                    sim_cfg, rng)
    return MonthRunResult(slice_.city, slice_.year, slice_.month, "detected",
                          outcomes, patrols, mode_collapsed,
                          _group_counts(outcomes))


def run_month_reported(slice_: MonthSlice,
                       neighborhoods: dict[str, Neighborhood],
                       sim_cfg: SimConfig,
                       bbox: BoundingBox) -> MonthRunResult:
    """Reported mode: citizen reports seed the detection pipeline."""
    if not slice_.incidents:
        raise ValueError("cannot run on an empty month slice")
    seed = derive_seed(sim_cfg.seed, slice_.city, slice_.year, slice_.month,
                       "reported")
    rng = np.random.default_rng(derive_seed(seed, "sim"))
    reported = {inc.id: bool(rng.random() < sim_cfg.reporting_prob)
                for inc in slice_.incidents}

    if sim_cfg.reported_mode_semantics == REPORT_IS_DETECTION:
        outcomes = []
        for inc in slice_.incidents:
            group = assign_race(inc, neighborhoods, rng)
            rep = reported[inc.id]
            outcomes.append(DetectionOutcome(
                incident_id=inc.id, neighborhood_id=inc.neighborhood_id or "",
                group=group, k_officers=0,
                detection_prob=sim_cfg.reporting_prob,
                detected=rep, reported=rep))
        return MonthRunResult(slice_.city, slice_.year, slice_.month,
                              "reported", outcomes, [], False,
                              _group_counts(outcomes))

    reported_locs = [inc.location for inc in slice_.incidents
                     if reported[inc.id]]
    if reported_locs:
        n_patrol = min(sim_cfg.n_officers, len(reported_locs))
        pick = rng.choice(len(reported_locs), size=n_patrol, replace=False)
        patrols = [reported_locs[i] for i in pick]
    else:
        patrols = []
    outcomes = _evaluate_detections(slice_, neighborhoods, patrols, bbox,
                                    sim_cfg, rng, reported)
    return MonthRunResult(slice_.city, slice_.year, slice_.month, "reported",
                          outcomes, patrols, False, _group_counts(outcomes))
