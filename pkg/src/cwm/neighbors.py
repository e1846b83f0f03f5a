"""Great-circle distances and per-PFT nearest-record search."""

import math
from dataclasses import dataclass
from typing import Dict, List, Tuple, Union

import numpy as np

from logging_utils import get_logger
from trait_table import PftClass, TraitTable, species_to_pft, trait_matrix

logger = get_logger("traitscale.cwm")

EARTH_RADIUS_KM = 6371.0088
DEFAULT_MAX_KM = 100.0
DEFAULT_K = 10

ArrayLike = Union[float, np.ndarray]


def haversine_km(lat1: ArrayLike, lon1: ArrayLike, lat2: ArrayLike, lon2: ArrayLike) -> ArrayLike:
    """Great-circle distance in km between points given in degrees; broadcasts."""
    phi1, phi2 = np.radians(lat1), np.radians(lat2)
    dphi = phi2 - phi1
    dlam = np.radians(np.asarray(lon2, dtype=float) - np.asarray(lon1, dtype=float))
    a = np.sin(dphi / 2) ** 2 + np.cos(phi1) * np.cos(phi2) * np.sin(dlam / 2) ** 2
    d = 2.0 * EARTH_RADIUS_KM * np.arcsin(np.sqrt(np.clip(a, 0.0, 1.0)))
    return float(d) if np.ndim(d) == 0 else d


def bounding_box(lat: float, lon: float, radius_km: float) -> Tuple[float, float, float]:
    """(min_lat, max_lat, half-width in longitude degrees) enclosing a radius.

    The longitude half-width is 180 when the circle reaches a pole.
    """
    angular = radius_km / EARTH_RADIUS_KM
    dlat = math.degrees(angular)
    if angular >= math.pi / 2 or abs(lat) + dlat >= 90.0:
        return lat - dlat, lat + dlat, 180.0
    dlon = math.degrees(math.asin(min(1.0, math.sin(angular) / math.cos(math.radians(lat)))))
    return lat - dlat, lat + dlat, dlon


@dataclass(frozen=True)
class Neighbor:
    record_id: str
    distance_km: float
    traits: Tuple[float, ...]


@dataclass(frozen=True, eq=False)
class _PftRecords:
    ids: np.ndarray
    lat: np.ndarray
    lon: np.ndarray
    traits: np.ndarray


class RecordIndex:
    """Georeferenced, fully-filled records grouped by PFT and sorted by record_id.

    Records without coordinates, without a determinable PFT or with a missing
    trait are left out.
    """

    def __init__(self, table: TraitTable):
        values = trait_matrix(table)
        groups: Dict[PftClass, List[int]] = {}
        skipped = 0
        for i, record in enumerate(table.records):
            pft = species_to_pft(record)
            if not record.georeferenced or pft is None or not np.isfinite(values[i]).all():
                skipped += 1
                continue
            groups.setdefault(pft, []).append(i)
        self._groups: Dict[PftClass, _PftRecords] = {}
        for pft, rows in groups.items():
            rows = sorted(rows, key=lambda i: table.records[i].record_id)
            self._groups[pft] = _PftRecords(
                ids=np.array([table.records[i].record_id for i in rows]),
                lat=np.array([table.records[i].latitude for i in rows], dtype=float),
                lon=np.array([table.records[i].longitude for i in rows], dtype=float),
                traits=values[rows])
        if skipped:
            logger.info(f"Record index leaves out {skipped} record(s) lacking coordinates, "
                        f"PFT or complete traits")
        logger.debug(f"Record index: { {p.name: len(g.ids) for p, g in self._groups.items()} }")

    def __len__(self) -> int:
        return sum(len(g.ids) for g in self._groups.values())

    def count(self, pft: PftClass) -> int:
        group = self._groups.get(pft)
        return 0 if group is None else len(group.ids)

    def neighbors(self, lat: float, lon: float, pft: PftClass,
                  max_km: float = DEFAULT_MAX_KM, k: int = DEFAULT_K) -> List[Neighbor]:
        group = self._groups.get(PftClass(pft))
        if group is None:
            return []
        min_lat, max_lat, dlon = bounding_box(lat, lon, max_km)
        wrapped = np.abs((group.lon - lon + 180.0) % 360.0 - 180.0)
        candidates = np.flatnonzero((group.lat >= min_lat - 1e-9) & (group.lat <= max_lat + 1e-9)
                                    & (wrapped <= dlon + 1e-9))
        if candidates.size == 0:
            return []
        distances = np.atleast_1d(haversine_km(lat, lon, group.lat[candidates],
                                               group.lon[candidates]))
        inside = distances <= max_km
        candidates, distances = candidates[inside], distances[inside]
        # candidates are in record_id order, so a stable sort breaks distance ties by id
        order = np.argsort(distances, kind="stable")[:k]
        return [Neighbor(str(group.ids[i]), float(distances[j]), tuple(group.traits[i].tolist()))
                for j, i in zip(order, candidates[order])]


def neighbor_select(center: Tuple[float, float], index: RecordIndex, pft: PftClass,
                    max_km: float = DEFAULT_MAX_KM, k: int = DEFAULT_K) -> List[Neighbor]:
    """Up to ``k`` records of ``pft`` within ``max_km`` of ``center`` (lat, lon), nearest first.

    Ties in distance at the cut are resolved by ascending record_id.
    """
    if max_km <= 0:
        raise ValueError(f"max_km must be positive, got {max_km}")
    if k < 1:
        raise ValueError(f"k must be at least 1, got {k}")
    return index.neighbors(center[0], center[1], pft, max_km, k)


__all__ = ["DEFAULT_K", "DEFAULT_MAX_KM", "EARTH_RADIUS_KM", "Neighbor", "RecordIndex",
           "bounding_box", "haversine_km", "neighbor_select"]
