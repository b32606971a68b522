"""Parsers turning raw check-in files into a canonical, sorted record set.

Two raw layouts are supported:

* foursquare: 8 tab-separated fields per line
  ``user_id  venue_id  category_id  category_name  lat  lon  tz_offset_min  utc_time``
  where ``utc_time`` looks like ``Tue Apr 03 18:00:06 +0000 2012``.
* gowalla: 5 tab-separated fields per line
  ``user_id  iso_time  lat  lon  location_id``
  where ``iso_time`` looks like ``2010-10-19T23:55:27Z``. No categories; the
  timezone offset is a per-run constant (default 0).

Malformed lines are never silently dropped: every non-blank line becomes
either a record or an entry in the rejects tally.
"""

from __future__ import annotations

import calendar
from dataclasses import dataclass, field

_MONTHS = {
    "Jan": 1, "Feb": 2, "Mar": 3, "Apr": 4, "May": 5, "Jun": 6,
    "Jul": 7, "Aug": 8, "Sep": 9, "Oct": 10, "Nov": 11, "Dec": 12,
}


class IngestError(Exception):
    pass


@dataclass(frozen=True)
class RawRecord:
    user_key: str
    location_key: str
    category_name: str | None
    lat: float
    lon: float
    utc_seconds: int
    tz_offset_minutes: int

    def local_seconds(self) -> int:
        return self.utc_seconds + 60 * self.tz_offset_minutes


@dataclass(frozen=True)
class LocationInfo:
    """First-seen coordinates and category for one location key."""

    lat: float
    lon: float
    category_name: str | None


@dataclass
class RecordSet:
    records: list[RawRecord]
    source_tag: str  # "foursquare" | "gowalla"
    locations: dict[str, LocationInfo] = field(default_factory=dict)
    rejects: list[tuple[int, str]] = field(default_factory=list)  # (line number, reason)
    location_conflicts: int = 0  # later lines disagreeing with first-seen location data


def _parse_foursquare_time(text: str) -> int:
    """Epoch seconds from e.g. ``Tue Apr 03 18:00:06 +0000 2012``.

    Hand-rolled (month map + timegm) so parsing never depends on locale.
    """
    parts = text.split()
    if len(parts) != 6:
        raise ValueError(f"bad timestamp {text!r}")
    _dow, mon, day, hms, zone, year = parts
    if mon not in _MONTHS:
        raise ValueError(f"bad month in {text!r}")
    hh, mm, ss = hms.split(":")
    if len(zone) != 5 or zone[0] not in "+-":
        raise ValueError(f"bad zone in {text!r}")
    zone_min = int(zone[1:3]) * 60 + int(zone[3:5])
    if zone[0] == "-":
        zone_min = -zone_min
    stamp = calendar.timegm(
        (int(year), _MONTHS[mon], int(day), int(hh), int(mm), int(ss), 0, 0, 0)
    )
    return stamp - zone_min * 60


def _parse_iso_utc(text: str) -> int:
    """Epoch seconds from ``YYYY-MM-DDTHH:MM:SSZ``."""
    if len(text) != 20 or text[10] != "T" or text[19] != "Z":
        raise ValueError(f"bad timestamp {text!r}")
    date, clock = text[:10], text[11:19]
    y, mo, d = date.split("-")
    hh, mm, ss = clock.split(":")
    return calendar.timegm((int(y), int(mo), int(d), int(hh), int(mm), int(ss), 0, 0, 0))


def _check_ranges(lat: float, lon: float, utc_seconds: int) -> None:
    if not (-90.0 <= lat <= 90.0):
        raise ValueError(f"latitude {lat} outside [-90, 90]")
    if not (-180.0 <= lon <= 180.0):
        raise ValueError(f"longitude {lon} outside [-180, 180]")
    if utc_seconds <= 0:
        raise ValueError(f"non-positive epoch time {utc_seconds}")


def _finish(rs: RecordSet) -> RecordSet:
    rs.records.sort(key=lambda r: (r.user_key, r.utc_seconds))
    for r in rs.records:
        info = rs.locations.get(r.location_key)
        if info is None:
            rs.locations[r.location_key] = LocationInfo(r.lat, r.lon, r.category_name)
        elif (info.lat, info.lon, info.category_name) != (r.lat, r.lon, r.category_name):
            rs.location_conflicts += 1
    return rs


def _iter_lines(path):
    try:
        fh = open(path, "r", encoding="utf-8", errors="replace")
    except OSError as e:
        raise IngestError(f"cannot read {path}: {e}") from e
    with fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\r\n")
            if line.strip():
                yield lineno, line


def parse_foursquare(path) -> RecordSet:
    rs = RecordSet(records=[], source_tag="foursquare")
    for lineno, line in _iter_lines(path):
        fields = line.split("\t")
        try:
            if len(fields) != 8:
                raise ValueError(f"expected 8 fields, got {len(fields)}")
            user, venue, _cat_id, cat_name, lat_s, lon_s, offset_s, time_s = fields
            lat, lon = float(lat_s), float(lon_s)
            utc = _parse_foursquare_time(time_s)
            _check_ranges(lat, lon, utc)
            rs.records.append(
                RawRecord(user, venue, cat_name, lat, lon, utc, int(offset_s))
            )
        except ValueError as e:
            rs.rejects.append((lineno, str(e)))
    return _finish(rs)


def parse_gowalla(path, tz_offset_minutes: int = 0) -> RecordSet:
    rs = RecordSet(records=[], source_tag="gowalla")
    for lineno, line in _iter_lines(path):
        fields = line.split("\t")
        try:
            if len(fields) != 5:
                raise ValueError(f"expected 5 fields, got {len(fields)}")
            user, time_s, lat_s, lon_s, loc = fields
            lat, lon = float(lat_s), float(lon_s)
            utc = _parse_iso_utc(time_s)
            _check_ranges(lat, lon, utc)
            rs.records.append(
                RawRecord(user, loc, None, lat, lon, utc, tz_offset_minutes)
            )
        except ValueError as e:
            rs.rejects.append((lineno, str(e)))
    return _finish(rs)


def category_ids(rs: RecordSet) -> dict[str, int]:
    """Dense ids for distinct category names, lexicographically sorted.

    Reproducible regardless of file order; sources without categories get {}.
    """
    names = sorted({r.category_name for r in rs.records if r.category_name is not None})
    return {name: i for i, name in enumerate(names)}


def write_canonical(rs: RecordSet, path, header_lines=()) -> None:
    """One record per line: user, location, category id (-1 if absent), lat,
    lon, utc seconds, tz offset minutes; tab-separated. Lines starting with
    ``#`` are headers; readers skip them."""
    cats = category_ids(rs)
    with open(path, "w", encoding="utf-8") as fh:
        for h in header_lines:
            fh.write(f"#{h}\n")
        for r in rs.records:
            cid = cats[r.category_name] if r.category_name is not None else -1
            fh.write(
                f"{r.user_key}\t{r.location_key}\t{cid}\t{r.lat!r}\t{r.lon!r}"
                f"\t{r.utc_seconds}\t{r.tz_offset_minutes}\n"
            )
