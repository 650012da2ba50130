"""Representative UTC offsets per country, shared by the simulator and the
analytics local-hour conversion so both sides agree on what "evening" means.

One offset per country is a deliberate simplification; the large
crowd-market countries are effectively single-zone for this purpose.
"""
from __future__ import annotations

COUNTRY_UTC_OFFSET: dict[str, float] = {
    "VE": -4.0,
    "EG": 2.0,
    "UA": 2.0,
    "IN": 5.5,
    "PH": 8.0,
    "BR": -3.0,
    "US": -6.0,
    "ID": 7.0,
    "PK": 5.0,
    "NG": 1.0,
    "TR": 3.0,
    "RS": 1.0,
    "CO": -5.0,
    "MX": -6.0,
    "KE": 3.0,
    "MA": 1.0,
}


def local_hour(utc_hour_fraction: float, country: str) -> float:
    """Map a UTC hour-of-day (0..24) to the country's local hour-of-day."""
    offset = COUNTRY_UTC_OFFSET.get(country, 0.0)
    return (utc_hour_fraction + offset) % 24.0
