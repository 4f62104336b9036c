"""Decision and verification reason codes, in their canonical report order."""

import enum


class Reason(str, enum.Enum):
    OK = "OK"
    ISSUER_SIG = "ISSUER_SIG"
    HOLDER_SIG = "HOLDER_SIG"
    INTEGRITY = "INTEGRITY"
    REVOKED = "REVOKED"
    EXPIRED = "EXPIRED"
    NOT_YET_VALID = "NOT_YET_VALID"
    VEHICLE_NOT_ALLOWED = "VEHICLE_NOT_ALLOWED"
    LOCATION_NOT_ALLOWED = "LOCATION_NOT_ALLOWED"
    OUTSIDE_TIME_WINDOW = "OUTSIDE_TIME_WINDOW"
    CLAIM_MISMATCH = "CLAIM_MISMATCH"
    STALE_LEDGER_VIEW = "STALE_LEDGER_VIEW"


ORDER = {r: i for i, r in enumerate(Reason)}


def ordered(reasons) -> list[Reason]:
    return sorted(set(Reason(r) for r in reasons), key=ORDER.__getitem__)
