"""Core sharing and reconstruction.

Every non-key, non-null value d becomes n-t+2 real shares. A polynomial f
of degree t-1 is interpolated through exactly t points:

    (HF1(K_d), d)              the data itself
    (HF1(K_s), HE1(d))         its inner signature
    (HF1(ID_i), HE2(pk, ID_i)) for each of the t-2 CSPs left out of the
                               storage group, their "pseudo shares"

and the stored shares are f evaluated at the storage-group abscissas. Any
t CSPs can reconstruct: members of the storage group supply stored shares,
the others' pseudo shares are recomputed from the plaintext key. The
reconstruction is accepted only when f(HF1(K_s)) equals HE1(f(HF1(K_d))),
which any single corrupted share in the group breaks (up to a 1/p fluke).

Storage groups always have n-t+2 members and reconstruction groups t, so
at least two reconstruction members hold stored shares of every record.
"""

from __future__ import annotations

import hashlib
import hmac
from dataclasses import dataclass
from datetime import date as _date
from decimal import Decimal
from fractions import Fraction
from typing import Iterable, Mapping, Sequence

from .errors import (
    InnerSignatureMismatch,
    MissingShare,
    NotEnoughAliveCsps,
    OutOfRange,
    SchemaMismatch,
)
from .field import Polynomial, lagrange_interpolate
from .keyed import KeyMaterial

_EPOCH = _date(1970, 1, 1)

DEFAULT_BIAS = 1 << 40  # keeps negatives and small reals nonnegative pre-share

PLAIN_KINDS = ("key", "fk")
DATA_KINDS = ("int", "real", "string", "date", "bool")


class ReconstructionCounter:
    """Counts value reconstructions; tests assert on the homomorphic paths."""

    def __init__(self):
        self.count = 0

    def bump(self):
        self.count += 1

    def reset(self):
        self.count = 0


RECONSTRUCTIONS = ReconstructionCounter()


@dataclass(frozen=True)
class Column:
    name: str
    kind: str                 # key | fk | int | real | string | date | bool
    scale: int = 0            # decimal digits kept for reals
    fk_table: str | None = None


@dataclass(frozen=True)
class Schema:
    table: str
    columns: tuple[Column, ...]

    def __post_init__(self):
        names = [c.name for c in self.columns]
        if len(set(names)) != len(names):
            raise SchemaMismatch(f"duplicate column in {self.table}: {names}")
        if not self.columns or self.columns[0].kind != "key":
            raise SchemaMismatch(f"first column of {self.table} must be the key")

    @property
    def key(self) -> str:
        return self.columns[0].name

    def column(self, name: str) -> Column:
        for c in self.columns:
            if c.name == name:
                return c
        raise SchemaMismatch(f"no column {name} in {self.table}")

    def data_columns(self) -> tuple[Column, ...]:
        return tuple(c for c in self.columns if c.kind in DATA_KINDS)

    def plain_columns(self) -> tuple[Column, ...]:
        return tuple(c for c in self.columns if c.kind in PLAIN_KINDS)


@dataclass(frozen=True)
class EncodedValue:
    kind: str
    chunks: tuple[int, ...]   # empty for null
    scale: int = 0

    @property
    def is_null(self) -> bool:
        return self.kind == "null"


def encode(value, kind: str, *, scale: int = 0, bias: int = 0, p: int) -> EncodedValue:
    """Turn a typed plaintext value into field-element chunks.

    Integers, reals (scaled by 10^scale), dates (epoch days) and booleans
    land in one chunk, offset by the bias so negatives stay in [0, p).
    Strings become one chunk per UTF-8 byte. None encodes to zero chunks
    and is never shared.
    """
    if value is None:
        return EncodedValue("null", (), scale)
    if kind == "int":
        chunk = int(value) + bias
    elif kind == "bool":
        chunk = int(bool(value)) + bias
    elif kind == "date":
        chunk = (value - _EPOCH).days + bias
    elif kind == "real":
        if isinstance(value, float):
            value = Decimal(str(value))
        chunk = int(round(Fraction(value) * 10**scale)) + bias
    elif kind == "string":
        raw = value.encode("utf-8")
        for b in raw:
            if b >= p:
                raise OutOfRange(f"byte {b} of {value!r} >= p={p}")
        return EncodedValue("string", tuple(raw), scale)
    else:
        raise SchemaMismatch(f"cannot encode kind {kind!r}")
    if not 0 <= chunk < p:
        raise OutOfRange(f"{kind} value {value!r} encodes to {chunk}, outside [0, {p})")
    return EncodedValue(kind, (chunk,), scale)


def decode(chunks: Sequence[int], kind: str, *, scale: int = 0, bias: int = 0):
    """Inverse of encode for values stored exactly (no modular wrap)."""
    if not chunks:
        return None
    if kind == "string":
        return bytes(chunks).decode("utf-8")
    raw = chunks[0] - bias
    if kind == "int":
        return raw
    if kind == "bool":
        return bool(raw)
    if kind == "date":
        return _date.fromordinal(_EPOCH.toordinal() + raw)
    if kind == "real":
        return Fraction(raw, 10**scale)
    raise SchemaMismatch(f"cannot decode kind {kind!r}")


@dataclass(frozen=True)
class StorageGroup:
    sg: frozenset[int]
    ug: frozenset[int]
    n: int

    @property
    def bitmap(self) -> str:
        return "".join("1" if i in self.sg else "0" for i in range(1, self.n + 1))


def group_from_bitmap(bitmap: str) -> StorageGroup:
    sg = frozenset(i for i, bit in enumerate(bitmap, start=1) if bit == "1")
    ug = frozenset(i for i, bit in enumerate(bitmap, start=1) if bit == "0")
    return StorageGroup(sg, ug, len(bitmap))


def select_storage_group(
    pk: int,
    weights: Sequence[float],
    alive: Iterable[int],
    km: KeyMaterial,
) -> StorageGroup:
    """Pick the n-t+2 CSPs that will store this record's shares.

    Weighted sampling without replacement, keyed by a hash of the primary
    key, so the choice is reproducible from the config alone. Failed CSPs
    are never selected; zero-weight CSPs are excluded unless too few
    weighted CSPs are alive, in which case they fill in by ascending index.
    """
    k = km.n - km.t + 2
    alive = set(alive)
    if len(alive) < k:
        raise NotEnoughAliveCsps(f"need {k} alive CSPs, have {len(alive)}")

    def u01(i: int) -> float:
        digest = hmac.new(km.seed, f"place|{pk}|{i}".encode(), hashlib.sha256).digest()
        return (int.from_bytes(digest[:8], "big") + 0.5) / (1 << 64)

    weighted = [i for i in sorted(alive) if weights[i - 1] > 0]
    # Efraimidis-Spirakis keys: top-k of u^(1/w) is a weighted draw
    scored = sorted(weighted, key=lambda i: (-(u01(i) ** (1.0 / weights[i - 1])), i))
    chosen = scored[:k]
    if len(chosen) < k:
        for i in sorted(alive):
            if i not in chosen:
                chosen.append(i)
            if len(chosen) == k:
                break
    sg = frozenset(chosen)
    return StorageGroup(sg, frozenset(range(1, km.n + 1)) - sg, km.n)


def share_value(d: int, pk: int, group: StorageGroup, km: KeyMaterial) -> dict[int, int]:
    """Produce the stored shares of one field element."""
    p = km.p
    points = [(km.x_kd, d % p), (km.x_ks, km.he1(d))]
    for i in sorted(group.ug):
        points.append((km.x_id(i), km.he2(pk % p, km.id_of(i))))
    f = lagrange_interpolate(points, p)
    return {i: f(km.x_id(i)) for i in sorted(group.sg)}


def _interpolate_group(
    pk: int,
    sg: frozenset[int] | set[int],
    fetched: Mapping[int, int],
    rg: Iterable[int],
    km: KeyMaterial,
) -> Polynomial:
    rg = sorted(set(rg))
    if len(rg) != km.t:
        raise MissingShare(f"reconstruction group must have t={km.t} members, got {rg}")
    points = []
    for i in rg:
        if i in sg:
            if i not in fetched:
                raise MissingShare(f"CSP {i} is in the storage group but sent no share")
            y = fetched[i] % km.p
        else:
            y = km.he2(pk % km.p, km.id_of(i))
        points.append((km.x_id(i), y))
    return lagrange_interpolate(points, km.p)


def reconstruct_value(
    pk: int,
    sg: frozenset[int] | set[int],
    fetched: Mapping[int, int],
    rg: Iterable[int],
    km: KeyMaterial,
) -> int:
    """Rebuild d from t shares (stored or pseudo) and verify its inner signature.

    Raises InnerSignatureMismatch when the interpolated signature point
    disagrees with HE1 of the interpolated data point; the caller is
    expected to retry with a different reconstruction group.
    """
    RECONSTRUCTIONS.bump()
    f = _interpolate_group(pk, sg, fetched, rg, km)
    d = f(km.x_kd)
    s = f(km.x_ks)
    if s != km.he1(d):
        raise InnerSignatureMismatch(
            f"pk {pk}: signature point {s} != HE1({d})"
        )
    return d


def recover_share(
    pk: int,
    sg: frozenset[int] | set[int],
    fetched: Mapping[int, int],
    rg: Iterable[int],
    target: int,
    km: KeyMaterial,
) -> int:
    """Re-evaluate the record polynomial at a lost CSP's abscissa.

    The polynomial is rebuilt from t intact shares, the inner signature is
    checked, and the share the target CSP should hold falls out of f.
    """
    f = _interpolate_group(pk, sg, fetched, rg, km)
    if f(km.x_ks) != km.he1(f(km.x_kd)):
        raise InnerSignatureMismatch(f"pk {pk}: refusing to recover from bad shares")
    return f(km.x_id(target))


@dataclass(frozen=True)
class ShareBundle:
    pk: int
    group: StorageGroup
    plain: dict[str, int]                                 # fk columns, stored as-is
    shares: dict[str, dict[int, tuple[int, ...]] | None]  # attr -> csp -> chunks, None=null

    @property
    def bitmap(self) -> str:
        return self.group.bitmap


def share_record(
    record: Mapping[str, object],
    schema: Schema,
    weights: Sequence[float],
    alive: Iterable[int],
    km: KeyMaterial,
    bias: int = DEFAULT_BIAS,
    group: StorageGroup | None = None,
) -> ShareBundle:
    """Share one record: every data column chunk goes through share_value
    with the same storage group; keys stay plaintext; nulls are not shared.

    Pass group to pin the storage group (updates keep a record where it
    already lives; recovery re-shares in place).
    """
    unknown = set(record) - {c.name for c in schema.columns}
    if unknown:
        raise SchemaMismatch(f"unknown columns {sorted(unknown)} for {schema.table}")
    pk = int(record[schema.key])  # type: ignore[arg-type]
    if group is None:
        group = select_storage_group(pk, weights, alive, km)
    plain = {c.name: int(record[c.name]) for c in schema.plain_columns() if c.name != schema.key}  # type: ignore[arg-type]
    shares: dict[str, dict[int, tuple[int, ...]] | None] = {}
    for col in schema.data_columns():
        enc = encode(record.get(col.name), col.kind, scale=col.scale, bias=bias, p=km.p)
        if enc.is_null:
            shares[col.name] = None
            continue
        per_csp: dict[int, list[int]] = {i: [] for i in sorted(group.sg)}
        for chunk in enc.chunks:
            for i, share in share_value(chunk, pk, group, km).items():
                per_csp[i].append(share)
        shares[col.name] = {i: tuple(v) for i, v in per_csp.items()}
    return ShareBundle(pk=pk, group=group, plain=plain, shares=shares)
