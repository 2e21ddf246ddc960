"""Bilateral trade record parsing, dual-report reconciliation and aggregation.

Records arrive as header-bearing delimited text (one row per reported
monthly flow).  A schema maps the canonical field names onto the source
columns, so Comtrade-style extracts can be read without renaming anything::

    {"reporter": "reporterISO", "partner": "partnerISO",
     "direction": "flowCode", "section": "section",
     "period": "period", "value": "primaryValue"}

The optional ``flow_class`` field may also be mapped; otherwise the class is
derived from the direction code (``RM``/``RX`` mark re-imports/re-exports).
"""
from __future__ import annotations

import csv
import io
import json
import logging
import math
import re
from collections import defaultdict
from dataclasses import dataclass, field
from typing import IO, Iterable, Mapping

logger = logging.getLogger(__name__)

REQUIRED_FIELDS = ("reporter", "partner", "direction", "section", "period", "value")
OPTIONAL_FIELDS = ("flow_class",)
GRANULARITIES = ("monthly", "quarterly", "annual")
FLOW_COLUMNS = ("origin", "destination", "section", "period", "value")

# Abbreviated names of the ten most traded HS sections, 2010-2022.
SECTION_NAMES = {
    16: "Mechanical & Electrical",
    5: "Mineral",
    17: "Transport",
    6: "Chemical",
    15: "Base Metals",
    7: "Plastics & Rubber",
    11: "Textile",
    14: "Precious Metals",
    18: "Instruments",
    4: "Beverages & Tobacco",
}

_DIRECTION_CODES = {
    "import": ("import", "normal"),
    "m": ("import", "normal"),
    "export": ("export", "normal"),
    "x": ("export", "normal"),
    "re-import": ("import", "re-import"),
    "reimport": ("import", "re-import"),
    "rm": ("import", "re-import"),
    "re-export": ("export", "re-export"),
    "reexport": ("export", "re-export"),
    "rx": ("export", "re-export"),
}
_FLOW_CLASSES = {"normal", "re-import", "re-export"}
_PERIOD_RE = re.compile(r"^(\d{4})-?(\d{2})$")
_QUARTER_RE = re.compile(r"^(\d{4})-Q([1-4])$")
_YEAR_RE = re.compile(r"^(\d{4})$")


class SchemaError(ValueError):
    """The column-mapping config does not fit the input."""


@dataclass(frozen=True)
class TradeRecord:
    reporter: str
    partner: str
    direction: str
    section: int
    period: str
    value: float
    flow_class: str = "normal"


@dataclass(frozen=True)
class RowError:
    line: int
    message: str


@dataclass
class ParseResult:
    records: list[TradeRecord]
    errors: list[RowError]


@dataclass
class FlowTable:
    """Aggregated flows keyed by ``(origin, destination, section, period)``."""

    granularity: str
    entries: dict[tuple[str, str, int, str], float] = field(default_factory=dict)

    def __post_init__(self):
        if self.granularity not in GRANULARITIES:
            raise ValueError(f"unknown granularity {self.granularity!r}")

    def total(self) -> float:
        return math.fsum(self.entries.values())

    def sections(self) -> list[int]:
        return sorted({k[2] for k in self.entries})

    def periods(self, section: int | None = None) -> list[str]:
        keys = {k[3] for k in self.entries if section is None or k[2] == section}
        return sorted(keys, key=period_sort_key)

    def select(self, section: int, period: str) -> dict[tuple[str, str], float]:
        return {
            (o, d): v
            for (o, d, s, p), v in self.entries.items()
            if s == section and p == period
        }

    def sorted_items(self):
        return sorted(
            self.entries.items(),
            key=lambda kv: (kv[0][0], kv[0][1], kv[0][2], period_sort_key(kv[0][3])),
        )


def load_schema(path) -> dict[str, str]:
    with open(path, encoding="utf-8") as fh:
        schema = json.load(fh)
    if not isinstance(schema, dict):
        raise SchemaError("schema file must hold a JSON object")
    return {str(k): str(v) for k, v in schema.items()}


def _normalize_period(raw: str) -> str:
    m = _PERIOD_RE.match(raw.strip())
    if not m or not 1 <= int(m.group(2)) <= 12:
        raise ValueError(f"unparseable period {raw!r}")
    return f"{m.group(1)}-{m.group(2)}"


def _parse_row(row: Mapping[str, str], schema: Mapping[str, str]) -> TradeRecord:
    get = lambda name: (row.get(schema[name]) or "").strip()  # noqa: E731

    reporter, partner = get("reporter"), get("partner")
    if not reporter or not partner:
        raise ValueError("missing country code")
    if reporter == partner:
        raise ValueError("reporter equals partner")

    code = get("direction").lower()
    if code not in _DIRECTION_CODES:
        raise ValueError(f"unknown direction {get('direction')!r}")
    direction, flow_class = _DIRECTION_CODES[code]
    if "flow_class" in schema:
        raw_class = get("flow_class").lower()
        if raw_class:
            if raw_class not in _FLOW_CLASSES:
                raise ValueError(f"unknown flow class {raw_class!r}")
            flow_class = raw_class

    try:
        section = int(get("section"))
    except ValueError:
        raise ValueError(f"unparseable section {get('section')!r}") from None
    if not 1 <= section <= 21:
        raise ValueError(f"section {section} outside 1..21")

    period = _normalize_period(get("period"))

    try:
        value = float(get("value"))
    except ValueError:
        raise ValueError(f"unparseable value {get('value')!r}") from None
    if not math.isfinite(value):
        raise ValueError("non-finite value")
    if value < 0:
        raise ValueError("negative value")

    return TradeRecord(reporter, partner, direction, section, period, value, flow_class)


def parse_records(stream: IO | str | bytes, schema: Mapping[str, str], delimiter: str = ",") -> ParseResult:
    """Parse delimited trade records.

    Malformed rows do not abort the parse; each one is reported in
    ``ParseResult.errors`` with its 1-based line number (the header is line 1).
    A schema that does not cover the required fields, or names a column the
    header lacks, raises :class:`SchemaError`.
    """
    missing = [f for f in REQUIRED_FIELDS if f not in schema]
    if missing:
        raise SchemaError(f"schema lacks required field(s): {', '.join(missing)}")

    if isinstance(stream, bytes):
        stream = stream.decode("utf-8")
    if isinstance(stream, str):
        stream = io.StringIO(stream)
    elif isinstance(stream, io.BufferedIOBase) or "b" in getattr(stream, "mode", ""):
        stream = io.TextIOWrapper(stream, encoding="utf-8", newline="")

    reader = csv.DictReader(stream, delimiter=delimiter)
    header = reader.fieldnames or []
    absent = [schema[f] for f in (*REQUIRED_FIELDS, *OPTIONAL_FIELDS) if f in schema and schema[f] not in header]
    if absent:
        raise SchemaError(f"input lacks mapped column(s): {', '.join(absent)}")

    records, errors = [], []
    for row in reader:
        try:
            records.append(_parse_row(row, schema))
        except ValueError as exc:
            errors.append(RowError(reader.line_num, str(exc)))
    return ParseResult(records, errors)


def filter_standard_flows(records: Iterable[TradeRecord]) -> list[TradeRecord]:
    return [r for r in records if r.flow_class == "normal"]


def granularity_of(label: str) -> str:
    if _YEAR_RE.match(label):
        return "annual"
    if _QUARTER_RE.match(label):
        return "quarterly"
    if _PERIOD_RE.match(label) and "-" in label:
        return "monthly"
    raise ValueError(f"unrecognized period label {label!r}")


def to_bucket(label: str, granularity: str) -> str:
    """Map a monthly/quarterly/annual label onto an equal or coarser bucket."""
    source = granularity_of(label)
    if GRANULARITIES.index(granularity) < GRANULARITIES.index(source):
        raise ValueError(f"cannot refine {source} period {label!r} to {granularity}")
    year = label[:4]
    if granularity == "annual":
        return year
    if granularity == "quarterly":
        if source == "quarterly":
            return label
        return f"{year}-Q{(int(label[5:7]) - 1) // 3 + 1}"
    return label


def period_sort_key(label: str) -> tuple[int, int]:
    kind = granularity_of(label)
    if kind == "annual":
        return int(label), 0
    if kind == "quarterly":
        return int(label[:4]), int(label[-1])
    return int(label[:4]), int(label[5:7])


def reconcile_dual_reports(records: Iterable[TradeRecord], section: int, bucket: str) -> FlowTable:
    """Resolve importer/exporter double reporting inside one (section, bucket).

    An import reported by R from P describes the flow P -> R; an export
    reported by R to P describes R -> P.  When both sides report the same
    directed flow, the reporter with the larger total reported value in this
    partition (imports plus exports) is trusted.  Ties go to the
    lexicographically smaller country code and are logged.
    """
    granularity = granularity_of(bucket)
    reports: dict[tuple[str, str, str], float] = defaultdict(float)
    volume: dict[str, float] = defaultdict(float)
    for r in records:
        if r.section != section or to_bucket(r.period, granularity) != bucket:
            raise ValueError(f"record {r} lies outside partition ({section}, {bucket})")
        reports[(r.reporter, r.partner, r.direction)] += r.value
        volume[r.reporter] += r.value

    by_exporter: dict[tuple[str, str], float] = {}
    by_importer: dict[tuple[str, str], float] = {}
    for (reporter, partner, direction), value in reports.items():
        if direction == "export":
            by_exporter[(reporter, partner)] = value
        else:
            by_importer[(partner, reporter)] = value

    table = FlowTable(granularity)
    for flow in sorted(set(by_exporter) | set(by_importer)):
        origin, destination = flow
        if flow not in by_importer:
            value = by_exporter[flow]
        elif flow not in by_exporter:
            value = by_importer[flow]
        else:
            vol_o, vol_d = volume[origin], volume[destination]
            if vol_o == vol_d:
                winner = min(origin, destination)
                logger.info(
                    "reconciliation tie in section %s %s for %s->%s (%.6g each); using %s",
                    section, bucket, origin, destination, vol_o, winner,
                )
            else:
                winner = origin if vol_o > vol_d else destination
            value = by_exporter[flow] if winner == origin else by_importer[flow]
        table.entries[(origin, destination, section, bucket)] = value
    return table


def aggregate(fragments: Iterable[FlowTable], granularity: str) -> FlowTable:
    """Sum fragments into one table at ``granularity`` (equal or coarser)."""
    fragments = list(fragments)
    kinds = {f.granularity for f in fragments}
    if len(kinds) > 1:
        raise ValueError(f"mixed granularities in input: {sorted(kinds)}")
    out = FlowTable(granularity)
    sums: dict[tuple[str, str, int, str], list[float]] = defaultdict(list)
    for frag in fragments:
        for (o, d, s, p), v in frag.entries.items():
            sums[(o, d, s, to_bucket(p, granularity))].append(v)
    out.entries = {k: math.fsum(v) for k, v in sums.items()}
    return out


def build_flow_table(records: Iterable[TradeRecord], granularity: str) -> FlowTable:
    """Exclude re-flows, bucket, reconcile per (section, bucket), merge."""
    partitions: dict[tuple[int, str], list[TradeRecord]] = defaultdict(list)
    for r in filter_standard_flows(records):
        partitions[(r.section, to_bucket(r.period, granularity))].append(r)
    fragments = [
        reconcile_dual_reports(part, section, bucket)
        for (section, bucket), part in sorted(partitions.items())
    ]
    return aggregate(fragments, granularity) if fragments else FlowTable(granularity)


def write_flow_table(table: FlowTable, fh: IO[str], delimiter: str = ",") -> None:
    writer = csv.writer(fh, delimiter=delimiter, lineterminator="\n")
    writer.writerow(FLOW_COLUMNS)
    for (o, d, s, p), v in table.sorted_items():
        writer.writerow([o, d, s, p, repr(float(v))])


def read_flow_table(fh: IO[str], delimiter: str = ",") -> FlowTable:
    reader = csv.DictReader(fh, delimiter=delimiter)
    entries = {}
    granularity = None
    for row in reader:
        key = (row["origin"], row["destination"], int(row["section"]), row["period"])
        granularity = granularity or granularity_of(key[3])
        entries[key] = float(row["value"])
    return FlowTable(granularity or "annual", entries)


def section_relevance(table: FlowTable) -> dict[int, float]:
    """Share (percent) of each section in the table's total flow value."""
    per_section: dict[int, list[float]] = defaultdict(list)
    for (_, _, s, _), v in table.entries.items():
        per_section[s].append(v)
    total = table.total()
    if total <= 0:
        raise ValueError("flow table carries no value")
    return {s: 100.0 * math.fsum(v) / total for s, v in sorted(per_section.items())}
