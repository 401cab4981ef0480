# report.py
# Deterministic clinician-facing report rendered from a shipped Jinja2 template

import logging
import re
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import List, Sequence, Tuple

import jinja2

from errors import ReportError
from rftg.discretize import RoiTriplet
from rftg.labels import HEMISPHERE_TITLES, load_labels

logger = logging.getLogger(__name__)

TEMPLATE_DIR = Path(__file__).resolve().parent.parent / "docs"
TEMPLATE_NAME = "report_template.j2"

ADULT_AGE = 18

_HEADER_RE = re.compile(r"^A (\d+)-year-old (boy|girl|man|woman) underwent resting-state fMRI\.$")
_CLAUSE_RE = re.compile(r"^- The (.+) shows (weak|moderate|strong) (activation|de-activation)\.$")


@lru_cache(maxsize=1)
def _environment() -> jinja2.Environment:
    return jinja2.Environment(
        loader=jinja2.FileSystemLoader(str(TEMPLATE_DIR)),
        trim_blocks=True,
        lstrip_blocks=True,
        keep_trailing_newline=True,
        undefined=jinja2.StrictUndefined,
        autoescape=False,
    )


def _noun(age_years: float, gender: str) -> str:
    if gender not in ("male", "female"):
        raise ReportError(f"unknown gender {gender!r}")
    if age_years < ADULT_AGE:
        return "boy" if gender == "male" else "girl"
    return "man" if gender == "male" else "woman"


def render_report(triplets: Sequence[RoiTriplet], age_years: float, gender: str) -> str:
    if len(triplets) != 116:
        raise ReportError(f"report needs 116 triplets, got {len(triplets)}")
    labels = load_labels()
    known = {lab.name: lab for lab in labels}

    groups = {code: [] for code in HEMISPHERE_TITLES}
    for t in sorted(triplets, key=lambda t: t.roi_index):
        label = known.get(t.roi_name)
        if label is None:
            raise ReportError(f"unknown ROI name {t.roi_name!r}")
        groups[label.hemisphere].append({
            "name": t.roi_name,
            "strength": t.strength,
            "kind": "activation" if t.polarity == "up" else "de-activation",
        })

    try:
        template = _environment().get_template(TEMPLATE_NAME)
        return template.render(
            age=int(age_years),
            noun=_noun(age_years, gender),
            groups=[{"title": HEMISPHERE_TITLES[code], "clauses": clauses}
                    for code, clauses in groups.items() if clauses],
        )
    except jinja2.TemplateError as e:
        raise ReportError(f"report template failed: {e}") from e


# ====== Structural parser ======

@dataclass
class ParsedReport:
    age: int
    noun: str
    clauses: List[Tuple[str, str, str]]  # (hemisphere title, ROI name, "strength kind")


def parse_report(text: str) -> ParsedReport:
    """Checks the header + grouped clause structure and returns its content"""
    lines = text.split("\n")
    if not lines or lines[-1] != "":
        raise ReportError("report must end with a newline")
    lines = lines[:-1]
    header = _HEADER_RE.match(lines[0]) if lines else None
    if not header:
        raise ReportError(f"malformed header: {lines[0] if lines else ''!r}")

    titles = {f"{title}:" for title in HEMISPHERE_TITLES.values()}
    section = None
    clauses = []
    expect_title = False
    for lineno, line in enumerate(lines[1:], start=2):
        if line == "":
            expect_title = True
            continue
        if expect_title:
            if line not in titles:
                raise ReportError(f"line {lineno}: expected a hemisphere heading, got {line!r}")
            section = line[:-1]
            expect_title = False
            continue
        m = _CLAUSE_RE.match(line)
        if not m or section is None:
            raise ReportError(f"line {lineno}: malformed clause {line!r}")
        clauses.append((section, m.group(1), f"{m.group(2)} {m.group(3)}"))
    return ParsedReport(age=int(header.group(1)), noun=header.group(2), clauses=clauses)
