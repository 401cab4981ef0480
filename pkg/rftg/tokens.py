# tokens.py
# Token stream: [AGE:<bucket>] [SEX:<m|f>] then one (ROI_<k> <strength> <polarity>) token per ROI

import logging
import re
from dataclasses import dataclass
from typing import List, Sequence, Tuple

from errors import TokenError
from rftg.discretize import STRENGTH_ORDER, DemographicVector, RoiTriplet
from rftg.labels import load_labels

logger = logging.getLogger(__name__)

AGE_BUCKET_YEARS = 2
MAX_AGE = 120

_AGE_RE = re.compile(r"^\[AGE:(\d+)\]$")
_SEX_RE = re.compile(r"^\[SEX:([mf])\]$")
_ROI_RE = re.compile(r"^\(ROI_(\d+) (weak|moderate|strong) (up|down)\)$")


@dataclass(frozen=True)
class RoiTokenSeq:
    age_bucket: int
    sex: str  # "m" or "f"
    triplets: Tuple[RoiTriplet, ...]

    @property
    def tokens(self) -> List[str]:
        return [f"[AGE:{self.age_bucket}]", f"[SEX:{self.sex}]"] + [roi_token(t) for t in self.triplets]

    def __len__(self) -> int:
        return 2 + len(self.triplets)


def age_bucket(age_years: float) -> int:
    if not 0 < age_years <= MAX_AGE:
        raise TokenError(f"age {age_years} outside (0, {MAX_AGE}]")
    return AGE_BUCKET_YEARS * int(age_years // AGE_BUCKET_YEARS)


def roi_token(t: RoiTriplet) -> str:
    return f"(ROI_{t.roi_index} {t.strength} {t.polarity})"


def serialize_tokens(triplets: Sequence[RoiTriplet], demo: DemographicVector) -> RoiTokenSeq:
    if len(triplets) != 116:
        raise TokenError(f"expected 116 triplets, got {len(triplets)}")
    out_of_order = [i for i, t in enumerate(triplets) if t.roi_index != i]
    if out_of_order:
        raise TokenError(f"triplets must be in ascending ROI order; position {out_of_order[0]} "
                         f"holds ROI {triplets[out_of_order[0]].roi_index}")
    if demo.age_years is None:
        raise TokenError("demographic vector carries no raw age for the age bucket")
    return RoiTokenSeq(age_bucket=age_bucket(demo.age_years), sex="m" if demo.gender_male else "f",
                       triplets=tuple(triplets))


def parse_tokens(tokens: Sequence[str]) -> RoiTokenSeq:
    """Inverse of RoiTokenSeq.tokens"""
    if len(tokens) != 118:
        raise TokenError(f"expected 118 tokens, got {len(tokens)}")
    age = _AGE_RE.match(tokens[0])
    sex = _SEX_RE.match(tokens[1])
    if not age or not sex:
        raise TokenError(f"malformed demographic prefix: {tokens[:2]}")
    labels = load_labels()
    triplets = []
    for pos, token in enumerate(tokens[2:]):
        m = _ROI_RE.match(token)
        if not m or int(m.group(1)) != pos:
            raise TokenError(f"malformed or out-of-order ROI token at position {pos}: {token!r}")
        triplets.append(RoiTriplet(roi_index=pos, roi_name=labels[pos].name,
                                   strength=m.group(2), polarity=m.group(3)))
    return RoiTokenSeq(age_bucket=int(age.group(1)), sex=sex.group(1), triplets=tuple(triplets))


def vocabulary() -> List[str]:
    """Every token serialize_tokens can emit, in a fixed order"""
    vocab = [f"[AGE:{a}]" for a in range(0, MAX_AGE + 1, AGE_BUCKET_YEARS)]
    vocab += ["[SEX:m]", "[SEX:f]"]
    vocab += [f"(ROI_{k} {s} {p})" for k in range(116) for s in STRENGTH_ORDER for p in ("up", "down")]
    return vocab
