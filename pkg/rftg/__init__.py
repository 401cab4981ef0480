from rftg.discretize import (
    STRENGTH_ORDER,
    AgeStats,
    DemographicVector,
    RoiTriplet,
    Thresholds,
    demographic_vector,
    discretize,
    strength_codes,
)
from rftg.film import FilmLayer, film_modulate
from rftg.labels import RoiLabel, load_labels, names_by_index
from rftg.report import ParsedReport, parse_report, render_report
from rftg.tokens import RoiTokenSeq, age_bucket, parse_tokens, serialize_tokens, vocabulary
