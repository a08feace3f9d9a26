"""Scenario cue codes and pairwise similarity (Jaccard, simple matching).

Each scenario carries three blocks of binary indicators: five email tactic
cues, two email-format flags, and five teachable-moment page features.
Similarity is computed within one layer at a time:

* ``"cue"``       -- auth, urg, fin, cur, intr
* ``"education"`` -- ann_email, ann_land, report_pitch, emot_heur, scen_theme
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import pandas as pd

from .errors import ParseError, ValidationError
from .reporting import open_text

CUE_COLUMNS = ("auth", "urg", "fin", "cur", "intr")
FORMAT_COLUMNS = ("trans_template", "attach_lure")
EDUCATION_COLUMNS = ("ann_email", "ann_land", "report_pitch", "emot_heur", "scen_theme")
CODE_COLUMNS = ("scenario_id",) + CUE_COLUMNS + FORMAT_COLUMNS + EDUCATION_COLUMNS

# the four design moderators used in the interaction models (theme excluded)
DESIGN_COLUMNS = ("ann_email", "ann_land", "report_pitch", "emot_heur")

LAYERS = {"cue": CUE_COLUMNS, "education": EDUCATION_COLUMNS}
METRICS = ("jaccard", "smc")

# Jaccard of two empty indicator sets
EMPTY_UNION_JACCARD = 1.0


@dataclass(frozen=True)
class ScenarioCode:
    scenario_id: str
    cues: tuple[int, ...]
    formats: tuple[int, ...]
    education: tuple[int, ...]

    def __post_init__(self):
        for name, block, size in (
            ("cues", self.cues, 5),
            ("formats", self.formats, 2),
            ("education", self.education, 5),
        ):
            if len(block) != size:
                raise ValidationError(f"scenario {self.scenario_id}: {name} needs {size} indicators")
            if any(v not in (0, 1) for v in block):
                raise ValidationError(f"scenario {self.scenario_id}: {name} indicators must be 0/1")

    def layer(self, layer: str) -> tuple[int, ...]:
        if layer == "cue":
            return self.cues
        if layer == "education":
            return self.education
        raise ValueError(f"unknown layer {layer!r}")

    def as_dict(self) -> dict:
        values = self.cues + self.formats + self.education
        return {"scenario_id": self.scenario_id, **dict(zip(CODE_COLUMNS[1:], values))}

    @classmethod
    def from_mapping(cls, row: dict) -> "ScenarioCode":
        vals = [int(row[c]) for c in CODE_COLUMNS[1:]]
        return cls(str(row["scenario_id"]).strip(), tuple(vals[:5]), tuple(vals[5:7]), tuple(vals[7:]))


def _id_key(sid: str):
    return (0, int(sid), sid) if sid.isdigit() else (1, 0, sid)


def read_scenario_codes(path_or_buffer) -> dict[str, ScenarioCode]:
    """Read a scenario-code CSV into an ordered ``{scenario_id: ScenarioCode}`` map."""
    reader = csv.DictReader(open_text(path_or_buffer))
    missing = [c for c in CODE_COLUMNS if c not in (reader.fieldnames or [])]
    if missing:
        raise ParseError(f"scenario-code CSV missing columns {missing}")
    codes: dict[str, ScenarioCode] = {}
    for i, row in enumerate(reader, start=1):
        try:
            code = ScenarioCode.from_mapping(row)
        except (TypeError, ValueError) as exc:
            raise ParseError(str(exc), row=i) from exc
        except ValidationError as exc:
            raise ParseError(str(exc), row=i) from exc
        if code.scenario_id in codes:
            raise ValidationError(f"duplicate scenario code {code.scenario_id!r}")
        codes[code.scenario_id] = code
    return codes


def write_scenario_codes(codes: Iterable[ScenarioCode], path) -> None:
    frame = pd.DataFrame([c.as_dict() for c in codes], columns=list(CODE_COLUMNS))
    frame.to_csv(path, index=False, lineterminator="\n")


def published_codes() -> dict[str, ScenarioCode]:
    """The 17 coded scenarios deployed in the university campaigns."""
    ref = resources.files("clickpersist") / "data" / "scenario_codes.csv"
    with ref.open("r") as fh:
        return read_scenario_codes(fh)


def published_campaigns() -> pd.DataFrame:
    """Campaign order, scenario label and start date of the 17 campaigns."""
    ref = resources.files("clickpersist") / "data" / "campaigns.csv"
    with ref.open("r") as fh:
        frame = pd.read_csv(fh, dtype={"scenario_id": str})
    frame["start_date"] = pd.to_datetime(frame["start_date"])
    return frame


def _counts(a: Sequence[int], b: Sequence[int]) -> tuple[int, int, int]:
    shared = sum(1 for x, y in zip(a, b) if x and y)
    union = sum(1 for x, y in zip(a, b) if x or y)
    matches = sum(1 for x, y in zip(a, b) if x == y)
    return shared, union, matches


def jaccard_vectors(a: Sequence[int], b: Sequence[int]) -> float:
    shared, union, _ = _counts(a, b)
    if union == 0:
        return EMPTY_UNION_JACCARD
    return shared / union


def smc_vectors(a: Sequence[int], b: Sequence[int]) -> float:
    if len(a) != len(b) or not a:
        raise ValueError("indicator vectors must be nonempty and equally long")
    return _counts(a, b)[2] / len(a)


def jaccard(a: ScenarioCode, b: ScenarioCode, layer: str = "cue") -> float:
    """Shared present indicators over the union of present indicators.

    Two scenarios with no present indicator in the layer get
    ``EMPTY_UNION_JACCARD`` (1.0); see :func:`empty_union` to detect the case.
    """
    return jaccard_vectors(a.layer(layer), b.layer(layer))


def smc(a: ScenarioCode, b: ScenarioCode, layer: str = "cue") -> float:
    """Fraction of indicators that agree, joint absences included."""
    return smc_vectors(a.layer(layer), b.layer(layer))


def empty_union(a: ScenarioCode, b: ScenarioCode, layer: str = "cue") -> bool:
    return _counts(a.layer(layer), b.layer(layer))[1] == 0


@dataclass(frozen=True)
class SimilarityMatrix:
    scenario_ids: tuple[str, ...]
    values: np.ndarray
    metric: str
    layer: str

    @property
    def tag(self) -> str:
        return f"{self.metric}-{'cues' if self.layer == 'cue' else 'education'}"

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.values, index=list(self.scenario_ids), columns=list(self.scenario_ids))

    def get(self, s: str, t: str) -> float:
        i = self.scenario_ids.index(str(s))
        j = self.scenario_ids.index(str(t))
        return float(self.values[i, j])

    def to_csv(self, path_or_buffer=None, decimals: int = 2) -> str | None:
        """Serialize with ids as header row and first column, rounded to ``decimals``."""
        out = io.StringIO()
        out.write("scenario_id," + ",".join(self.scenario_ids) + "\n")
        for sid, row in zip(self.scenario_ids, self.values):
            out.write(sid + "," + ",".join(f"{v:.{decimals}f}" for v in row) + "\n")
        text = out.getvalue()
        if path_or_buffer is None:
            return text
        if isinstance(path_or_buffer, (str, Path)):
            Path(path_or_buffer).write_text(text)
        else:
            path_or_buffer.write(text)
        return None


def similarity_matrix(codes, metric: str = "jaccard", layer: str = "cue") -> SimilarityMatrix:
    if metric not in METRICS:
        raise ValueError(f"metric must be one of {METRICS}")
    if layer not in LAYERS:
        raise ValueError(f"layer must be one of {tuple(LAYERS)}")
    code_list = list(codes.values()) if isinstance(codes, dict) else list(codes)
    if len(code_list) < 2:
        raise ValidationError("similarity matrix needs at least two scenarios")
    fn = jaccard if metric == "jaccard" else smc
    n = len(code_list)
    values = np.empty((n, n))
    for i in range(n):
        for j in range(i, n):
            values[i, j] = values[j, i] = fn(code_list[i], code_list[j], layer)
    return SimilarityMatrix(tuple(c.scenario_id for c in code_list), values, metric, layer)


def top_pairs(matrix: SimilarityMatrix, k: int, codes=None) -> pd.DataFrame:
    """Rank off-diagonal pairs by similarity.

    Ties break on shared present count (descending), then on scenario ids.
    Shared/union counts need the codes; without them the tie-break falls
    straight through to ids.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    lookup = None
    if codes is not None:
        lookup = {c.scenario_id: c for c in (codes.values() if isinstance(codes, dict) else codes)}
    ids = matrix.scenario_ids
    rows = []
    for i in range(len(ids)):
        for j in range(i + 1, len(ids)):
            s, t = sorted((ids[i], ids[j]), key=_id_key)
            shared = union = -1
            if lookup is not None:
                shared, union, _ = _counts(lookup[s].layer(matrix.layer), lookup[t].layer(matrix.layer))
            rows.append((s, t, float(matrix.values[i, j]), shared, union))
    rows.sort(key=lambda r: (-round(r[2], 12), -r[3], _id_key(r[0]), _id_key(r[1])))
    frame = pd.DataFrame(rows[:k], columns=["scenario_s", "scenario_t", "similarity", "shared", "union"])
    if lookup is None:
        frame = frame.drop(columns=["shared", "union"])
    return frame


def pair_similarity(codes: dict[str, ScenarioCode], s: str, t: str, metric: str = "jaccard",
                    layer: str = "cue") -> float:
    fn = jaccard if metric == "jaccard" else smc
    return fn(codes[str(s)], codes[str(t)], layer)
