"""From an exposure panel to weighted transitions ready for estimation."""

from __future__ import annotations

from dataclasses import dataclass, field

import pandas as pd

from .panel import PanelDataset, build_transitions, exposure_histories
from .similarity import published_codes
from .weights import (NUMERATOR_HISTORY, TreatmentModels, WeightSet, attach_weights, fit_treatment_models,
                      stabilized_weights, trim_weights)


@dataclass(frozen=True)
class Prepared:
    transitions: pd.DataFrame = field(repr=False)
    histories: pd.DataFrame = field(repr=False)
    models: TreatmentModels = field(repr=False)
    weights: WeightSet = field(repr=False)


def prepare(panel: PanelDataset, codes=None, lower_pct: float = 1.0, upper_pct: float = 99.0,
            numerator_history=NUMERATOR_HISTORY, consecutive_only: bool = False) -> Prepared:
    """Build transitions, fit the treatment models and attach trimmed weights.

    ``codes`` maps scenario ids to :class:`~clickpersist.similarity.ScenarioCode`
    and defaults to the bundled published codes.
    """
    codes = published_codes() if codes is None else codes
    hist = exposure_histories(panel)
    models = fit_treatment_models(hist, numerator_history)
    ws = trim_weights(stabilized_weights(hist, models), lower_pct, upper_pct)
    tr = build_transitions(panel, codes, consecutive_only=consecutive_only)
    return Prepared(attach_weights(tr, ws), hist, models, ws)
