"""Linear probes and activation interventions over stored hidden states."""

from ._core import (
    ActivationStore,
    DatasetError,
    Error,
    InterventionError,
    ParseError,
    PlsError,
    PlsModel,
    ProbeError,
    StoreError,
    apply_intervention,
    effect_of_intervention,
    emit_intervention_spec,
    first_direction,
    fit_pls,
    gold_comparison_label,
    load_intervention_spec,
    load_model,
    parse_comparison_answer,
    parse_numeric_answer,
    predict,
    r2_score,
    random_direction,
    read_store,
    run_cli,
    save_model,
    transform,
    validate_store,
    write_store,
)

__all__ = [name for name in dir() if not name.startswith("_")]
