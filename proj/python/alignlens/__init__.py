"""Weight-level comparison of pre-trained and instruction-tuned language models."""

import json

from ._alignlens import (
    Bundle,
    DimensionError,
    Error,
    FormatError,
    NumericError,
    RangeError,
    TransportError,
    ValidationError,
    __version__,
    density,
    ffn_pca,
    group_compare,
    importance_matrix,
    intersection_rate,
    load_bundle,
    make_fixture,
    next_token_prob,
    normalize_map,
    relation_score,
    segment_profile,
)
from . import _alignlens


def density_report(bundle_a, bundle_b, instances, **params):
    """Density sections as a dict; see DiffReport JSON."""
    return json.loads(_alignlens.density_report_json(bundle_a, bundle_b, str(instances), **params))


def attention_diff(bundle_a, bundle_b, glove, instruction_verbs, general_verbs, **params):
    return json.loads(
        _alignlens.attention_diff_json(
            bundle_a, bundle_b, str(glove), list(instruction_verbs), list(general_verbs), **params
        )
    )


def ffn_diff(bundle_a, bundle_b, annotations_a, annotations_b, **params):
    return json.loads(
        _alignlens.ffn_diff_json(bundle_a, bundle_b, str(annotations_a), str(annotations_b), **params)
    )


__all__ = [
    "Bundle",
    "DimensionError",
    "Error",
    "FormatError",
    "NumericError",
    "RangeError",
    "TransportError",
    "ValidationError",
    "__version__",
    "attention_diff",
    "density",
    "density_report",
    "ffn_diff",
    "ffn_pca",
    "group_compare",
    "importance_matrix",
    "intersection_rate",
    "load_bundle",
    "make_fixture",
    "next_token_prob",
    "normalize_map",
    "relation_score",
    "segment_profile",
]
