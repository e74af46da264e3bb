import json
import math

import numpy as np
import pytest

import alignlens


@pytest.fixture(scope="module")
def bundle():
    return alignlens.make_fixture(seed=3)


def test_fixture_shape_and_tokens(bundle):
    assert bundle.n_layers == 2
    assert bundle.d_model == 16
    assert bundle.input_embeddings.shape == (len(bundle.tokens), 16)
    ids = bundle.tokenize("the sea")
    assert bundle.detokenize(ids) == "the sea"


def test_bundle_round_trip(bundle, tmp_path):
    bundle.save(tmp_path / "b")
    again = alignlens.load_bundle(tmp_path / "b")
    assert again.digest() == bundle.digest()


def test_probabilities_sum_to_one(bundle):
    ctx = bundle.tokenize("write")
    total = sum(alignlens.next_token_prob(bundle, ctx, t) for t in range(len(bundle.tokens)))
    assert total == pytest.approx(1.0, abs=1e-9)


def test_salient_map(bundle):
    prompt, response = bundle.tokenize("write a poem"), bundle.tokenize("roses")
    imp = alignlens.importance_matrix(bundle, prompt, response, method="occlusion", workers=2)
    assert imp.shape == (len(prompt), len(response))
    q = alignlens.normalize_map(imp, levels=10, threshold=0)
    for col in q.T:
        if col.any():
            assert col.max() == 10


def test_scalar_helpers():
    assert alignlens.density([0, 0, 3.0]) == 1.0
    assert alignlens.density([2.0] * 16, 4.0) == pytest.approx(8.0, abs=1e-9)
    assert alignlens.segment_profile([1, 0, 0, 0, 1], [(0, 5)]) == [0.5, 0, 0, 0.5]
    assert alignlens.intersection_rate([("a", "b")], [("a", "b")]) == 1.0
    g = alignlens.group_compare([1.0, 2.0, 3.0], [1.0, 2.0, 3.0], "greater")
    assert g["p_value"] == pytest.approx(0.5)


def test_pca_curve(bundle):
    eigenvalues, directions, cumulative = alignlens.ffn_pca(bundle, 0)
    assert directions.shape == (16, 16)
    assert np.all(np.diff(eigenvalues) <= 0)
    assert cumulative[-1] == 1.0


def test_errors_are_typed(bundle):
    with pytest.raises(alignlens.RangeError):
        alignlens.ffn_pca(bundle, 99)
    with pytest.raises(alignlens.ValidationError):
        alignlens.normalize_map(np.ones((2, 2)), levels=3, threshold=5)
    with pytest.raises(alignlens.Error):
        alignlens.load_bundle("/nonexistent/bundle")


def test_density_report(bundle, tmp_path):
    rows = [
        {"prompt": "write a poem", "response": "the sea is calm today", "instruction_spans": [[0, 5]],
         "followed": True, "dataset": "d"},
        {"prompt": "list two fruits", "response": "apples and pears", "instruction_spans": [[0, 4]],
         "followed": True, "dataset": "d"},
        {"prompt": "name a color", "response": "blue is a color", "instruction_spans": [[0, 4]],
         "followed": False, "dataset": "d"},
    ]
    path = tmp_path / "inst.jsonl"
    path.write_text("".join(json.dumps(r) + "\n" for r in rows))
    report = alignlens.density_report(bundle, bundle, path, threshold=0)
    assert report["schema_version"] == 1
    density = report["sections"]["density"]["rows"]
    b_row = [r for r in density if r["series"] == "b"][0]
    assert math.isclose(b_row["p_value"], 0.5)
