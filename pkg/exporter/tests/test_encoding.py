import numpy as np
import pytest

from embed_export.encoding import HashedEncoder, get_encoder, tokenize


def test_tokenize_folds_case_and_punctuation():
    assert tokenize("The STAFF, was great!") == ["the", "staff", "was", "great"]
    assert tokenize("don't stop") == ["don't", "stop"]
    assert tokenize("...") == []
    assert tokenize("") == []


def test_same_name_same_vectors():
    a = get_encoder("hashed16-v1")
    b = get_encoder("hashed16-v1")
    tokens = ["cheap", "tasty", "noodles"]
    assert np.array_equal(a.encode(tokens), b.encode(tokens))


def test_width_and_shape():
    enc = get_encoder("hashed8-v1")
    out = enc.encode(["one", "two"])
    assert out.shape == (2, 8)
    assert out.dtype == np.float64
    assert np.allclose(np.linalg.norm(out, axis=1), 1.0, atol=1e-12)


def test_context_changes_the_vector():
    enc = get_encoder("hashed16-v1")
    in_a = enc.encode(["good", "food"])[1]
    in_b = enc.encode(["bad", "food"])[1]
    assert not np.array_equal(in_a, in_b)


def test_position_changes_the_vector():
    enc = get_encoder("hashed16-v1")
    out = enc.encode(["very", "very", "very"])
    assert not np.array_equal(out[0], out[1])


def test_different_widths_differ():
    assert get_encoder("hashed8-v1").d == 8
    assert get_encoder("hashed64-v1").name == "hashed64-v1"


def test_unknown_encoder_name():
    with pytest.raises(ValueError, match="supported: hashed"):
        get_encoder("bert-base-uncased")


def test_empty_token_list_rejected():
    with pytest.raises(ValueError, match="empty token list"):
        HashedEncoder(4, "v1").encode([])
