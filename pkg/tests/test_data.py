import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from accap.data import (
    BLOCKS,
    COLORS,
    COUNTS,
    EOS,
    FEATURE_DIM,
    SETTINGS,
    SHAPES,
    Scene,
    Vocab,
    build_vocab,
    decode_feature,
    dumps_corpus,
    encode_feature,
    generate_corpus,
    load_corpus,
    loads_corpus,
    save_corpus,
    scene_captions,
    split_sizes,
    template_words,
)

scenes = st.builds(Scene, st.sampled_from(COUNTS), st.sampled_from(COLORS),
                   st.sampled_from(SHAPES), st.sampled_from(SETTINGS))


def test_template_captions():
    assert "a red circle indoors" in scene_captions(Scene(1, "red", "circle", "indoors"))
    assert "two blue squares outdoors" in scene_captions(Scene(2, "blue", "square", "outdoors"))
    assert "there are three yellow triangles" in scene_captions(Scene(3, "yellow", "triangle", "indoors"))


def test_invalid_scene_and_tiny_corpus_rejected():
    with pytest.raises(ValueError):
        Scene(4, "red", "circle", "indoors")
    with pytest.raises(ValueError):
        generate_corpus(0, 9)


def test_corpus_is_byte_identical_across_calls():
    assert dumps_corpus(generate_corpus(42, 100)) == dumps_corpus(generate_corpus(42, 100))
    assert dumps_corpus(generate_corpus(42, 100)) != dumps_corpus(generate_corpus(43, 100))


def test_noiseless_feature_is_exact_one_hot():
    f = encode_feature(Scene(2, "green", "triangle", "outdoors"), None, sigma=0.0)
    expected = np.zeros(FEATURE_DIM)
    expected[[1, 3 + 1, 7 + 2, 10 + 1]] = 1.0
    np.testing.assert_array_equal(f, expected)


def test_features_differing_in_color_differ_only_in_color_block():
    a = encode_feature(Scene(1, "red", "circle", "indoors"), None, 0.0)
    b = encode_feature(Scene(1, "blue", "circle", "indoors"), None, 0.0)
    diff = np.nonzero(a != b)[0]
    assert set(diff) <= set(range(BLOCKS[1].start, BLOCKS[1].stop)) and len(diff) == 2


def test_noisy_feature_argmax_recovers_scene():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        s = Scene(COUNTS[rng.integers(3)], COLORS[rng.integers(4)], SHAPES[rng.integers(3)], SETTINGS[rng.integers(2)])
        assert decode_feature(encode_feature(s, rng)) == s


def test_empty_vocab_has_reserved_tokens_only():
    assert len(build_vocab([])) == 4


def test_vocab_contains_each_template_word_once(small_corpus):
    words = small_corpus.vocab.tokens[4:]
    assert len(words) == len(set(words))
    assert set(words) == set(template_words())
    assert len(small_corpus.vocab) <= 64


def test_vocab_round_trip_and_bad_vocab(small_corpus):
    v = small_corpus.vocab
    for e in small_corpus.examples:
        for cap in scene_captions(e.scene):
            assert v.decode(v.encode(cap)) == cap
    with pytest.raises(ValueError):
        Vocab(["a", "b"])


def test_corpus_invariants(small_corpus):
    V = len(small_corpus.vocab)
    for e in small_corpus.examples:
        assert 2 <= len(e.references) <= 3
        for r in e.references:
            assert r[-1] == EOS and EOS not in r[:-1]
            assert 3 <= len(r) <= 12
            assert all(0 <= t < V for t in r)
        # self-consistent: references regenerate from the scene
        assert [small_corpus.vocab.decode(r) for r in e.references] == scene_captions(e.scene)


@settings(max_examples=30, deadline=None)
@given(st.integers(10, 400), st.integers(0, 1000))
def test_splits_disjoint_exhaustive_and_proportional(n, seed):
    c = generate_corpus(seed, n)
    sizes = [len(c.split(s)) for s in ("train", "val", "test")]
    assert sum(sizes) == n
    assert abs(sizes[0] - 0.8 * n) <= 1 and abs(sizes[1] - 0.1 * n) <= 1 and abs(sizes[2] - 0.1 * n) <= 1
    assert sizes == list(split_sizes(n))


def test_corpus_file_round_trip_bit_exact(tmp_path, small_corpus):
    path = tmp_path / "c.jsonl"
    save_corpus(small_corpus, path)
    back = load_corpus(path)
    assert back.vocab == small_corpus.vocab
    for a, b in zip(small_corpus.examples, back.examples):
        assert a.feature.tobytes() == b.feature.tobytes()
        assert a.references == b.references and a.split == b.split and a.scene == b.scene
    assert dumps_corpus(back) == path.read_text()


def test_corpus_file_rejects_foreign_format():
    with pytest.raises(ValueError):
        loads_corpus('{"format": "other"}\n')


@given(scenes)
def test_scene_captions_tokens_in_template_words(scene):
    words = set(template_words())
    for cap in scene_captions(scene):
        assert set(cap.split()) <= words
