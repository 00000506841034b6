import itertools
from collections import Counter

import numpy as np
import pytest

from linkedbayes.channel import (ChannelParams, NpylmLM, PhonemeAlphabet, UniformLM, best_string, channel_logprob,
                                 corrupt, recognize_lbest)
from linkedbayes.npylm import NPYLM

AB = PhonemeAlphabet(("a", "b"))
ABC = PhonemeAlphabet(tuple("abc"))


def all_strings(alphabet, max_len):
    for n in range(max_len + 1):
        for t in itertools.product(alphabet.symbols, repeat=n):
            yield "".join(t)


def test_alphabet_and_params_validate():
    with pytest.raises(ValueError):
        PhonemeAlphabet(("a",))
    with pytest.raises(ValueError):
        PhonemeAlphabet(("a", "a"))
    with pytest.raises(ValueError):
        ChannelParams(p_sub=0.6, p_del=0.5)
    assert ChannelParams(0.1, 0.2).p_match == pytest.approx(0.7)


def test_channel_normalised_without_insertions():
    params = ChannelParams(0.1, 0.15, 0.0)
    total = sum(np.exp(channel_logprob("abb", o, params, AB)) for o in all_strings(AB, 3))
    assert total == pytest.approx(1.0, abs=1e-12)


def test_channel_normalised_with_insertions():
    params = ChannelParams(0.1, 0.1, 0.2)
    total = sum(np.exp(channel_logprob("ab", o, params, AB)) for o in all_strings(AB, 12))
    # geometric tail beyond 12 observed symbols is tiny
    assert 1 - 1e-4 < total <= 1 + 1e-12


def test_corrupt_matches_channel_logprob():
    params = ChannelParams(0.2, 0.1, 0.1)
    rng = np.random.default_rng(0)
    n = 20000
    freq = Counter(corrupt("abc", params, ABC, rng) for _ in range(n))
    for o, c in freq.most_common(5):
        assert c / n == pytest.approx(np.exp(channel_logprob("abc", o, params, ABC)), abs=0.01)


def test_forced_substitution_flips_every_symbol():
    out = corrupt("aabab", ChannelParams(p_sub=0.999999), AB, 0)
    assert out == "bbaba"


def test_substitution_rate_concentrates():
    rng = np.random.default_rng(3)
    clean = "".join(rng.choice(list("abc"), 10000))
    out = corrupt(clean, ChannelParams(p_sub=0.1), ABC, rng)
    frac = np.mean([a != b for a, b in zip(clean, out)])
    assert abs(frac - 0.1) <= 3 * np.sqrt(0.1 * 0.9 / 10000)


def test_noise_free_channel_is_identity():
    params = ChannelParams()
    assert corrupt("abcab", params, ABC, 0) == "abcab"
    assert channel_logprob("abc", "abc", params, ABC) == 0.0
    assert channel_logprob("abc", "abb", params, ABC) == -np.inf


def test_recognizer_scores_and_order():
    params = ChannelParams(0.1, 0.05, 0.05)
    res = recognize_lbest("abca", params, ABC, None, L=8, beam=32)
    assert len(res.hypotheses) == 8 and not res.exhausted
    scores = [h.log_score for h in res.hypotheses]
    assert all(b <= a for a, b in zip(scores, scores[1:]))
    assert len({h.text for h in res.hypotheses}) == 8
    lm = UniformLM(ABC)
    for h in res.hypotheses:
        assert h.log_score == pytest.approx(channel_logprob(h.text, "abca", params, ABC) + lm.logprob(h.text), abs=1e-9)
    assert res.hypotheses[0].text == "abca" == best_string("abca", params, ABC)


def test_recognizer_finds_exhaustive_best():
    params = ChannelParams(0.2, 0.1, 0.1)
    obs = "abba"
    brute = max(all_strings(AB, 6), key=lambda s: channel_logprob(s, obs, params, AB) - len(s) * np.log(2))
    assert recognize_lbest(obs, params, AB, L=1, beam=64).hypotheses[0].text == brute


def test_recognizer_with_language_model():
    rng = np.random.default_rng(1)
    model = NPYLM("abc")
    model.fit_from_words([["abc"]] * 20, rng)
    lm = NpylmLM(model, ABC, 4)
    params = ChannelParams(0.3, 0.0, 0.0)
    # a strong LM pulls a corrupted utterance back to the familiar word
    assert recognize_lbest("abb", params, ABC, lm, L=1, beam=16).hypotheses[0].text == "abc"
    assert recognize_lbest("abb", params, ABC, None, L=1, beam=16).hypotheses[0].text == "abb"


def test_recognizer_arguments():
    params = ChannelParams(0.1)
    with pytest.raises(ValueError):
        recognize_lbest("ab", params, AB, L=5, beam=2)
    with pytest.raises(ValueError):
        recognize_lbest("ab", params, AB, L=0)
    res = recognize_lbest("ab", ChannelParams(), AB, L=3, beam=4)
    assert res.exhausted and [h.text for h in res.hypotheses] == ["ab"]
