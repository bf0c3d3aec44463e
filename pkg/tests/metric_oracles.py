"""Independent metric references and a fixed 50-pair fixture."""

import random
import re
import warnings

from nltk.translate.bleu_score import sentence_bleu
from rouge_score import rouge_scorer

_VOCAB = ["the", "cat", "sat", "on", "a", "mat", "dog", "ran", "home", "fast", "Red", "blue,"]


def fixture_pairs(n=50, seed=1234):
    rng = random.Random(seed)
    pairs = []
    for _ in range(n):
        ref = [rng.choice(_VOCAB) for _ in range(rng.randint(1, 12))]
        mode = rng.random()
        if mode < 0.3:
            cand = list(ref)
            for _ in range(rng.randint(0, 3)):
                cand[rng.randrange(len(cand))] = rng.choice(_VOCAB)
        elif mode < 0.6:
            cand = ref[rng.randrange(len(ref)):] + [rng.choice(_VOCAB) for _ in range(rng.randint(0, 4))]
        else:
            cand = [rng.choice(_VOCAB) for _ in range(rng.randint(1, 12))]
        pairs.append((" ".join(cand), " ".join(ref)))
    return pairs


def _toks(s):
    return re.findall(r"[a-z0-9]+", s.lower())


def _add_one(p_n, references, hypothesis, hyp_len, **kw):
    out = []
    for i, p in enumerate(p_n):
        if i > 0 and p.numerator == 0:
            out.append(1.0 / (max(0, hyp_len - i) + 1))
        else:
            out.append(p)
    return out


def ref_bleu(cand, ref):
    c, r = _toks(cand), _toks(ref)
    if not c or not r:
        return 0.0
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return float(sentence_bleu([r], c, smoothing_function=_add_one))


_scorer = rouge_scorer.RougeScorer(["rouge1", "rougeL"], use_stemmer=False)


def ref_rouge(cand, ref):
    s = _scorer.score(ref, cand)
    return s["rouge1"].fmeasure, s["rougeL"].fmeasure
