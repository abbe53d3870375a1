"""
Bytes, language tokens and conciseness
======================================

How text becomes model input, and how many bytes each script spends on
the same content.
"""

from moce.analysis import conciseness_report
from moce.synthetic import SyntheticLangSpec, make_multiparallel
from moce.tokenizer import build_vocab, decode, encode

vocab = build_vocab(["de", "en", "zh"])
print("vocabulary size:", vocab.size)

# a sentence is its language token, its UTF-8 bytes, then EOS
for lang, text in [("en", "cat"), ("de", "Kätzchen"), ("zh", "猫")]:
    seq = encode(text, lang, vocab)
    print(lang, [vocab.token_name(t) for t in seq.ids], "->", decode(seq))

# three synthetic scripts expressing the same meanings with 1, 2 and 3 bytes per symbol
specs = [SyntheticLangSpec("en", 16, 1), SyntheticLangSpec("ru", 16, 2), SyntheticLangSpec("zh", 16, 3)]
texts = make_multiparallel(specs, 300, seed=0)
print(texts["en"][0], "|", texts["ru"][0], "|", texts["zh"][0])

report = conciseness_report(texts, pivot="en")
for row in report.rows():
    print("{lang}: {avg_bytes:.1f} bytes/sentence, x{ratio_vs_pivot:.2f} vs en".format(**row))
