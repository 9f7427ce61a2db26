#!/usr/bin/env python3
"""Extract English prose sentences from CPython's bundled documentation topics.

Writes one lower-cased, whitespace-tokenised sentence per line, with a
"###DOC###" line between documentation topics. The output is the natural
language fixture used by the perplexity ordering experiments.
"""
import re
import sys

import pydoc_data.topics as topics

TOKEN = re.compile(r"[A-Za-z]+(?:'[a-z]+)?|[0-9]+|[.,;:!?()]")
SENTENCE_BREAK = re.compile(r"(?<=[.!?])\s+(?=[A-Z])")


def prose_sentences(body):
    for para in re.split(r"\n\s*\n", body):
        lines = para.split("\n")
        if any(l.strip().startswith((">>>", "...")) for l in lines):
            continue
        text = " ".join(l.strip() for l in lines)
        for sentence in SENTENCE_BREAK.split(text):
            toks = TOKEN.findall(sentence)
            if not 5 <= len(toks) <= 60:
                continue
            if sum(t.isalpha() for t in toks) / len(toks) < 0.8:
                continue
            yield " ".join(t.lower() for t in toks)


def main(out):
    for key in sorted(topics.topics):
        sents = list(prose_sentences(topics.topics[key]))
        if not sents:
            continue
        out.write("###DOC###\n")
        for s in sents:
            out.write(s + "\n")


if __name__ == "__main__":
    main(sys.stdout)
