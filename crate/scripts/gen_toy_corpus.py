#!/usr/bin/env python3
"""Generates fixtures/toy_corpus.txt, the synthetic training corpus.

Each line is one document about one topic. Content words of a topic share a
three-letter prefix; word classes are marked by suffixes, and every sentence
follows the same eight-token template:

    the ADJ NOUN VERB ADV PREP the NOUN

Run from the repository root: python3 scripts/gen_toy_corpus.py
"""

import random

SEED = 20240611
TOPICS = ["zor", "kel", "mav", "pid", "rus", "tav", "gon", "fel", "bix", "lum", "sed", "wok"]
SUFFIX = {"noun": "on", "verb": "ed", "adj": "ous", "adv": "ly"}
PREPS = ["in", "on", "with", "near", "under", "over"]
STEMS_PER_CLASS = 6
SENTENCES_PER_LINE = 4
TARGET_BYTES = 50_000

rng = random.Random(SEED)
CONS = "bcdfghjklmnprstvz"
VOWELS = "aeiou"


def stem():
    return "".join(rng.choice(CONS) + rng.choice(VOWELS) for _ in range(rng.choice([1, 2])))


lexicon = {}
for topic in TOPICS:
    lexicon[topic] = {}
    for cls, suffix in SUFFIX.items():
        words = set()
        while len(words) < STEMS_PER_CLASS:
            words.add(topic + stem() + suffix)
        lexicon[topic][cls] = sorted(words)


def sentence(topic):
    lex = lexicon[topic]
    pick = lambda cls: rng.choice(lex[cls])
    return ["the", pick("adj"), pick("noun"), pick("verb"), pick("adv"), rng.choice(PREPS), "the", pick("noun")]


lines = []
size = 0
while size < TARGET_BYTES:
    topic = rng.choice(TOPICS)
    tokens = [t for _ in range(SENTENCES_PER_LINE) for t in sentence(topic)]
    line = " ".join(tokens)
    lines.append(line)
    size += len(line) + 1

with open("fixtures/toy_corpus.txt", "w") as f:
    f.write("\n".join(lines) + "\n")
print(f"{len(lines)} lines, {size} bytes")
