import re

WORD_RE = re.compile(r"[A-Za-z0-9']+")


def split_words(text):
    """Return the words of ``text`` in order."""
    return WORD_RE.findall(text)


def count_words(text): return len(split_words(text))


def longest_word(text, default=""):
    words = split_words(text)
    if not words:
        return default
    # ties keep the first occurrence
    best = words[0]
    for w in words[1:]:
        if len(w) > len(best):
            best = w
    return best
