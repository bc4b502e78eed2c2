import string

ALPHABET = string.ascii_lowercase


class Caesar:
    """Shift cipher over the lower-case alphabet."""

    def __init__(self, shift: int = 3):
        self.shift = shift % 26

    def _move(self, ch, k):
        if ch in ALPHABET:
            return ALPHABET[(ALPHABET.index(ch) + k) % 26]
        return ch

    def encode(self, text): return "".join(self._move(c, self.shift) for c in text.lower())

    def decode(self, text):
        return "".join(self._move(c, -self.shift) for c in text.lower())


def rot13(text):
    return Caesar(13).encode(text)
