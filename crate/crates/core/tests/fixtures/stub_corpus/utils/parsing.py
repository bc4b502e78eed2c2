from typing import Callable, Dict, List, Optional


def parse_pairs(
    text: str,
    sep: str = ";",
    kv: str = ":",
    convert: Callable[[str], object] = lambda s: s.strip(),
) -> Dict[str, object]:
    """Parse ``"a: 1; b: 2"`` into a dict (note the colons in defaults)."""
    out = {}
    for chunk in text.split(sep):
        if not chunk.strip():
            continue
        key, _, value = chunk.partition(kv)
        out[key.strip()] = convert(value)
    return out


def parse_ints(text: str, default: Optional[int] = None) -> List[Optional[int]]:
    result = []
    for tok in text.split(","):
        tok = tok.strip()
        try:
            result.append(int(tok))
        except ValueError:
            result.append(default)
    return result


def tokenize(expr: str) -> List[str]:
    tokens, num = [], ""
    for ch in expr:
        if ch.isdigit() or ch == ".":
            num += ch
            continue
        if num:
            tokens.append(num)
            num = ""
        if ch in "+-*/()":
            tokens.append(ch)
    if num:
        tokens.append(num)
    return tokens
