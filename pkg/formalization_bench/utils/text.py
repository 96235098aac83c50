import json
import re
from typing import Optional


__all__ = [
    'extract_code_block', 'find_success_declaration',
    'levenshtein_distance', 'similarity'
]


CODE_BLOCK_RE = re.compile(
    r"```[ \t]*([A-Za-z0-9_+-]*)[ \t]*\r?\n(.*?)```", re.DOTALL
)
EMBEDDED_SUCCESS_RE = re.compile(r'\{\s*"status"\s*:\s*"success"\s*\}')

EXACT = 'exact'
EMBEDDED = 'embedded'


def extract_code_block(text: Optional[str]) -> Optional[str]:
    """
    Return the body of the first fenced code block in `text`

    :arguments:
        text(str | None): assistant message content
    :return:
        code(str | None): block content, None if there is no fenced block
    """
    if not text:
        return None
    match = CODE_BLOCK_RE.search(text)
    if match is None:
        return None
    return match.group(2)


def find_success_declaration(text: Optional[str]) -> Optional[str]:
    """
    Detect the {"status": "success"} declaration

    :return:
        kind(str | None): 'exact' when the whole message is the JSON object,
            'embedded' when it appears inside prose, None otherwise
    """
    if not text:
        return None
    stripped = text.strip()
    try:
        if json.loads(stripped) == {'status': 'success'}:
            return EXACT
    except ValueError:
        pass
    if EMBEDDED_SUCCESS_RE.search(text):
        return EMBEDDED
    return None


def levenshtein_distance(s1: str, s2: str) -> int:
    if len(s1) < len(s2):
        return levenshtein_distance(s2, s1)
    if len(s2) == 0:
        return len(s1)
    prev_row = list(range(len(s2) + 1))
    for i, c1 in enumerate(s1):
        curr_row = [i + 1]
        for j, c2 in enumerate(s2):
            curr_row.append(min(
                prev_row[j + 1] + 1,  # insertion
                curr_row[j] + 1,  # deletion
                prev_row[j] + (c1 != c2)  # substitution
            ))
        prev_row = curr_row
    return prev_row[-1]


def similarity(s1: str, s2: str) -> float:
    """1 - normalized edit distance, case-insensitive, in [0, 1]"""
    if not s1 and not s2:
        return 1.0
    s1, s2 = s1.lower(), s2.lower()
    return 1.0 - levenshtein_distance(s1, s2) / max(len(s1), len(s2))
