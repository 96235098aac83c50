import hashlib
import json
from fractions import Fraction
from typing import Optional

from configs import settings
from . import decorators, dt, text


__all__ = [
    'merge_dicts', 'get_json_config', 'canonical_json', 'stable_hash',
    'prettify_float', 'prettify_points', 'format_table',
    'decorators', 'dt', 'text'
]


def merge_dicts(*dicts):
    """Later dictionaries win; `None` values never override"""
    assert len(dicts) > 0, 'you must pass minimum one dictionary'
    start_dct = dict(dicts[0])
    for dct in dicts[1:]:
        start_dct = {
            **start_dct, **{k: v for k, v in dct.items() if v is not None}
        }
    return start_dct


def get_json_config(path: Optional[str] = None):
    with open(path or settings.CONFIG_PATH, 'r', encoding='utf-8') as f:
        return json.load(f)


def canonical_json(obj) -> str:
    return json.dumps(
        obj, sort_keys=True, ensure_ascii=False, separators=(',', ':')
    )


def stable_hash(obj) -> str:
    return hashlib.sha256(canonical_json(obj).encode('utf-8')).hexdigest()


def prettify_float(num, digits: int = settings.PRECISION_NUMBER) -> str:
    """Round half away from zero, so exact rationals render like the tables"""
    value = Fraction(num)
    scaled = abs(value) * 10 ** digits
    rounded = int(scaled) + (1 if scaled - int(scaled) >= Fraction(1, 2) else 0)
    sign = '-' if value < 0 and rounded else ''
    text = str(rounded).rjust(digits + 1, '0')
    if digits == 0:
        return sign + text
    return f"{sign}{text[:-digits]}.{text[-digits:]}"


def prettify_points(n, digits: int = settings.PERCENT_PRECISION_NUMBER):
    """Percentage points with an explicit sign, e.g. +32.3"""
    text = prettify_float(n, digits)
    return text if text.startswith('-') else '+' + text


def format_table(headers: list, rows: list) -> str:
    cells = [[str(x) for x in headers]] + [[str(x) for x in r] for r in rows]
    widths = [max(len(row[i]) for row in cells) for i in range(len(headers))]
    lines = [
        '  '.join(cell.ljust(width) for cell, width in zip(row, widths))
        for row in cells
    ]
    lines.insert(1, '  '.join('-' * width for width in widths))
    return '\n'.join(line.rstrip() for line in lines)
