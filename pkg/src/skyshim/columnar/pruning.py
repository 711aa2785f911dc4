"""Row group pruning from footer statistics."""

from __future__ import annotations

from skyshim import expr as _expr
from skyshim.columnar.file import FileFooter


def prune_row_groups(footer: FileFooter, filter) -> list[int]:
    """Indices of row groups whose stats do not rule the filter out.

    ``filter`` is an Expression (bound here against the footer schema) or an
    already-bound expression.
    """
    bound = filter if isinstance(filter, _expr.BoundExpression) else _expr.bind(filter, footer.schema)
    return [
        g for g, rg in enumerate(footer.row_groups)
        if _expr.stats_admissible(bound, footer.group_stats(g), rg.row_count) is _expr.Admissible.MAYBE
    ]
