"""SVG rendering of multiplier curves.

Output is deterministic: the SVG hash salt is fixed and the date metadata
is dropped, so identical rows give byte-identical files.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

STYLE = {
    "figure.figsize": (5.0, 3.2),
    "font.size": 9,
    "axes.linewidth": 0.6,
    "lines.linewidth": 1.1,
    "svg.hashsalt": "renvol",
    "svg.fonttype": "none",
}


def _save(fig, path):
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def branch_panel(path, rows, labels, title, xlabel="u", ylim=None):
    """One panel: column 0 on the x-axis, each further column a curve."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        xs = [r[0] for r in rows]
        for col, label in enumerate(labels, start=1):
            ax.plot(xs, [r[col] for r in rows], label=label)
        ax.axhline(0.0, color="0.6", linewidth=0.5)
        ax.set_xlabel(xlabel)
        ax.set_title(title)
        if ylim is not None:
            ax.set_ylim(*ylim)
        ax.legend(frameon=False)
        fig.tight_layout()
        _save(fig, path)
    return path
