"""Batch SVG rendering of estimator tables.

Plots are a pure rendering of an existing CSV table (no computation)
and are byte-reproducible: fixed hash salt, no embedded timestamps.
"""

import numpy as np

from .errors import ParameterError


def emit_plot(table_path, out_path, title=None):
    """Line-and-errorbar SVG for a (x|bin_center, estimate, stderr, target) table.

    Rows with empty bins (NaN estimate) are excluded from the polyline;
    the shaded band is estimate +- 3 stderr.
    """
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    data = np.genfromtxt(table_path, delimiter=",", names=True)
    names = data.dtype.names or ()
    xcol = "bin_center" if "bin_center" in names else "x"
    required = {xcol, "estimate", "stderr", "target"}
    if not required.issubset(names):
        raise ParameterError(
            f"table {table_path} lacks columns {sorted(required - set(names))}")

    x = np.atleast_1d(data[xcol])
    est = np.atleast_1d(data["estimate"])
    err = np.atleast_1d(data["stderr"])
    tgt = np.atleast_1d(data["target"])
    keep = np.isfinite(x) & np.isfinite(est)

    with plt.rc_context({"svg.hashsalt": "nelsonlab"}):
        fig, ax = plt.subplots(figsize=(6.0, 4.0))
        ax.fill_between(x[keep], (est - 3 * err)[keep], (est + 3 * err)[keep],
                        alpha=0.25, color="tab:blue", linewidth=0,
                        label="estimate +- 3 stderr")
        ax.plot(x[keep], est[keep], "o-", color="tab:blue", ms=3, label="estimate")
        ax.plot(x[keep], tgt[keep], "-", color="tab:red", lw=1.2, label="target")
        ax.set_xlabel(xcol)
        ax.set_ylabel("estimate")
        if title:
            ax.set_title(title)
        ax.legend(loc="best", fontsize=8)
        fig.tight_layout()
        fig.savefig(out_path, format="svg", metadata={"Date": None})
        plt.close(fig)
    return out_path
