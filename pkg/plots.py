"""SVG line charts of run histories."""
import logging
from pathlib import Path
from typing import Union

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import pandas as pd  # noqa: E402

logger = logging.getLogger(__name__)


def write_plots(histories: Union[pd.DataFrame, dict[str, pd.DataFrame]], path: Union[str, Path], title: str = "") -> Path:
    """
    Loss vs iteration, loss vs wall time and (when known) error vs iteration.

    ``histories`` is one run or a mapping of label -> run for comparisons.
    """
    if isinstance(histories, pd.DataFrame):
        histories = {"": histories}
    has_error = any(
        "rel_l2" in h and np.isfinite(h["rel_l2"].to_numpy(dtype=float)).any() for h in histories.values()
    )
    panels = 3 if has_error else 2
    fig, axes = plt.subplots(1, panels, figsize=(5 * panels, 4))

    for label, history in histories.items():
        if history.empty:
            continue
        axes[0].semilogy(history["iter"], history["loss"], label=label or None)
        axes[1].semilogy(history["wall_s"], history["loss"], label=label or None)
        if has_error and "rel_l2" in history:
            axes[2].semilogy(history["iter"], history["rel_l2"], label=label or None)

    axes[0].set_xlabel("iteration")
    axes[0].set_ylabel("loss")
    axes[1].set_xlabel("wall time [s]")
    axes[1].set_ylabel("loss")
    if has_error:
        axes[2].set_xlabel("iteration")
        axes[2].set_ylabel("relative L2 error")
    if any(histories):
        for ax in axes:
            ax.legend(fontsize="small")
    if title:
        fig.suptitle(title)
    fig.tight_layout()

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, format="svg")
    plt.close(fig)
    logger.info(f"Wrote plot {path}")
    return path
