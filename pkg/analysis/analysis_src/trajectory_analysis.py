from abc import ABC, abstractmethod
from pathlib import Path
from typing import Optional, Union

import matplotlib.pyplot as plt
import pandas as pd
from matplotlib.figure import Figure


class TrajectoryAnalysisStrategy(ABC):
    @abstractmethod
    def plot(self, df: pd.DataFrame, ax: plt.Axes) -> None: ...


class StateConvergencePlot(TrajectoryAnalysisStrategy):
    """One line per trajectory for a single (node, dim) coordinate."""

    def __init__(self, node: int = 0, dim: int = 0):
        self.node = node
        self.dim = dim

    def plot(self, df: pd.DataFrame, ax: plt.Axes) -> None:
        sub = df[(df["node"] == self.node) & (df["dim"] == self.dim)]
        if "traj_id" not in sub.columns:
            sub = sub.assign(traj_id=0)
        for traj_id, rows in sub.groupby("traj_id"):
            ax.plot(rows["k"], rows["value"], linewidth=1, label=f"trajectory {traj_id}")
        ax.set_title(f"Subsystem {self.node}, state {self.dim}")
        ax.set_xlabel("k")
        ax.set_ylabel("x")
        if sub["traj_id"].nunique() <= 10:
            ax.legend()


class LyapunovDecayPlot(TrajectoryAnalysisStrategy):
    """Total V(x_k, x̂_k) per pair; log scale when every value is positive."""

    def plot(self, df: pd.DataFrame, ax: plt.Axes) -> None:
        for pair_id, rows in df.groupby("pair_id"):
            ax.plot(rows["k"], rows["V"], linewidth=1, label=f"pair {pair_id}")
        if len(df) and (df["V"] > 0).all():
            ax.set_yscale("log")
        ax.set_title("Lyapunov value along paired trajectories")
        ax.set_xlabel("k")
        ax.set_ylabel("V")
        if df["pair_id"].nunique() <= 10:
            ax.legend()


class TrajectoryAnalyzer:
    def __init__(self, strategy: TrajectoryAnalysisStrategy):
        self._strategy = strategy

    def set_strategy(self, strategy: TrajectoryAnalysisStrategy) -> None:
        self._strategy = strategy

    def execute_analysis(
        self, df: pd.DataFrame, save_to: Optional[Union[str, Path]] = None, show: bool = False
    ) -> Figure:
        fig, ax = plt.subplots(figsize=(8, 5))
        self._strategy.plot(df, ax)
        fig.tight_layout()
        if save_to is not None:
            fig.savefig(save_to)
        if show:
            plt.show()
        return fig


def plot_run(out_dir: Union[str, Path], node: int = 0, dim: int = 0) -> None:
    """Render both panels from the CSVs of a simulate run into the same directory."""
    out = Path(out_dir)
    analyzer = TrajectoryAnalyzer(StateConvergencePlot(node, dim))
    plt.close(analyzer.execute_analysis(pd.read_csv(out / "trajectories.csv"), out / "trajectories.png"))
    if (out / "lyapunov.csv").exists():
        analyzer.set_strategy(LyapunovDecayPlot())
        plt.close(analyzer.execute_analysis(pd.read_csv(out / "lyapunov.csv"), out / "lyapunov.png"))
