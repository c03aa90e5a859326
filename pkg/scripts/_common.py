from pathlib import Path

from smoothkit.graph import load_citation

DATA = Path(__file__).resolve().parents[1] / "data" / "cora"


def load_cora(root: str | Path = DATA):
    root = Path(root)
    return load_citation(root / "cora.content", root / "cora.cites")
