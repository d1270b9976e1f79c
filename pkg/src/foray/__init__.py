"""Attack synthesis for DeFi protocol models via token flow graphs and CEGIS."""

__version__ = "0.1.0"
