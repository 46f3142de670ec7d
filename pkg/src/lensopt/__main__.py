"""Entry point for running lensopt as a module.

Usage:
    python -m lensopt verify --config configs/reference.toml
"""

from .cli import entry_point

if __name__ == "__main__":
    entry_point()
