"""Cross-lingual adaptation MAML (XLA-MAML) at desk scale."""

__version__ = "0.1.0"
