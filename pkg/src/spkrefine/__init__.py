"""Speaker-embedding distillation and on-the-fly refinement."""
__version__ = "0.1.0"
