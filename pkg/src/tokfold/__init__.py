"""tokfold: desk-scale visual-token compression frontend and training plumbing."""

__version__ = "0.1.0"
