"""sidenet: side-network video deepfake detector over a frozen ViT encoder."""

__version__ = "0.1.0"
