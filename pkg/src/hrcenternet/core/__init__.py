"""Core detection library: geometry, codec, loss, model, data and evaluation."""
