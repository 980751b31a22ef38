"""Low-rank rotation adapters and one-step score distillation at desk scale."""
