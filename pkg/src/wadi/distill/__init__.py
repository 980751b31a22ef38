"""One-step distillation with rotation adapters on the student and the fake model."""
