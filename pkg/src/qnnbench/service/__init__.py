"""HTTP service wrapping the experiment runner."""
