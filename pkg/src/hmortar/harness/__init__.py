"""Data generation, training, forecasting and statistics."""
