//! Criterion benchmarks for the convolution kernel and a full training step.
