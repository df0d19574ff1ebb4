"""Physics-guided denoising of noisy sensor data.

Joint training of a denoiser network against a physics surrogate (PINN),
regularized by an energy-based model or a Fisher-score model, with benchmark
problems (harmonic oscillator, Burgers, Laplace) and a laser powder bed
fusion thermal surrogate.
"""

__version__ = "0.1.0"
