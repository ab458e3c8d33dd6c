"""Grey-box Raman amplifier gain modelling with a coupled-ODE oracle."""

__version__ = "0.1.0"
