"""Co-speech gesture generation from text, audio, and speaker identity,
with Frechet gesture distance evaluation and a noise validation bench."""

__version__ = "0.1.0"
