"""Matrix product state generative models driving an active-inference agent on the T-maze."""

__version__ = "0.1.0"
