"""Two-stage multi-agent trajectory forecasting.

Stage one proposes future trajectories from a discrete-latent
conditional-variational encoder-decoder built on mutual-gated recurrent
cells; stage two scores the proposals with a binary classifier and
returns the top-ranked ones.
"""

from .kernels import BACKEND as KERNEL_BACKEND

__version__ = "0.1.0"

__all__ = ["KERNEL_BACKEND", "__version__"]
