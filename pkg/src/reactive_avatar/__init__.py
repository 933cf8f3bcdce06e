"""
reactive_avatar package.

Causal diffusion-forcing generation of a listening and speaking avatar's
motion, streamed block by block with rolling KV caches, fine-tuned with
preference optimisation and scored with dyadic interaction metrics on a
synthetic conversation world.
"""

from .core.config import TOOL_VERSION, ConfigManager, RunConfig
from .core.errors import ReactiveAvatarError
from .models.vector_field import MotionVectorField, load_model, save_model
from .sampling.session import StreamSession, open_session
from .sampling.offline import sample_offline
from .training.diffusion_forcing import df_loss, train
from .training.preference import build_pairs, dpo_loss, finetune
from .metrics.interaction import evaluate
from .pipeline import Pipeline

__version__ = TOOL_VERSION
