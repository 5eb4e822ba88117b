"""Motion-cue attention gating for a recurrent state-token decoder."""
from ._kernels import BACKEND
from .attention import BIAS_FLOOR, AttentionWeights, LogitBias, attention_forward, project_qkv
from .decoder import DecoderConfig, FrameResult, StateBundle, embedding_pca, frame_step, init, run_stream
from .gating import GatingConfig, active_biases, img_bias, self_bias, state_bias
from .motion_cue import AttentionStack, CueConfig, DynamicScoreMap, accumulate, aggregate, normalize
from .synthscene import LabeledStream, SceneConfig, generate, separation_metrics

__version__ = "0.1.0"
