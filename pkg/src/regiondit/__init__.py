"""Controllable region attention for DiT-style diffusion stacks, at desk scale."""

from ._accel import USE_NUMBA, backend_name
from .attention import AttentionMode, CrossAttnWeights, cross_attention, negative_path, region_attention
from .dit import Stack, StackConfig, build_stack, forward, forward_negative, placement
from .masks import Axis, LatentGrid, RegionMask, RegionSpec, divide_regions, downsample_mask, flatten_mask
from .prompts import ProgressivePrompt, generate_prompts, merge_prompts, offline_template
from .sampler import CfgConfig, SchedulerConfig, cfg_combine, euler_step, sample, sgm_uniform_sigmas
from .text_states import PromptSet, TextState, batch_prompt_states, build_text_state, project_long

__version__ = "0.1.0"

__all__ = [
    "USE_NUMBA",
    "AttentionMode",
    "Axis",
    "CfgConfig",
    "CrossAttnWeights",
    "LatentGrid",
    "ProgressivePrompt",
    "PromptSet",
    "RegionMask",
    "RegionSpec",
    "SchedulerConfig",
    "Stack",
    "StackConfig",
    "TextState",
    "backend_name",
    "batch_prompt_states",
    "build_stack",
    "build_text_state",
    "cfg_combine",
    "cross_attention",
    "divide_regions",
    "downsample_mask",
    "euler_step",
    "flatten_mask",
    "forward",
    "forward_negative",
    "generate_prompts",
    "merge_prompts",
    "negative_path",
    "offline_template",
    "placement",
    "project_long",
    "region_attention",
    "sample",
    "sgm_uniform_sigmas",
]
