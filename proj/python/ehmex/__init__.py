"""Intermittent multi-exit inference toolkit (Python bindings)."""

from ehmex._core import (
    channel_importance,
    channels_to_drop,
    entropy,
    flops_of_layer,
    harvest,
    map_action_to_alpha,
    map_action_to_bitwidth,
    q_update,
    quantize_activations,
    quantize_weights,
    search_space_cardinality,
    search_space_log10,
    simulate_profile_scenario,
    snap_alpha,
    softmax,
    toy_dataset_checksum,
)

__all__ = [
    "channel_importance",
    "channels_to_drop",
    "entropy",
    "flops_of_layer",
    "harvest",
    "map_action_to_alpha",
    "map_action_to_bitwidth",
    "q_update",
    "quantize_activations",
    "quantize_weights",
    "search_space_cardinality",
    "search_space_log10",
    "simulate_profile_scenario",
    "snap_alpha",
    "softmax",
    "toy_dataset_checksum",
]
