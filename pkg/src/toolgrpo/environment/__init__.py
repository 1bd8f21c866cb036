"""Frozen reasoner and tool executors: simulator and remote client behind one interface."""

from .base import (
    DirectCache,
    Environment,
    EnvironmentFailure,
    EpisodeFailure,
    ReasonerVerdict,
    augmented_answer,
    direct_answer,
    judge,
    run_episode,
)
from .generator import (
    ClosedForm,
    GeneratorConfig,
    SyntheticData,
    ToolArchetype,
    chart_library_config,
    closed_form_accuracies,
    generate_synthetic_dataset,
    geometry_library_config,
)
from .remote import RemoteConfig, RemoteEnvironment, RemoteProtocolError, remote_reason, remote_tool
from .simulator import (
    SimProfile,
    Simulator,
    best_selection,
    read_profiles,
    sim_correctness_probability,
    write_profiles,
)

__all__ = [
    "ClosedForm",
    "DirectCache",
    "Environment",
    "EnvironmentFailure",
    "EpisodeFailure",
    "GeneratorConfig",
    "ReasonerVerdict",
    "RemoteConfig",
    "RemoteEnvironment",
    "RemoteProtocolError",
    "SimProfile",
    "Simulator",
    "SyntheticData",
    "ToolArchetype",
    "augmented_answer",
    "best_selection",
    "chart_library_config",
    "closed_form_accuracies",
    "direct_answer",
    "generate_synthetic_dataset",
    "geometry_library_config",
    "judge",
    "read_profiles",
    "remote_reason",
    "remote_tool",
    "run_episode",
    "sim_correctness_probability",
    "write_profiles",
]
