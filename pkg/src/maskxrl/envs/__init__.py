"""Environments selectable by name: ``chain``, ``connect4``, ``highway``."""

from .base import EnvSpec, JointObservation, JointStepResult, MultiAgentEnv
from .chain import (ChainEnv, ChainMdpSpec, chain_bruteforce_drops, chain_optimal_values,
                    chain_oracle_critical_state, chain_oracle_drops)
from .connect4 import Connect4Env, winning_lines
from .highway import HighwayConfig, HighwayEnv

ENV_NAMES = ("chain", "connect4", "highway")


def make_env(name, n_agents=None, **options):
    """Build an environment from its config string.

    ``options`` are forwarded to :class:`ChainMdpSpec` or :class:`HighwayConfig`.
    Connect-4 always has two agents.
    """
    if name == "chain":
        return ChainEnv(ChainMdpSpec(**options), n_agents=n_agents or 1)
    if name == "connect4":
        if n_agents not in (None, 2):
            raise ValueError("connect4 is a two-agent game")
        if options:
            raise ValueError(f"connect4 takes no options, got {sorted(options)}")
        return Connect4Env()
    if name == "highway":
        if n_agents is not None:
            options["n_agents"] = n_agents
        return HighwayEnv(HighwayConfig(**options))
    raise ValueError(f"unknown environment {name!r}; choose from {ENV_NAMES}")


__all__ = [
    "ENV_NAMES", "ChainEnv", "ChainMdpSpec", "Connect4Env", "EnvSpec", "HighwayConfig",
    "HighwayEnv", "JointObservation", "JointStepResult", "MultiAgentEnv", "chain_bruteforce_drops",
    "chain_optimal_values", "chain_oracle_critical_state", "chain_oracle_drops", "make_env",
    "winning_lines",
]
