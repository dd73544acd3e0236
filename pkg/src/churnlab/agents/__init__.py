from .common import AgentHyperparams, RngStreams, UpdateDiagnostics, epsilon_at, make_rng_streams
from .ddqn import DdqnAgent
from .ppo import PpoAgent
from .sac import SacAgent
from .td3 import Td3Agent

__all__ = [
    "AgentHyperparams",
    "RngStreams",
    "UpdateDiagnostics",
    "epsilon_at",
    "make_rng_streams",
    "DdqnAgent",
    "PpoAgent",
    "SacAgent",
    "Td3Agent",
]
