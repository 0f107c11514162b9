"""Distributional advantage actor-critic (QR-A2C) with A2C and QR-DQN baselines, in numpy."""
from .agents import AgentConfig, ActorCriticAgent, QRDQNAgent, make_agent
from .distributional import (distributional_nstep_target, mean_of, quantile_huber_loss,
                             quantile_midpoints, wasserstein1)
from .envs import CartPole, ChainWorld, MountainCar, make_env, max_return
from .harness import ExperimentConfig, EvalReport, evaluate, load_config, run_experiment

__version__ = "0.1.0"
