"""Configuration, experiment orchestration and CLI."""
from .config import ExperimentConfig, config_from_dict, config_to_dict, load_config
