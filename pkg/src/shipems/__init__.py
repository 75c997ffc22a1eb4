from .config import ShipConfig, RunConfig
