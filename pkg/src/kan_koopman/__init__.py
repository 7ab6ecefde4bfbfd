"""KAN core-temperature estimation feeding an online Koopman residual detector
for battery thermal faults and charging-current attacks."""

from .cell_model import AnomalyProfile, CellParams, SimScenario, Trajectory, simulate
from .detector import DetectionReport, DetectorConfig, calibrate_threshold, compare, metrics
from .kan import KanNetwork, TrainConfig, forward, init_network, load_model, save_model, train
from .koopman import EmbedConfig, KoopmanModel, fit, predict, run_sliding

__version__ = "0.1.0"
